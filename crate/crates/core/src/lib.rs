//! Adaptive patched grid maps.
//!
//! Evidential (Dempster-Shafer) grid maps whose layout follows external
//! requirements: patches are allocated only where an information type is
//! needed, and every layer carries its own power-of-two resolution. Layers of
//! different resolution are brought together by merging or splitting cells in
//! measurement space before they are fused.
//!
//! Module map:
//!
//! * [`evidence`]: BBAs, belief/plausibility, Dempster combination,
//!   pignistic transform, discounting.
//! * [`grid`]: layers, patches, the grid map container, datum arithmetic,
//!   memory accounting and binary snapshots.
//! * [`sensor`]: measurement grids from point clouds and semantic labels.
//! * [`resample`]: cell merge/split operators and layer resampling.
//! * [`fusion`]: layer, patch and grid fusion plus temporal accumulation.
//! * [`requirements`]: requirement profiles and their realization on a map.

pub mod evidence;
pub mod fusion;
pub mod grid;
pub mod requirements;
pub mod resample;
pub mod sensor;

pub use evidence::{Bba, EvidenceError, Frame, HypothesisSet, ReliabilityFactor};
pub use grid::{
    CellIndex, GridError, GridGeometry, GridMap, Layer, Patch, PatchIndex, Point2, TypeTag,
};
