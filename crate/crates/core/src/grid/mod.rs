//! The adaptive patched grid map container.
//!
//! A [`GridMap`] is a sparse set of square [`Patch`]es anchored to a global
//! datum. Each patch holds at most one [`Layer`] per information type, and
//! each layer is a `2^r × 2^r` lattice of evidence cells. Layers of different
//! types (or of the same type in different patches) may use different
//! resolution steps `r`; powers of two keep every lattice nested inside the
//! finer ones.
//!
//! Cells are half-open squares `[datum, datum + width)` per axis, anchored at
//! their lower-left corner.

mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::evidence::{Bba, Frame};

pub use snapshot::{read_snapshot, write_snapshot, SnapshotError, SNAPSHOT_MAGIC};

/// Largest supported resolution step (`4^12` cells per layer).
pub const MAX_STEP: u8 = 12;
/// Patch edge length used throughout the default configuration.
pub const DEFAULT_EDGE_M: f64 = 12.8;
/// Bytes per stored mass value.
pub const BYTES_PER_MASS: usize = std::mem::size_of::<f32>();

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("patch edge length must be positive and finite, got {0}")]
    InvalidEdge(f64),
    #[error("resolution step {0} exceeds the supported maximum {MAX_STEP}")]
    StepOutOfRange(u8),
    #[error("cell ({a}, {b}) is outside a layer with step {step}")]
    CellOutOfBounds { a: u32, b: u32, step: u8 },
    #[error("point ({x}, {y}) lies outside the patch")]
    PointOutsidePatch { x: f64, y: f64 },
    #[error("{tag} layer already exists with step {existing}, requested {requested}")]
    ResolutionConflict {
        tag: TypeTag,
        existing: u8,
        requested: u8,
    },
    #[error("cell evidence is defined on a different frame than the {0} layer")]
    FrameMismatch(TypeTag),
    #[error("layer payload has {actual} masses, expected {expected}")]
    PayloadSize { expected: usize, actual: usize },
}

/// Position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Information type of a layer. Each type is bound to a fixed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeTag {
    Occupancy,
    Semantic,
}

impl TypeTag {
    pub const ALL: [TypeTag; 2] = [TypeTag::Occupancy, TypeTag::Semantic];

    pub fn frame(self) -> Frame {
        static OCCUPANCY: OnceLock<Frame> = OnceLock::new();
        static SEMANTIC: OnceLock<Frame> = OnceLock::new();
        match self {
            TypeTag::Occupancy => OCCUPANCY
                .get_or_init(|| Frame::new(occupancy::LABELS).expect("static frame"))
                .clone(),
            TypeTag::Semantic => SEMANTIC
                .get_or_init(|| Frame::new(semantic::LABELS).expect("static frame"))
                .clone(),
        }
    }

    /// Number of stored masses per cell.
    pub fn dim(self) -> usize {
        match self {
            TypeTag::Occupancy => occupancy::LABELS.len(),
            TypeTag::Semantic => semantic::LABELS.len(),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            TypeTag::Occupancy => 0,
            TypeTag::Semantic => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(TypeTag::Occupancy),
            1 => Some(TypeTag::Semantic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TypeTag::Occupancy => "occupancy",
            TypeTag::Semantic => "semantic",
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub mod occupancy {
    pub const LABELS: [&str; 2] = ["occupied", "free"];
    pub const OCCUPIED: usize = 0;
    pub const FREE: usize = 1;
}

pub mod semantic {
    pub const LABELS: [&str; 4] = ["road", "marking", "blocked", "unknown"];
    pub const ROAD: usize = 0;
    pub const MARKING: usize = 1;
    pub const BLOCKED: usize = 2;
    pub const UNKNOWN: usize = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PatchIndex {
    pub ix: i32,
    pub iy: i32,
}

impl PatchIndex {
    pub const fn new(ix: i32, iy: i32) -> Self {
        Self { ix, iy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CellIndex {
    pub a: u32,
    pub b: u32,
}

impl CellIndex {
    pub const fn new(a: u32, b: u32) -> Self {
        Self { a, b }
    }
}

/// Global datum and patch edge length shared by every map that is fused
/// together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub datum: Point2,
    pub edge: f64,
}

impl GridGeometry {
    pub fn new(datum: Point2, edge: f64) -> Result<Self, GridError> {
        if !edge.is_finite() || edge <= 0.0 {
            return Err(GridError::InvalidEdge(edge));
        }
        Ok(Self { datum, edge })
    }

    pub fn patch_datum(&self, index: PatchIndex) -> Point2 {
        Point2::new(
            self.datum.x + self.edge * index.ix as f64,
            self.datum.y + self.edge * index.iy as f64,
        )
    }

    pub fn cell_size(&self, step: u8) -> f64 {
        self.edge / (1u64 << step) as f64
    }

    pub fn cell_datum(
        &self,
        patch: PatchIndex,
        step: u8,
        cell: CellIndex,
    ) -> Result<Point2, GridError> {
        check_cell(step, cell)?;
        let d = self.patch_datum(patch);
        let w = self.cell_size(step);
        Ok(Point2::new(
            d.x + w * cell.a as f64,
            d.y + w * cell.b as f64,
        ))
    }

    pub fn patch_index_of(&self, point: Point2) -> PatchIndex {
        PatchIndex::new(
            ((point.x - self.datum.x) / self.edge).floor() as i32,
            ((point.y - self.datum.y) / self.edge).floor() as i32,
        )
    }

    /// Index of the cell containing `point` on the global lattice of step `r`.
    pub fn global_cell_of(&self, point: Point2, step: u8) -> (i64, i64) {
        let w = self.cell_size(step);
        (
            ((point.x - self.datum.x) / w).floor() as i64,
            ((point.y - self.datum.y) / w).floor() as i64,
        )
    }

    /// Splits a global cell coordinate into its patch and in-patch cell.
    pub fn split_global(&self, global: (i64, i64), step: u8) -> (PatchIndex, CellIndex) {
        let side = 1i64 << step;
        (
            PatchIndex::new(
                global.0.div_euclid(side) as i32,
                global.1.div_euclid(side) as i32,
            ),
            CellIndex::new(
                global.0.rem_euclid(side) as u32,
                global.1.rem_euclid(side) as u32,
            ),
        )
    }

    pub fn locate(&self, point: Point2, step: u8) -> (PatchIndex, CellIndex) {
        self.split_global(self.global_cell_of(point, step), step)
    }

    /// Closest distance from `point` to the square of patch `index`.
    pub fn distance_to_patch(&self, point: Point2, index: PatchIndex) -> f64 {
        let d = self.patch_datum(index);
        let dx = (d.x - point.x).max(point.x - (d.x + self.edge)).max(0.0);
        let dy = (d.y - point.y).max(point.y - (d.y + self.edge)).max(0.0);
        dx.hypot(dy)
    }
}

fn check_step(step: u8) -> Result<(), GridError> {
    if step > MAX_STEP {
        Err(GridError::StepOutOfRange(step))
    } else {
        Ok(())
    }
}

fn check_cell(step: u8, cell: CellIndex) -> Result<(), GridError> {
    check_step(step)?;
    let side = 1u32 << step;
    if cell.a >= side || cell.b >= side {
        return Err(GridError::CellOutOfBounds {
            a: cell.a,
            b: cell.b,
            step,
        });
    }
    Ok(())
}

/// Cell of a layer with step `r` that contains `point`, given the patch datum.
///
/// Offsets within a relative `1e-9` of the patch border are clamped onto the
/// border cells; anything further out is rejected.
pub fn cell_index_of(
    point: Point2,
    patch_datum: Point2,
    edge: f64,
    step: u8,
) -> Result<CellIndex, GridError> {
    check_step(step)?;
    let slack = edge * 1e-9;
    let off = point - patch_datum;
    if off.x < -slack || off.y < -slack || off.x > edge + slack || off.y > edge + slack {
        return Err(GridError::PointOutsidePatch {
            x: point.x,
            y: point.y,
        });
    }
    let side = 1u64 << step;
    let max = (side - 1) as f64;
    let scale = side as f64 / edge;
    Ok(CellIndex::new(
        (off.x * scale).floor().clamp(0.0, max) as u32,
        (off.y * scale).floor().clamp(0.0, max) as u32,
    ))
}

/// Row-major `2^r × 2^r` lattice of evidence cells of one type.
///
/// Only singleton masses are stored (as `f32`); `m(Ω)` is implicit as
/// `1 - Σ`. A zeroed cell is the vacuous BBA.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    tag: TypeTag,
    step: u8,
    masses: Vec<f32>,
}

impl Layer {
    pub fn vacuous(tag: TypeTag, step: u8) -> Result<Self, GridError> {
        check_step(step)?;
        let cells = 1usize << (2 * step as usize);
        Ok(Self {
            tag,
            step,
            masses: vec![0.0; cells * tag.dim()],
        })
    }

    /// Wraps a raw mass array. `masses.len()` must equal `4^r · dim`.
    pub fn from_masses(tag: TypeTag, step: u8, masses: Vec<f32>) -> Result<Self, GridError> {
        check_step(step)?;
        let expected = (1usize << (2 * step as usize)) * tag.dim();
        if masses.len() != expected {
            return Err(GridError::PayloadSize {
                expected,
                actual: masses.len(),
            });
        }
        Ok(Self { tag, step, masses })
    }

    pub fn tag(&self) -> TypeTag {
        self.tag
    }

    pub fn step(&self) -> u8 {
        self.step
    }

    pub fn side(&self) -> u32 {
        1 << self.step
    }

    pub fn cell_count(&self) -> usize {
        1 << (2 * self.step as usize)
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn payload_bytes(&self) -> usize {
        self.masses.len() * BYTES_PER_MASS
    }

    pub fn masses(&self) -> &[f32] {
        &self.masses
    }

    pub fn masses_mut(&mut self) -> &mut [f32] {
        &mut self.masses
    }

    pub fn linear_index(&self, cell: CellIndex) -> usize {
        cell.b as usize * self.side() as usize + cell.a as usize
    }

    pub fn cell_masses(&self, cell: CellIndex) -> Result<&[f32], GridError> {
        check_cell(self.step, cell)?;
        let d = self.dim();
        let i = self.linear_index(cell) * d;
        Ok(&self.masses[i..i + d])
    }

    pub fn cell(&self, cell: CellIndex) -> Result<Bba, GridError> {
        let m = self.cell_masses(cell)?;
        Ok(Bba::from_stored(
            self.tag.frame(),
            m.iter().map(|&v| v as f64),
        ))
    }

    pub fn set_cell(&mut self, cell: CellIndex, bba: &Bba) -> Result<(), GridError> {
        if *bba.frame() != self.tag.frame() {
            return Err(GridError::FrameMismatch(self.tag));
        }
        self.set_cell_masses(cell, bba.singletons())
    }

    pub fn set_cell_masses(
        &mut self,
        cell: CellIndex,
        singletons: &[f64],
    ) -> Result<(), GridError> {
        check_cell(self.step, cell)?;
        let d = self.dim();
        if singletons.len() != d {
            return Err(GridError::FrameMismatch(self.tag));
        }
        let i = self.linear_index(cell) * d;
        for (dst, &src) in self.masses[i..i + d].iter_mut().zip(singletons) {
            *dst = src as f32;
        }
        Ok(())
    }

    /// Iterates `(cell, stored masses)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (CellIndex, &[f32])> + '_ {
        let side = self.side();
        self.masses
            .chunks_exact(self.dim())
            .enumerate()
            .map(move |(i, m)| (CellIndex::new(i as u32 % side, i as u32 / side), m))
    }

    pub fn is_vacuous(&self) -> bool {
        self.masses.iter().all(|&m| m == 0.0)
    }
}

/// Square sub-map holding at most one layer per type.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    index: PatchIndex,
    layers: BTreeMap<TypeTag, Layer>,
}

impl Patch {
    pub fn new(index: PatchIndex) -> Self {
        Self {
            index,
            layers: BTreeMap::new(),
        }
    }

    pub fn index(&self) -> PatchIndex {
        self.index
    }

    pub fn layer(&self, tag: TypeTag) -> Option<&Layer> {
        self.layers.get(&tag)
    }

    pub fn layer_mut(&mut self, tag: TypeTag) -> Option<&mut Layer> {
        self.layers.get_mut(&tag)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> + '_ {
        self.layers.values()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> + '_ {
        self.layers.values_mut()
    }

    /// Inserts `layer`, returning the previous layer of the same type.
    pub fn insert_layer(&mut self, layer: Layer) -> Option<Layer> {
        self.layers.insert(layer.tag(), layer)
    }

    pub fn remove_layer(&mut self, tag: TypeTag) -> Option<Layer> {
        self.layers.remove(&tag)
    }

    pub fn retain_layers(&mut self, f: impl FnMut(&TypeTag, &mut Layer) -> bool) {
        self.layers.retain(f);
    }

    /// Types for which this patch has a layer.
    pub fn type_set(&self) -> BTreeSet<TypeTag> {
        self.layers.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn cell_count(&self, filter: Option<TypeTag>) -> usize {
        self.layers
            .values()
            .filter(|l| filter.is_none_or(|t| t == l.tag()))
            .map(Layer::cell_count)
            .sum()
    }

    pub fn memory_bytes(&self, filter: Option<TypeTag>) -> usize {
        self.layers
            .values()
            .filter(|l| filter.is_none_or(|t| t == l.tag()))
            .map(Layer::payload_bytes)
            .sum()
    }
}

/// Sparse collection of patches with a global datum and fixed edge length.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    geometry: GridGeometry,
    patches: BTreeMap<PatchIndex, Patch>,
}

impl GridMap {
    pub fn new(datum: Point2, edge: f64) -> Result<Self, GridError> {
        Ok(Self::with_geometry(GridGeometry::new(datum, edge)?))
    }

    pub fn with_geometry(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            patches: BTreeMap::new(),
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn datum(&self) -> Point2 {
        self.geometry.datum
    }

    pub fn edge(&self) -> f64 {
        self.geometry.edge
    }

    pub fn patch_datum(&self, index: PatchIndex) -> Point2 {
        self.geometry.patch_datum(index)
    }

    pub fn cell_datum(
        &self,
        patch: PatchIndex,
        step: u8,
        cell: CellIndex,
    ) -> Result<Point2, GridError> {
        self.geometry.cell_datum(patch, step, cell)
    }

    pub fn patch_index_of(&self, point: Point2) -> PatchIndex {
        self.geometry.patch_index_of(point)
    }

    pub fn patch(&self, index: PatchIndex) -> Option<&Patch> {
        self.patches.get(&index)
    }

    pub fn patch_mut(&mut self, index: PatchIndex) -> Option<&mut Patch> {
        self.patches.get_mut(&index)
    }

    pub fn patches(&self) -> impl Iterator<Item = &Patch> + '_ {
        self.patches.values()
    }

    pub fn patches_mut(&mut self) -> impl Iterator<Item = &mut Patch> + '_ {
        self.patches.values_mut()
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Indices for which a patch exists.
    pub fn index_set(&self) -> BTreeSet<PatchIndex> {
        self.patches.keys().copied().collect()
    }

    /// Inserts `patch`, replacing (and returning) any patch with the same index.
    pub fn insert_patch(&mut self, patch: Patch) -> Option<Patch> {
        self.patches.insert(patch.index(), patch)
    }

    pub fn remove_patch(&mut self, index: PatchIndex) -> Option<Patch> {
        self.patches.remove(&index)
    }

    pub fn retain_patches(&mut self, mut f: impl FnMut(&mut Patch) -> bool) {
        self.patches.retain(|_, p| f(p));
    }

    /// Returns the layer of `tag` in patch `index`, allocating the patch and a
    /// vacuous layer on first use. An existing layer keeps its step; asking
    /// for a different one is a [`GridError::ResolutionConflict`].
    pub fn get_or_create_layer(
        &mut self,
        index: PatchIndex,
        tag: TypeTag,
        step: u8,
    ) -> Result<&mut Layer, GridError> {
        check_step(step)?;
        let patch = self
            .patches
            .entry(index)
            .or_insert_with(|| Patch::new(index));
        match patch.layers.entry(tag) {
            std::collections::btree_map::Entry::Occupied(e) => {
                let existing = e.get().step();
                if existing != step {
                    return Err(GridError::ResolutionConflict {
                        tag,
                        existing,
                        requested: step,
                    });
                }
                Ok(e.into_mut())
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                Ok(e.insert(Layer::vacuous(tag, step)?))
            }
        }
    }

    /// Number of allocated cells, optionally restricted to one type.
    pub fn cell_count(&self, filter: Option<TypeTag>) -> usize {
        self.patches.values().map(|p| p.cell_count(filter)).sum()
    }

    /// Payload bytes of all layers: `4^r · |Ω| · 4` per layer.
    pub fn memory_bytes(&self) -> usize {
        self.memory_bytes_of(None)
    }

    pub fn memory_bytes_of(&self, filter: Option<TypeTag>) -> usize {
        self.patches.values().map(|p| p.memory_bytes(filter)).sum()
    }

    /// Approximate bookkeeping cost of the containers, excluded from
    /// [`memory_bytes`](Self::memory_bytes).
    pub fn container_overhead_bytes(&self) -> usize {
        let per_patch = std::mem::size_of::<PatchIndex>() + std::mem::size_of::<Patch>();
        let per_layer = std::mem::size_of::<TypeTag>() + std::mem::size_of::<Layer>();
        let layers: usize = self.patches.values().map(|p| p.layers.len()).sum();
        std::mem::size_of::<Self>() + self.patches.len() * per_patch + layers * per_layer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(p: Point2, x: f64, y: f64) -> bool {
        (p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9
    }

    fn grid() -> GridMap {
        GridMap::new(Point2::default(), DEFAULT_EDGE_M).unwrap()
    }

    #[test]
    fn patch_datum_examples() {
        let g = grid();
        assert!(close(g.patch_datum(PatchIndex::new(1, 0)), 12.8, 0.0));
        assert!(close(g.patch_datum(PatchIndex::new(0, 0)), 0.0, 0.0));
        let utm = GridMap::new(Point2::new(500000.0, 5300000.0), 12.8).unwrap();
        assert!(close(
            utm.patch_datum(PatchIndex::new(-1, 2)),
            499987.2,
            5300025.6
        ));
    }

    #[test]
    fn cell_datum_examples() {
        let g = grid();
        let p = PatchIndex::new(0, 0);
        assert!(close(
            g.cell_datum(p, 7, CellIndex::new(1, 0)).unwrap(),
            0.1,
            0.0
        ));
        assert!(close(
            g.cell_datum(p, 7, CellIndex::new(0, 0)).unwrap(),
            0.0,
            0.0
        ));
        assert!(close(
            g.cell_datum(p, 6, CellIndex::new(63, 63)).unwrap(),
            12.6,
            12.6
        ));
        assert!(matches!(
            g.cell_datum(p, 6, CellIndex::new(64, 0)),
            Err(GridError::CellOutOfBounds { .. })
        ));
    }

    #[test]
    fn patch_index_of_examples() {
        let g = grid();
        assert_eq!(
            g.patch_index_of(Point2::new(12.8, 0.0)),
            PatchIndex::new(1, 0)
        );
        assert_eq!(
            g.patch_index_of(Point2::new(-0.1, 0.0)),
            PatchIndex::new(-1, 0)
        );
        assert_eq!(
            g.patch_index_of(Point2::new(5.0, 5.0)),
            PatchIndex::new(0, 0)
        );
    }

    #[test]
    fn cell_index_of_examples() {
        let d = Point2::new(0.0, 0.0);
        assert_eq!(cell_index_of(d, d, 12.8, 7).unwrap(), CellIndex::new(0, 0));
        assert_eq!(
            cell_index_of(Point2::new(0.15, 0.05), d, 12.8, 7).unwrap(),
            CellIndex::new(1, 0)
        );
        assert_eq!(
            cell_index_of(Point2::new(12.79, 12.79), d, 12.8, 7).unwrap(),
            CellIndex::new(127, 127)
        );
        assert!(matches!(
            cell_index_of(Point2::new(13.5, 1.0), d, 12.8, 7),
            Err(GridError::PointOutsidePatch { .. })
        ));
    }

    #[test]
    fn lazy_layer_allocation() {
        let mut g = grid();
        let idx = PatchIndex::new(0, 0);
        let layer = g.get_or_create_layer(idx, TypeTag::Occupancy, 7).unwrap();
        assert_eq!(layer.cell_count(), 16384);
        assert!(layer.is_vacuous());
        layer
            .set_cell_masses(CellIndex::new(3, 4), &[0.5, 0.0])
            .unwrap();

        // idempotent: same layer, contents kept
        let again = g.get_or_create_layer(idx, TypeTag::Occupancy, 7).unwrap();
        assert_eq!(
            again.cell_masses(CellIndex::new(3, 4)).unwrap(),
            &[0.5, 0.0]
        );

        assert_eq!(
            g.get_or_create_layer(idx, TypeTag::Occupancy, 6)
                .unwrap_err(),
            GridError::ResolutionConflict {
                tag: TypeTag::Occupancy,
                existing: 7,
                requested: 6
            }
        );
        assert_eq!(g.patch_count(), 1);
    }

    #[test]
    fn cell_count_and_memory() {
        let mut g = grid();
        assert_eq!(g.cell_count(None), 0);
        assert_eq!(g.memory_bytes(), 0);

        g.get_or_create_layer(PatchIndex::new(0, 0), TypeTag::Occupancy, 7)
            .unwrap();
        assert_eq!(g.cell_count(None), 16384);
        assert_eq!(g.memory_bytes(), 131072);

        g.get_or_create_layer(PatchIndex::new(1, 0), TypeTag::Occupancy, 6)
            .unwrap();
        assert_eq!(g.cell_count(Some(TypeTag::Occupancy)), 20480);

        let mut s = grid();
        s.get_or_create_layer(PatchIndex::new(0, 0), TypeTag::Semantic, 6)
            .unwrap();
        assert_eq!(s.memory_bytes(), 65536);
        assert_eq!(s.cell_count(Some(TypeTag::Occupancy)), 0);

        let removed = g.remove_patch(PatchIndex::new(1, 0)).unwrap();
        assert_eq!(removed.cell_count(None), 4096);
        assert_eq!(g.cell_count(None), 16384);
    }

    #[test]
    fn layer_cell_roundtrip_through_bba() {
        let mut layer = Layer::vacuous(TypeTag::Occupancy, 2).unwrap();
        let bba = Bba::new(TypeTag::Occupancy.frame(), &[0.25, 0.5]).unwrap();
        layer.set_cell(CellIndex::new(1, 2), &bba).unwrap();
        let back = layer.cell(CellIndex::new(1, 2)).unwrap();
        assert!((back.omega() - 0.25).abs() < 1e-7);
        let sem = Bba::vacuous(TypeTag::Semantic.frame());
        assert_eq!(
            layer.set_cell(CellIndex::new(0, 0), &sem),
            Err(GridError::FrameMismatch(TypeTag::Occupancy))
        );
    }

    #[test]
    fn rejects_bad_edge_and_step() {
        assert!(GridMap::new(Point2::default(), 0.0).is_err());
        assert!(GridMap::new(Point2::default(), f64::NAN).is_err());
        assert_eq!(
            Layer::vacuous(TypeTag::Occupancy, MAX_STEP + 1),
            Err(GridError::StepOutOfRange(MAX_STEP + 1))
        );
    }

    #[test]
    fn global_cells_split_across_patches() {
        let g = grid().geometry();
        let (p, c) = g.locate(Point2::new(-0.05, 12.85), 7);
        assert_eq!(p, PatchIndex::new(-1, 1));
        assert_eq!(c, CellIndex::new(127, 0));
    }

    #[test]
    fn distance_to_patch_square() {
        let g = grid().geometry();
        let inside = g.distance_to_patch(Point2::new(3.0, 3.0), PatchIndex::new(0, 0));
        assert_eq!(inside, 0.0);
        let d = g.distance_to_patch(Point2::new(-3.0, -4.0), PatchIndex::new(0, 0));
        assert!((d - 5.0).abs() < 1e-12);
    }
}
