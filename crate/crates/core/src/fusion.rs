//! Layer, patch and grid fusion.
//!
//! Fusion works bottom-up. Same-type layers of one patch are resampled to a
//! common step `r_fused = min(r_req, max available step)` and combined cell by
//! cell with the type's cell operator. A fused patch holds one layer per type
//! present in any input, and a fused grid holds one patch per index present
//! in any input.
//!
//! Cross-sensor cell fusion uses Dempster's rule: one source reporting
//! "occupied" and another "free" for the same area is genuine disagreement,
//! and renormalizing the conflict away is intended. This is different from
//! resampling, where neighboring cells describe different areas and are
//! merged in measurement space instead (see [`crate::resample`]).
//!
//! # Concurrency
//!
//! [`fuse_grids`] processes patch indices in parallel. Each index is fused by
//! exactly one worker, which exclusively owns the output patch for that
//! index; inputs are only read. Fused results are fresh values and never
//! alias an input.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::evidence::{combine_masses, Bba, EvidenceError, ReliabilityFactor};
use crate::grid::{GridGeometry, GridMap, Layer, Patch, PatchIndex, TypeTag};
use crate::requirements::{patch_in_horizon, RequirementProfile};
use crate::resample::{resample_layer, ResampleError, ResamplerRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("nothing to fuse")]
    EmptyInput,
    #[error("no cell fusion operator registered for {0}")]
    UnsupportedType(TypeTag),
    #[error("grid maps use different datums")]
    DatumMismatch,
    #[error("grid maps use different patch edge lengths")]
    EdgeMismatch,
    #[error("layers of different types cannot be fused")]
    TypeMismatch,
    #[error("patches with different indices cannot be fused")]
    IndexMismatch,
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// What to do when two cells are in total conflict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConflictFallback {
    /// Reset the cell to vacuous and continue with the remaining inputs.
    #[default]
    Vacuous,
    /// Ignore the conflicting input and keep the accumulated evidence.
    KeepAccumulated,
}

/// Cell operator `f_t` of one type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellOperator {
    #[default]
    Dempster,
}

#[derive(Debug, Clone)]
pub struct FusionPolicy {
    pub operators: BTreeMap<TypeTag, CellOperator>,
    /// Required step per type; types without an entry keep the finest input.
    pub required_steps: BTreeMap<TypeTag, u8>,
    /// Temporal discount applied to the previous map per update; 1 keeps it
    /// unchanged, 0 forgets it.
    pub alpha_age: ReliabilityFactor,
    pub fallback: ConflictFallback,
    pub resamplers: ResamplerRegistry,
}

pub const DEFAULT_ALPHA_AGE: f64 = 0.95;

impl Default for FusionPolicy {
    fn default() -> Self {
        Self {
            operators: TypeTag::ALL
                .into_iter()
                .map(|t| (t, CellOperator::Dempster))
                .collect(),
            required_steps: BTreeMap::new(),
            alpha_age: ReliabilityFactor::new(DEFAULT_ALPHA_AGE).expect("constant in range"),
            fallback: ConflictFallback::Vacuous,
            resamplers: ResamplerRegistry::default(),
        }
    }
}

impl FusionPolicy {
    /// Takes the required steps of every active type from `profile`.
    pub fn with_profile(mut self, profile: &RequirementProfile, edge: f64) -> Self {
        self.required_steps = profile
            .active_types()
            .filter_map(|t| profile.required_step(t, edge).map(|r| (t, r)))
            .collect();
        self
    }

    fn operator(&self, tag: TypeTag) -> Result<CellOperator, FusionError> {
        self.operators
            .get(&tag)
            .copied()
            .ok_or(FusionError::UnsupportedType(tag))
    }
}

/// Result of a fusion step together with the number of total-conflict events.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused<T> {
    pub value: T,
    pub conflicts: usize,
}

/// Left fold of Dempster's rule over `cells`.
pub fn fuse_cells(cells: &[Bba], fallback: ConflictFallback) -> Result<Fused<Bba>, FusionError> {
    let (first, rest) = cells.split_first().ok_or(FusionError::EmptyInput)?;
    let mut acc = first.clone();
    let mut conflicts = 0;
    for cell in rest {
        match acc.combine(cell) {
            Ok((next, _)) => acc = next,
            Err(EvidenceError::TotalConflict(_)) => {
                conflicts += 1;
                if fallback == ConflictFallback::Vacuous {
                    acc = Bba::vacuous(acc.frame().clone());
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Fused {
        value: acc,
        conflicts,
    })
}

/// [`fuse_cells`] restricted to occupancy BBAs.
pub fn fuse_cells_occ(
    cells: &[Bba],
    fallback: ConflictFallback,
) -> Result<Fused<Bba>, FusionError> {
    let frame = TypeTag::Occupancy.frame();
    if cells.iter().any(|c| *c.frame() != frame) {
        return Err(EvidenceError::FrameMismatch.into());
    }
    fuse_cells(cells, fallback)
}

/// Step used when fusing layers of the given steps.
pub fn fused_step(required: Option<u8>, available: impl IntoIterator<Item = u8>) -> Option<u8> {
    let max = available.into_iter().max()?;
    Some(required.map_or(max, |r| r.min(max)))
}

/// Fuses same-type layers of one patch footprint.
pub fn fuse_layers(
    layers: &[&Layer],
    required_step: Option<u8>,
    policy: &FusionPolicy,
) -> Result<Fused<Layer>, FusionError> {
    let first = layers.first().ok_or(FusionError::EmptyInput)?;
    let tag = first.tag();
    if layers.iter().any(|l| l.tag() != tag) {
        return Err(FusionError::TypeMismatch);
    }
    let CellOperator::Dempster = policy.operator(tag)?;
    let step = fused_step(required_step, layers.iter().map(|l| l.step())).expect("non-empty input");
    let resampled = layers
        .iter()
        .map(|l| resample_layer(l, step, &policy.resamplers))
        .collect::<Result<Vec<_>, _>>()?;
    let mut iter = resampled.into_iter();
    let mut out = iter.next().expect("non-empty input").into_owned();
    let dim = out.dim();
    let mut conflicts = 0;
    let mut acc = vec![0.0f64; dim];
    let mut other = vec![0.0f64; dim];
    let mut res = vec![0.0f64; dim];
    for layer in iter {
        for (dst, src) in out
            .masses_mut()
            .chunks_exact_mut(dim)
            .zip(layer.masses().chunks_exact(dim))
        {
            if src.iter().all(|&m| m == 0.0) {
                continue;
            }
            if dst.iter().all(|&m| m == 0.0) {
                dst.copy_from_slice(src);
                continue;
            }
            for (a, &m) in acc.iter_mut().zip(dst.iter()) {
                *a = m as f64;
            }
            for (b, &m) in other.iter_mut().zip(src) {
                *b = m as f64;
            }
            let a_omega = (1.0 - acc.iter().sum::<f64>()).max(0.0);
            let b_omega = (1.0 - other.iter().sum::<f64>()).max(0.0);
            match combine_masses(&acc, a_omega, &other, b_omega, &mut res) {
                Ok(_) => {
                    for (d, &m) in dst.iter_mut().zip(&res) {
                        *d = m as f32;
                    }
                }
                Err(_) => {
                    conflicts += 1;
                    if policy.fallback == ConflictFallback::Vacuous {
                        dst.iter_mut().for_each(|m| *m = 0.0);
                    }
                }
            }
        }
    }
    Ok(Fused {
        value: out,
        conflicts,
    })
}

/// Fuses patches that share one index. The output has a layer for every type
/// present in any input.
pub fn fuse_patches(
    patches: &[&Patch],
    policy: &FusionPolicy,
) -> Result<Fused<Patch>, FusionError> {
    let index = patches.first().ok_or(FusionError::EmptyInput)?.index();
    if patches.iter().any(|p| p.index() != index) {
        return Err(FusionError::IndexMismatch);
    }
    let types: BTreeSet<TypeTag> = patches.iter().flat_map(|p| p.type_set()).collect();
    let mut out = Patch::new(index);
    let mut conflicts = 0;
    for tag in types {
        let layers: Vec<&Layer> = patches.iter().filter_map(|p| p.layer(tag)).collect();
        let fused = fuse_layers(&layers, policy.required_steps.get(&tag).copied(), policy)?;
        conflicts += fused.conflicts;
        out.insert_layer(fused.value);
    }
    Ok(Fused {
        value: out,
        conflicts,
    })
}

fn check_geometry(a: &GridGeometry, b: &GridGeometry) -> Result<(), FusionError> {
    if a.datum != b.datum {
        return Err(FusionError::DatumMismatch);
    }
    if a.edge != b.edge {
        return Err(FusionError::EdgeMismatch);
    }
    Ok(())
}

/// Fuses grid maps with identical datum and edge length.
pub fn fuse_grids(
    grids: &[&GridMap],
    policy: &FusionPolicy,
) -> Result<Fused<GridMap>, FusionError> {
    let geometry = grids.first().ok_or(FusionError::EmptyInput)?.geometry();
    for g in grids {
        check_geometry(&geometry, &g.geometry())?;
    }
    let indices: Vec<PatchIndex> = grids
        .iter()
        .flat_map(|g| g.index_set())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let fused: Vec<Fused<Patch>> = indices
        .par_iter()
        .map(|&index| {
            let patches: Vec<&Patch> = grids.iter().filter_map(|g| g.patch(index)).collect();
            fuse_patches(&patches, policy)
        })
        .collect::<Result<_, _>>()?;
    let mut out = GridMap::with_geometry(geometry);
    let mut conflicts = 0;
    for f in fused {
        conflicts += f.conflicts;
        out.insert_patch(f.value);
    }
    Ok(Fused {
        value: out,
        conflicts,
    })
}

/// Discounts every cell of `grid` by `alpha`, dropping layers that end up
/// vacuous and patches that end up empty.
pub fn discount_grid(grid: &GridMap, alpha: ReliabilityFactor) -> GridMap {
    let mut out = grid.clone();
    let a = alpha.value() as f32;
    out.retain_patches(|patch| {
        patch.retain_layers(|_, layer| {
            // Scaling the singletons moves the released mass to the implicit Ω.
            layer.masses_mut().iter_mut().for_each(|m| *m *= a);
            !layer.is_vacuous()
        });
        !patch.is_empty()
    });
    out
}

/// One temporal accumulation step: the previous map is aged by
/// `policy.alpha_age` and fused with the current measurement fusion. With a
/// profile, patches that left every type's horizon are dropped afterwards.
pub fn temporal_update(
    previous: &GridMap,
    current: &GridMap,
    policy: &FusionPolicy,
    profile: Option<&RequirementProfile>,
) -> Result<Fused<GridMap>, FusionError> {
    check_geometry(&previous.geometry(), &current.geometry())?;
    let aged = discount_grid(previous, policy.alpha_age);
    let mut fused = fuse_grids(&[&aged, current], policy)?;
    if let Some(profile) = profile {
        let geometry = fused.value.geometry();
        fused.value.retain_patches(|patch| {
            let index = patch.index();
            patch.retain_layers(|&tag, _| patch_in_horizon(&geometry, index, profile, tag));
            !patch.is_empty()
        });
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellIndex, Point2};

    fn occ(o: f64, f: f64) -> Bba {
        Bba::new(TypeTag::Occupancy.frame(), &[o, f]).unwrap()
    }

    fn grid() -> GridMap {
        GridMap::new(Point2::default(), 12.8).unwrap()
    }

    fn uniform_layer(tag: TypeTag, step: u8, masses: &[f32]) -> Layer {
        let mut l = Layer::vacuous(tag, step).unwrap();
        for cell in l.masses_mut().chunks_exact_mut(masses.len()) {
            cell.copy_from_slice(masses);
        }
        l
    }

    #[test]
    fn fuse_cells_examples() {
        let x = occ(0.3, 0.4);
        let r = fuse_cells_occ(
            &[Bba::vacuous(TypeTag::Occupancy.frame()), x.clone()],
            ConflictFallback::Vacuous,
        )
        .unwrap();
        assert_eq!(r.conflicts, 0);
        for (a, b) in r.value.singletons().iter().zip(x.singletons()) {
            assert!((a - b).abs() < 1e-12);
        }

        let r = fuse_cells_occ(&[occ(0.9, 0.0), occ(0.0, 0.9)], ConflictFallback::Vacuous).unwrap();
        assert!((r.value.singleton(0) - 0.4737).abs() < 1e-4);
        assert!((r.value.singleton(1) - 0.4737).abs() < 1e-4);
        assert!((r.value.omega() - 0.0526).abs() < 1e-4);

        let r = fuse_cells_occ(&[occ(1.0, 0.0), occ(0.0, 1.0)], ConflictFallback::Vacuous).unwrap();
        assert!(r.value.is_vacuous());
        assert_eq!(r.conflicts, 1);

        let r = fuse_cells_occ(
            &[occ(1.0, 0.0), occ(0.0, 1.0)],
            ConflictFallback::KeepAccumulated,
        )
        .unwrap();
        assert_eq!(r.value.singleton(0), 1.0);
        assert_eq!(
            fuse_cells(&[], ConflictFallback::Vacuous),
            Err(FusionError::EmptyInput)
        );
    }

    #[test]
    fn fused_step_rule() {
        assert_eq!(fused_step(Some(7), [5, 6]), Some(6));
        assert_eq!(fused_step(Some(6), [7]), Some(6));
        assert_eq!(fused_step(None, [3, 5]), Some(5));
        assert_eq!(fused_step(Some(3), []), None);
    }

    #[test]
    fn fuse_layers_steps() {
        let policy = FusionPolicy::default();
        let a = Layer::vacuous(TypeTag::Occupancy, 5).unwrap();
        let b = Layer::vacuous(TypeTag::Occupancy, 6).unwrap();
        assert_eq!(
            fuse_layers(&[&a, &b], Some(7), &policy)
                .unwrap()
                .value
                .step(),
            6
        );
        let c = Layer::vacuous(TypeTag::Occupancy, 7).unwrap();
        assert_eq!(
            fuse_layers(&[&c], Some(6), &policy).unwrap().value.step(),
            6
        );

        let mut d = Layer::vacuous(TypeTag::Occupancy, 4).unwrap();
        d.set_cell_masses(CellIndex::new(3, 9), &[0.25, 0.5])
            .unwrap();
        assert_eq!(fuse_layers(&[&d], Some(4), &policy).unwrap().value, d);

        let s = Layer::vacuous(TypeTag::Semantic, 4).unwrap();
        assert_eq!(
            fuse_layers(&[&d, &s], Some(4), &policy).unwrap_err(),
            FusionError::TypeMismatch
        );
        let mut no_ops = FusionPolicy::default();
        no_ops.operators.clear();
        assert_eq!(
            fuse_layers(&[&d], None, &no_ops).unwrap_err(),
            FusionError::UnsupportedType(TypeTag::Occupancy)
        );
    }

    #[test]
    fn fuse_layers_combines_cells() {
        let policy = FusionPolicy::default();
        let a = uniform_layer(TypeTag::Occupancy, 2, &[0.9, 0.0]);
        let b = uniform_layer(TypeTag::Occupancy, 2, &[0.0, 0.9]);
        let f = fuse_layers(&[&a, &b], None, &policy).unwrap();
        for (_, m) in f.value.cells() {
            assert!((m[0] as f64 - 9.0 / 19.0).abs() < 1e-6);
            assert!((m[1] as f64 - 9.0 / 19.0).abs() < 1e-6);
        }
        let c = uniform_layer(TypeTag::Occupancy, 2, &[1.0, 0.0]);
        let d = uniform_layer(TypeTag::Occupancy, 2, &[0.0, 1.0]);
        let f = fuse_layers(&[&c, &d], None, &policy).unwrap();
        assert_eq!(f.conflicts, 16);
        assert!(f.value.is_vacuous());
    }

    #[test]
    fn fuse_patches_union_of_types() {
        let policy = FusionPolicy::default();
        let idx = PatchIndex::new(0, 0);
        let mut occ_patch = Patch::new(idx);
        occ_patch.insert_layer(Layer::vacuous(TypeTag::Occupancy, 3).unwrap());
        let mut sem_patch = Patch::new(idx);
        sem_patch.insert_layer(Layer::vacuous(TypeTag::Semantic, 2).unwrap());
        let f = fuse_patches(&[&occ_patch, &sem_patch], &policy).unwrap();
        assert_eq!(
            f.value.type_set(),
            [TypeTag::Occupancy, TypeTag::Semantic]
                .into_iter()
                .collect()
        );
        let empty = Patch::new(idx);
        assert!(fuse_patches(&[&empty], &policy).unwrap().value.is_empty());
        let other = Patch::new(PatchIndex::new(1, 0));
        assert_eq!(
            fuse_patches(&[&empty, &other], &policy).unwrap_err(),
            FusionError::IndexMismatch
        );
    }

    #[test]
    fn fuse_patches_upsamples_to_required() {
        let mut policy = FusionPolicy::default();
        policy.required_steps.insert(TypeTag::Occupancy, 7);
        let idx = PatchIndex::new(0, 0);
        let mut a = Patch::new(idx);
        a.insert_layer(Layer::vacuous(TypeTag::Occupancy, 7).unwrap());
        let mut b = Patch::new(idx);
        b.insert_layer(Layer::vacuous(TypeTag::Occupancy, 6).unwrap());
        let f = fuse_patches(&[&a, &b], &policy).unwrap();
        assert_eq!(f.value.layer(TypeTag::Occupancy).unwrap().step(), 7);
    }

    #[test]
    fn fuse_grids_union_and_checks() {
        let policy = FusionPolicy::default();
        let mut a = grid();
        a.get_or_create_layer(PatchIndex::new(0, 0), TypeTag::Occupancy, 2)
            .unwrap();
        let mut b = grid();
        b.get_or_create_layer(PatchIndex::new(5, -3), TypeTag::Occupancy, 2)
            .unwrap();
        let f = fuse_grids(&[&a, &b], &policy).unwrap();
        assert_eq!(f.value.patch_count(), 2);
        assert_eq!(fuse_grids(&[&a], &policy).unwrap().value, a);

        let shifted = GridMap::new(Point2::new(1.0, 0.0), 12.8).unwrap();
        assert_eq!(
            fuse_grids(&[&a, &shifted], &policy).unwrap_err(),
            FusionError::DatumMismatch
        );
        let wider = GridMap::new(Point2::default(), 25.6).unwrap();
        assert_eq!(
            fuse_grids(&[&a, &wider], &policy).unwrap_err(),
            FusionError::EdgeMismatch
        );
        assert_eq!(
            fuse_grids(&[], &policy).unwrap_err(),
            FusionError::EmptyInput
        );
    }

    #[test]
    fn temporal_examples() {
        let mut prev = grid();
        prev.get_or_create_layer(PatchIndex::new(0, 0), TypeTag::Occupancy, 2)
            .unwrap()
            .set_cell_masses(CellIndex::new(1, 1), &[0.9, 0.0])
            .unwrap();
        let mut cur = grid();
        cur.get_or_create_layer(PatchIndex::new(1, 0), TypeTag::Occupancy, 2)
            .unwrap()
            .set_cell_masses(CellIndex::new(0, 0), &[0.4, 0.0])
            .unwrap();

        let mut policy = FusionPolicy {
            alpha_age: ReliabilityFactor::new(0.0).unwrap(),
            ..Default::default()
        };
        let out = temporal_update(&prev, &cur, &policy, None).unwrap();
        assert_eq!(out.value, cur);

        policy.alpha_age = ReliabilityFactor::FULL;
        let out = temporal_update(&prev, &grid(), &policy, None).unwrap();
        assert_eq!(out.value, prev);

        policy.alpha_age = ReliabilityFactor::new(0.95).unwrap();
        let mut g = prev.clone();
        for _ in 0..10 {
            g = temporal_update(&g, &grid(), &policy, None).unwrap().value;
        }
        let m = g
            .patch(PatchIndex::new(0, 0))
            .unwrap()
            .layer(TypeTag::Occupancy)
            .unwrap()
            .cell_masses(CellIndex::new(1, 1))
            .unwrap()[0] as f64;
        assert!((m - 0.9 * 0.95f64.powi(10)).abs() < 1e-6);
        assert!((m - 0.538).abs() < 1e-3);
    }
}
