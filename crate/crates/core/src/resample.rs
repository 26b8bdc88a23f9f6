//! Cell merge/split operators and the layer resampling function.
//!
//! Occupancy cells are merged in measurement space: the evidence
//! `m(O) = 1 - Π(1 - m_c(O))` of the merged cell is exactly what the grid
//! measurement model would have produced from the union of the children's
//! points. Dempster's rule is deliberately not used here; a free child does
//! not contradict an occupied sibling, it only describes a different part of
//! the merged area. Splitting distributes the non-relevance probability
//! evenly, `m(O) = 1 - (1 - m(O))^(1/n)`.
//!
//! Free mass uses median fusion when merging and value copy when splitting,
//! and is always clipped against `1 - m(O)` after occupancy is fixed.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;
use thiserror::Error;

use crate::evidence::Bba;
use crate::grid::{occupancy, GridError, Layer, TypeTag};

pub const DEFAULT_MAX_STEP_DELTA: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("no resampling operators registered for {0} layers")]
    UnsupportedType(TypeTag),
    #[error("resampling from step {from} to {to} exceeds the maximum delta {max}")]
    StepDeltaTooLarge { from: u8, to: u8, max: u8 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Source and target resolution step of one resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleRequest {
    pub source_step: u8,
    pub target_step: u8,
}

impl ResampleRequest {
    pub fn new(source_step: u8, target_step: u8, max_delta: u8) -> Result<Self, ResampleError> {
        if source_step.abs_diff(target_step) > max_delta {
            return Err(ResampleError::StepDeltaTooLarge {
                from: source_step,
                to: target_step,
                max: max_delta,
            });
        }
        Ok(Self {
            source_step,
            target_step,
        })
    }

    pub fn delta(&self) -> u8 {
        self.source_step.abs_diff(self.target_step)
    }
}

/// Type-specific merge/split pair working on stored singleton masses.
///
/// `children` holds `n` cells back to back, `dim` masses each. `split`
/// produces the single value that every one of the `n` children receives.
pub trait CellResampler: Send + Sync {
    fn merge(&self, dim: usize, children: &[f64], out: &mut [f64]);
    fn split(&self, parent: &[f64], n: usize, out: &mut [f64]);
}

/// Measurement-space occupancy resampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct OccupancyResampler;

/// Mean/copy placeholder for semantic cells.
///
/// A measurement-space derivation for multi-hypothesis semantic frames does
/// not exist yet; averaging keeps the operator symmetric and normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct SemanticResampler;

impl CellResampler for OccupancyResampler {
    fn merge(&self, dim: usize, children: &[f64], out: &mut [f64]) {
        debug_assert_eq!(dim, 2);
        let (occ, free) = merge_occ_masses(
            children
                .chunks_exact(dim)
                .map(|c| (c[occupancy::OCCUPIED], c[occupancy::FREE])),
        );
        out[occupancy::OCCUPIED] = occ;
        out[occupancy::FREE] = free;
    }

    fn split(&self, parent: &[f64], n: usize, out: &mut [f64]) {
        let (occ, free) = split_occ_masses(parent[occupancy::OCCUPIED], parent[occupancy::FREE], n);
        out[occupancy::OCCUPIED] = occ;
        out[occupancy::FREE] = free;
    }
}

impl CellResampler for SemanticResampler {
    fn merge(&self, dim: usize, children: &[f64], out: &mut [f64]) {
        let n = children.len() / dim;
        out.iter_mut().for_each(|m| *m = 0.0);
        if n == 0 {
            return;
        }
        for child in children.chunks_exact(dim) {
            for (o, c) in out.iter_mut().zip(child) {
                *o += c.max(0.0);
            }
        }
        out.iter_mut().for_each(|m| *m /= n as f64);
        let sum: f64 = out.iter().sum();
        if sum > 1.0 {
            out.iter_mut().for_each(|m| *m /= sum);
        }
    }

    fn split(&self, parent: &[f64], _n: usize, out: &mut [f64]) {
        out.copy_from_slice(parent);
    }
}

/// Merge of occupancy children given as `(m(O), m(F))` pairs.
pub fn merge_occ_masses(children: impl IntoIterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut not_occupied = 1.0;
    let mut frees: SmallVec<[f64; 64]> = SmallVec::new();
    for (occ, free) in children {
        not_occupied *= 1.0 - occ.clamp(0.0, 1.0);
        frees.push(free.clamp(0.0, 1.0));
    }
    let occ = 1.0 - not_occupied;
    let free = median(&mut frees).min(1.0 - occ).max(0.0);
    (occ, free)
}

/// Value each of `n` children receives when splitting `(m(O), m(F))`.
pub fn split_occ_masses(occ: f64, free: f64, n: usize) -> (f64, f64) {
    assert!(n > 0, "split into zero children");
    let child_occ = 1.0 - (1.0 - occ.clamp(0.0, 1.0)).powf(1.0 / n as f64);
    let child_free = free.clamp(0.0, 1.0).min(1.0 - child_occ).max(0.0);
    (child_occ, child_free)
}

/// Median; the mean of the two middle values for an even count, 0 when empty.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len().is_multiple_of(2) {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

fn occupancy_pair(bba: &Bba) -> (f64, f64) {
    assert_eq!(
        *bba.frame(),
        TypeTag::Occupancy.frame(),
        "occupancy operator applied to a non-occupancy BBA"
    );
    (
        bba.singleton(occupancy::OCCUPIED),
        bba.singleton(occupancy::FREE),
    )
}

fn occupancy_bba(occ: f64, free: f64) -> Bba {
    Bba::from_stored(TypeTag::Occupancy.frame(), [occ, free])
}

/// Merges occupancy cells into one. An empty slice yields the vacuous BBA.
///
/// # Panics
///
/// If a BBA is not defined on the occupancy frame.
pub fn merge_occ(cells: &[Bba]) -> Bba {
    let (occ, free) = merge_occ_masses(cells.iter().map(occupancy_pair));
    occupancy_bba(occ, free)
}

/// Splits one occupancy cell into `n` identical children.
pub fn split_occ(cell: &Bba, n: usize) -> Vec<Bba> {
    let (occ, free) = occupancy_pair(cell);
    let (co, cf) = split_occ_masses(occ, free, n);
    vec![occupancy_bba(co, cf); n]
}

/// Mean of the children's mass vectors. An empty slice yields the vacuous BBA.
pub fn merge_sem(cells: &[Bba]) -> Bba {
    let frame = cells
        .first()
        .map(|c| c.frame().clone())
        .unwrap_or_else(|| TypeTag::Semantic.frame());
    let dim = frame.len();
    let flat: Vec<f64> = cells
        .iter()
        .flat_map(|c| c.singletons().iter().copied())
        .collect();
    let mut out = vec![0.0; dim];
    SemanticResampler.merge(dim, &flat, &mut out);
    Bba::from_stored(frame, out)
}

pub fn split_sem(cell: &Bba, n: usize) -> Vec<Bba> {
    vec![cell.clone(); n]
}

/// Per-type operator table used by [`resample_layer`].
#[derive(Clone)]
pub struct ResamplerRegistry {
    ops: BTreeMap<TypeTag, Arc<dyn CellResampler>>,
    max_delta: u8,
}

impl ResamplerRegistry {
    pub fn empty(max_delta: u8) -> Self {
        Self {
            ops: BTreeMap::new(),
            max_delta,
        }
    }

    pub fn register(&mut self, tag: TypeTag, op: Arc<dyn CellResampler>) -> &mut Self {
        self.ops.insert(tag, op);
        self
    }

    pub fn get(&self, tag: TypeTag) -> Option<&dyn CellResampler> {
        self.ops.get(&tag).map(|o| o.as_ref())
    }

    pub fn max_delta(&self) -> u8 {
        self.max_delta
    }
}

impl Default for ResamplerRegistry {
    fn default() -> Self {
        let mut reg = Self::empty(DEFAULT_MAX_STEP_DELTA);
        reg.register(TypeTag::Occupancy, Arc::new(OccupancyResampler))
            .register(TypeTag::Semantic, Arc::new(SemanticResampler));
        reg
    }
}

impl fmt::Debug for ResamplerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResamplerRegistry")
            .field("types", &self.ops.keys().collect::<Vec<_>>())
            .field("max_delta", &self.max_delta)
            .finish()
    }
}

/// Resamples `layer` to step `target`.
///
/// Equal steps borrow the input unchanged. A finer target splits every cell
/// into a `2^Δ × 2^Δ` block; a coarser target merges every aligned block.
pub fn resample_layer<'a>(
    layer: &'a Layer,
    target: u8,
    registry: &ResamplerRegistry,
) -> Result<Cow<'a, Layer>, ResampleError> {
    let op = registry
        .get(layer.tag())
        .ok_or(ResampleError::UnsupportedType(layer.tag()))?;
    if target == layer.step() {
        return Ok(Cow::Borrowed(layer));
    }
    let request = ResampleRequest::new(layer.step(), target, registry.max_delta())?;
    let mut out = Layer::vacuous(layer.tag(), target)?;
    let dim = layer.dim();
    let delta = request.delta() as u32;
    let block = 1usize << delta;
    let src = layer.masses();
    let dst_side = out.side() as usize;
    let dst = out.masses_mut();

    if target > layer.step() {
        let n = block * block;
        let src_side = layer.side() as usize;
        let mut parent = vec![0.0; dim];
        let mut child = vec![0.0; dim];
        let mut child32 = vec![0.0f32; dim];
        for pb in 0..src_side {
            for pa in 0..src_side {
                let s = (pb * src_side + pa) * dim;
                for (p, &m) in parent.iter_mut().zip(&src[s..s + dim]) {
                    *p = m as f64;
                }
                op.split(&parent, n, &mut child);
                for (c32, &c) in child32.iter_mut().zip(&child) {
                    *c32 = c as f32;
                }
                for db in 0..block {
                    let row = (pb * block + db) * dst_side + pa * block;
                    let start = row * dim;
                    for cell in dst[start..start + block * dim].chunks_exact_mut(dim) {
                        cell.copy_from_slice(&child32);
                    }
                }
            }
        }
    } else {
        let src_side = layer.side() as usize;
        let mut children = Vec::with_capacity(block * block * dim);
        let mut merged = vec![0.0; dim];
        for b in 0..dst_side {
            for a in 0..dst_side {
                children.clear();
                for cb in 0..block {
                    let row = (b * block + cb) * src_side + a * block;
                    children.extend(
                        src[row * dim..(row + block) * dim]
                            .iter()
                            .map(|&m| m as f64),
                    );
                }
                op.merge(dim, &children, &mut merged);
                let d = (b * dst_side + a) * dim;
                for (o, &m) in dst[d..d + dim].iter_mut().zip(&merged) {
                    *o = m as f32;
                }
            }
        }
    }
    Ok(Cow::Owned(out))
}
