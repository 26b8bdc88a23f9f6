//! Per-cycle metrics, reference layouts and the metrics CSV.

use std::io::Write;
use std::path::Path;

use apgm::requirements::ModeLabel;
use apgm::{GridGeometry, PatchIndex, Point2, TypeTag};

use crate::config::{profile_from, ScenarioConfig, TYPES};

pub const CSV_HEADER: [&str; 8] = [
    "time_s",
    "mode",
    "horizon_m",
    "src",
    "type",
    "cells",
    "bytes",
    "fuse_ms",
];

/// Cell and byte count of one source (or of the fused map) for one type.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCount {
    pub src: String,
    pub tag: TypeTag,
    pub cells: usize,
    pub bytes: usize,
}

/// Fixed layout the adaptive map is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLayout {
    pub label: String,
    pub cells: u64,
    pub bytes_per_cell: u64,
}

impl ReferenceLayout {
    pub fn bytes(&self) -> u64 {
        self.cells * self.bytes_per_cell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub time_s: f64,
    pub mode: ModeLabel,
    /// Occupancy horizon of the active mode.
    pub horizon_m: f64,
    pub sources: Vec<SourceCount>,
    /// One entry per type active in the mode.
    pub fused: Vec<SourceCount>,
    pub references: Vec<ReferenceLayout>,
    pub memory_bytes: usize,
    pub fuse_ms: Option<f64>,
    pub conflicts: usize,
}

impl MetricsRecord {
    pub fn fused_cells(&self, tag: TypeTag) -> usize {
        self.fused
            .iter()
            .find(|c| c.tag == tag)
            .map_or(0, |c| c.cells)
    }

    pub fn reference(&self, label: &str) -> Option<&ReferenceLayout> {
        self.references.iter().find(|r| r.label == label)
    }
}

pub const STATIC_REFERENCE: &str = "reference_static";
pub const UNIFORM_REFERENCE: &str = "reference_uniform";

/// Number of patches whose square lies within `horizon` of `center`, at
/// least one.
pub fn patches_in_disc(geometry: &GridGeometry, center: Point2, horizon: f64) -> u64 {
    let home = geometry.patch_index_of(center);
    let reach = (horizon / geometry.edge).ceil() as i32 + 1;
    let mut n = 0;
    for ix in home.ix - reach..=home.ix + reach {
        for iy in home.iy - reach..=home.iy + reach {
            if geometry.distance_to_patch(center, PatchIndex::new(ix, iy)) <= horizon {
                n += 1;
            }
        }
    }
    n.max(1)
}

/// Reference layouts at one vehicle position in one mode.
///
/// The static reference is a constant. The uniform reference is a patched map
/// without adaptation: every patch within the current horizon carries the
/// finest occupancy resolution required by any mode.
pub fn reference_cell_counts(
    cfg: &ScenarioConfig,
    center: Point2,
    horizon: f64,
) -> Vec<ReferenceLayout> {
    let geometry = cfg.geometry();
    let finest = cfg
        .modes
        .values()
        .filter_map(|m| {
            profile_from(m, Default::default()).required_step(TypeTag::Occupancy, geometry.edge)
        })
        .max()
        .unwrap_or(0);
    let bytes_per_cell = (TypeTag::Occupancy.dim() * apgm::grid::BYTES_PER_MASS) as u64;
    vec![
        ReferenceLayout {
            label: STATIC_REFERENCE.into(),
            cells: cfg.reference.static_cells,
            bytes_per_cell: cfg.reference.static_bytes_per_cell,
        },
        ReferenceLayout {
            label: UNIFORM_REFERENCE.into(),
            cells: patches_in_disc(&geometry, center, horizon) << (2 * finest),
            bytes_per_cell,
        },
    ]
}

/// Writes the metrics CSV. Rows follow record order, then sources, fused
/// types and references in a fixed order.
pub fn write_metrics_to<W: Write>(records: &[MetricsRecord], w: W) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        let time = format!("{:.3}", r.time_s);
        let horizon = format!("{}", r.horizon_m);
        let fuse = r.fuse_ms.map(|ms| format!("{ms:.3}")).unwrap_or_default();
        let mode = r.mode.as_str();
        let counts = r
            .sources
            .iter()
            .map(|c| (c.src.as_str(), c.tag.name(), c.cells as u64, c.bytes as u64))
            .chain(
                r.fused
                    .iter()
                    .map(|c| ("fused", c.tag.name(), c.cells as u64, c.bytes as u64)),
            )
            .chain(r.references.iter().map(|x| {
                (
                    x.label.as_str(),
                    TypeTag::Occupancy.name(),
                    x.cells,
                    x.bytes(),
                )
            }));
        for (src, ty, cells, bytes) in counts {
            out.write_record([
                time.as_str(),
                mode,
                horizon.as_str(),
                src,
                ty,
                &cells.to_string(),
                &bytes.to_string(),
                fuse.as_str(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics_to(records, file).map_err(std::io::Error::other)
}

/// Averages over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cycles: usize,
    pub mean_fused_occupancy: f64,
    pub max_fused_occupancy: usize,
    pub mean_static_reference: f64,
    pub mean_uniform_reference: f64,
}

impl RunSummary {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            cycles: records.len(),
            mean_fused_occupancy: mean(&|r| r.fused_cells(TypeTag::Occupancy) as f64),
            max_fused_occupancy: records
                .iter()
                .map(|r| r.fused_cells(TypeTag::Occupancy))
                .max()
                .unwrap_or(0),
            mean_static_reference: mean(&|r| {
                r.reference(STATIC_REFERENCE)
                    .map_or(0.0, |x| x.cells as f64)
            }),
            mean_uniform_reference: mean(&|r| {
                r.reference(UNIFORM_REFERENCE)
                    .map_or(0.0, |x| x.cells as f64)
            }),
        }
    }

    /// Average reference cells per average adaptive cell.
    pub fn factor_static(&self) -> f64 {
        self.mean_static_reference / self.mean_fused_occupancy
    }

    pub fn factor_uniform(&self) -> f64 {
        self.mean_uniform_reference / self.mean_fused_occupancy
    }
}

/// Types listed in a record's fused rows for a mode.
pub fn active_types(profile: &apgm::requirements::RequirementProfile) -> Vec<TypeTag> {
    TYPES
        .into_iter()
        .filter(|&t| profile.is_active(t))
        .collect()
}
