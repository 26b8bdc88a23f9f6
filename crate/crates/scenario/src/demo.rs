//! Side-by-side comparison of measurement-space merging and a cell-wise
//! Dempster fold when coarsening an occupancy scan.

use std::path::Path;

use apgm::fusion::{fuse_cells, fuse_grids, ConflictFallback, FusionPolicy};
use apgm::requirements::Pose2;
use apgm::resample::{resample_layer, ResamplerRegistry};
use apgm::sensor::measurement_grid_occupancy;
use apgm::{CellIndex, GridMap, Layer, Patch, Point2, TypeTag};

use crate::config::{profile_from, ModeKey, ScenarioConfig};
use crate::raster::{export_raster, Region};
use crate::scenario::ScenarioError;
use crate::sim::{sensor_rng, simulate_lidar};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMethod {
    /// Merge in measurement space (`resample_layer`).
    Measurement,
    /// Dempster's rule folded over the block's child cells.
    DempsterFold,
}

impl MergeMethod {
    pub fn name(self) -> &'static str {
        match self {
            MergeMethod::Measurement => "measurement",
            MergeMethod::DempsterFold => "dst",
        }
    }
}

/// Area statistics of one coarsened map.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStats {
    pub block: usize,
    pub method: MergeMethod,
    /// Area of cells whose pignistic occupancy exceeds 0.5, in m².
    pub occupied_area_m2: f64,
    pub free_area_m2: f64,
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub original: MergeStats,
    pub merged: Vec<MergeStats>,
}

/// Coarsens `layer` by `delta` steps, combining each block of children with
/// Dempster's rule. Totally conflicting blocks become vacuous.
pub fn dempster_merge_layer(layer: &Layer, delta: u8) -> Result<(Layer, usize), ScenarioError> {
    let target = layer.step() - delta;
    let mut out = Layer::vacuous(layer.tag(), target)?;
    let block = 1u32 << delta;
    let mut conflicts = 0;
    let mut children = Vec::with_capacity((block * block) as usize);
    for a in 0..out.side() {
        for b in 0..out.side() {
            children.clear();
            for i in 0..block {
                for j in 0..block {
                    children.push(
                        layer
                            .cell(CellIndex::new(a * block + i, b * block + j))
                            .expect("child in range"),
                    );
                }
            }
            let f = fuse_cells(&children, ConflictFallback::Vacuous)?;
            conflicts += f.conflicts;
            out.set_cell(CellIndex::new(a, b), &f.value)
                .expect("cell in range");
        }
    }
    Ok((out, conflicts))
}

fn coarsen(
    grid: &GridMap,
    delta: u8,
    method: MergeMethod,
) -> Result<(GridMap, usize), ScenarioError> {
    let registry = ResamplerRegistry::default();
    let mut out = GridMap::with_geometry(grid.geometry());
    let mut conflicts = 0;
    for patch in grid.patches() {
        let Some(layer) = patch.layer(TypeTag::Occupancy) else {
            continue;
        };
        let merged = match method {
            MergeMethod::Measurement => {
                resample_layer(layer, layer.step() - delta, &registry)?.into_owned()
            }
            MergeMethod::DempsterFold => {
                let (l, c) = dempster_merge_layer(layer, delta)?;
                conflicts += c;
                l
            }
        };
        let mut p = Patch::new(patch.index());
        p.insert_layer(merged);
        out.insert_patch(p);
    }
    Ok((out, conflicts))
}

fn stats(grid: &GridMap, block: usize, method: MergeMethod, conflicts: usize) -> MergeStats {
    let geometry = grid.geometry();
    let (mut occ, mut free) = (0.0, 0.0);
    for layer in grid.patches().filter_map(|p| p.layer(TypeTag::Occupancy)) {
        let area = geometry.cell_size(layer.step()).powi(2);
        for (_, m) in layer.cells() {
            let omega = 1.0 - (m[0] as f64 + m[1] as f64);
            let betp_o = m[0] as f64 + omega / 2.0;
            if betp_o > 0.5 {
                occ += area;
            } else if betp_o < 0.5 {
                free += area;
            }
        }
    }
    MergeStats {
        block,
        method,
        occupied_area_m2: occ,
        free_area_m2: free,
        conflicts,
    }
}

/// One fused two-lidar scan taken in parking lot A at the finest parking
/// resolution.
pub fn demo_scan(cfg: &ScenarioConfig) -> Result<GridMap, ScenarioError> {
    let world = World::default_layout(&cfg.world);
    let pose = Pose2::new(Point2::new(30.0, 30.0), 0.0);
    let profile = profile_from(cfg.mode(ModeKey::Parking), pose);
    let geometry = cfg.geometry();
    let grids: Vec<GridMap> = cfg
        .lidar
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let cloud = simulate_lidar(&world, &pose, l, &mut sensor_rng(cfg.seed, 0, i), 0.0);
            measurement_grid_occupancy(
                &cloud,
                &cfg.sensor_params(l.max_range_m),
                &geometry,
                &profile,
            )
        })
        .collect();
    if grids.is_empty() {
        return Ok(GridMap::with_geometry(geometry));
    }
    let refs: Vec<&GridMap> = grids.iter().collect();
    Ok(fuse_grids(&refs, &FusionPolicy::default())?.value)
}

/// Coarsens `scan` with 2×2 and 8×8 blocks under both methods. With an output
/// directory every map is written as a PGM raster.
pub fn compare_resampling(
    scan: &GridMap,
    out_dir: Option<&Path>,
) -> Result<DemoReport, ScenarioError> {
    let region = Region::of_grid(scan, TypeTag::Occupancy);
    let write = |grid: &GridMap, name: &str| -> std::io::Result<()> {
        if let Some(dir) = out_dir {
            export_raster(grid, TypeTag::Occupancy, region, dir.join(name))?;
        }
        Ok(())
    };
    write(scan, "resample_original.pgm").map_err(ScenarioError::Io)?;
    let mut merged = Vec::new();
    for (block, delta) in [(2usize, 1u8), (8, 3)] {
        for method in [MergeMethod::Measurement, MergeMethod::DempsterFold] {
            let (grid, conflicts) = coarsen(scan, delta, method)?;
            write(
                &grid,
                &format!("resample_{}_{block}x{block}.pgm", method.name()),
            )
            .map_err(ScenarioError::Io)?;
            merged.push(stats(&grid, block, method, conflicts));
        }
    }
    Ok(DemoReport {
        original: stats(scan, 1, MergeMethod::Measurement, 0),
        merged,
    })
}

pub fn compare_resampling_demo(
    cfg: &ScenarioConfig,
    out_dir: &Path,
) -> Result<DemoReport, ScenarioError> {
    compare_resampling(&demo_scan(cfg)?, Some(out_dir))
}
