//! The driving scenario: route, per-cycle sensing, fusion and culling.

use std::time::Instant;

use apgm::fusion::{fuse_grids, temporal_update, FusionError, FusionPolicy};
use apgm::requirements::{apply_requirements, ModeLabel, Pose2, RequirementProfile};
use apgm::resample::ResampleError;
use apgm::sensor::{measurement_grid_occupancy, measurement_grid_semantic};
use apgm::{GridMap, Point2, ReliabilityFactor, TypeTag};
use rayon::prelude::*;

use crate::config::{profile_from, ModeKey, ScenarioConfig, Waypoint};
use crate::metrics::{reference_cell_counts, MetricsRecord, SourceCount};
use crate::sim::{sensor_rng, simulate_camera, simulate_lidar};
use crate::world::World;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("fusion failed: {0}")]
    Fusion(#[from] FusionError),
    #[error("resampling failed: {0}")]
    Resample(#[from] ResampleError),
    #[error("invalid temporal alpha: {0}")]
    Alpha(#[from] apgm::EvidenceError),
    #[error(transparent)]
    Grid(#[from] apgm::GridError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Vehicle pose at time `t`: linear interpolation between waypoints, heading
/// along the current segment. Before the first and after the last waypoint
/// the vehicle stands still.
pub fn pose_at(route: &[Waypoint], t: f64) -> Pose2 {
    let Some(first) = route.first() else {
        return Pose2::default();
    };
    // Index of the segment the vehicle is on (or the last one it finished).
    let seg = route.windows(2).rposition(|w| w[0].t <= t).unwrap_or(0);
    let heading = route[..=(seg + 1).min(route.len() - 1)]
        .windows(2)
        .rev()
        .map(|w| (w[1].x - w[0].x, w[1].y - w[0].y))
        .find(|&(dx, dy)| dx != 0.0 || dy != 0.0)
        .map_or(0.0, |(dx, dy)| dy.atan2(dx));
    if route.len() == 1 || t <= first.t {
        return Pose2::new(Point2::new(first.x, first.y), heading);
    }
    let (a, b) = (route[seg], route[seg + 1]);
    let f = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    Pose2::new(
        Point2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)),
        heading,
    )
}

/// Mode of the last waypoint reached at time `t`.
pub fn mode_at(route: &[Waypoint], t: f64) -> ModeKey {
    route
        .iter()
        .rev()
        .find(|w| w.t <= t + 1e-9)
        .or(route.first())
        .map_or(ModeKey::Parking, |w| w.mode)
}

/// State handed to the per-cycle observer.
pub struct CycleView<'a> {
    pub cycle: usize,
    pub time_s: f64,
    pub mode: ModeKey,
    pub profile: &'a RequirementProfile,
    /// Measurement grids of this cycle, in source order.
    pub sources: &'a [(String, TypeTag, GridMap)],
    /// Accumulated map after culling.
    pub grid: &'a GridMap,
    pub record: &'a MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub records: Vec<MetricsRecord>,
    pub grid: GridMap,
    pub conflicts: usize,
    /// Wall-clock fusion time of every cycle, recorded even when the CSV
    /// omits it.
    pub fuse_ms: Vec<f64>,
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    world: &World,
    mut observer: impl FnMut(&CycleView<'_>),
) -> Result<ScenarioOutput, ScenarioError> {
    let geometry = cfg.geometry();
    let base_policy = FusionPolicy {
        alpha_age: ReliabilityFactor::new(cfg.fusion.temporal_alpha)?,
        ..FusionPolicy::default()
    };
    let mut accum = GridMap::with_geometry(geometry);
    let mut out = ScenarioOutput {
        records: Vec::with_capacity(cfg.cycles()),
        grid: GridMap::with_geometry(geometry),
        conflicts: 0,
        fuse_ms: Vec::with_capacity(cfg.cycles()),
    };

    for cycle in 0..cfg.cycles() {
        let t = cycle as f64 * cfg.cycle_s;
        let pose = pose_at(&cfg.route, t);
        let key = mode_at(&cfg.route, t);
        let mode = cfg.mode(key);
        let profile = profile_from(mode, pose);
        let policy = base_policy.clone().with_profile(&profile, geometry.edge);

        let mut sources: Vec<(String, TypeTag, GridMap)> = cfg
            .lidar
            .par_iter()
            .enumerate()
            .map(|(i, l)| {
                let cloud = simulate_lidar(world, &pose, l, &mut sensor_rng(cfg.seed, cycle, i), t);
                let params = cfg.sensor_params(l.max_range_m);
                let grid = measurement_grid_occupancy(&cloud, &params, &geometry, &profile);
                (l.name.clone(), TypeTag::Occupancy, grid)
            })
            .collect();
        let mut conflicts = 0;
        if let Some(cam) = cfg
            .camera
            .as_ref()
            .filter(|_| profile.is_active(TypeTag::Semantic))
        {
            let obs = simulate_camera(world, &pose, cam, t);
            let m = measurement_grid_semantic(&obs, &geometry, &profile);
            conflicts += m.conflicts;
            sources.push((cam.name.clone(), TypeTag::Semantic, m.grid));
        }

        let start = Instant::now();
        let inputs: Vec<&GridMap> = sources.iter().map(|s| &s.2).collect();
        let current = if inputs.is_empty() {
            GridMap::with_geometry(geometry)
        } else {
            let f = fuse_grids(&inputs, &policy)?;
            conflicts += f.conflicts;
            f.value
        };
        let updated = temporal_update(&accum, &current, &policy, Some(&profile))?;
        conflicts += updated.conflicts;
        accum = updated.value;
        apply_requirements(&mut accum, &profile, &policy.resamplers)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;

        let label = ModeLabel::from(key);
        let horizon = mode.occupancy.horizon_m;
        let record = MetricsRecord {
            time_s: t,
            mode: label,
            horizon_m: horizon,
            sources: sources
                .iter()
                .map(|(name, tag, g)| SourceCount {
                    src: name.clone(),
                    tag: *tag,
                    cells: g.cell_count(Some(*tag)),
                    bytes: g.memory_bytes_of(Some(*tag)),
                })
                .collect(),
            fused: crate::metrics::active_types(&profile)
                .into_iter()
                .map(|tag| SourceCount {
                    src: "fused".into(),
                    tag,
                    cells: accum.cell_count(Some(tag)),
                    bytes: accum.memory_bytes_of(Some(tag)),
                })
                .collect(),
            references: reference_cell_counts(cfg, pose.position, horizon),
            memory_bytes: accum.memory_bytes(),
            fuse_ms: cfg.fusion.record_timings.then_some(ms),
            conflicts,
        };
        observer(&CycleView {
            cycle,
            time_s: t,
            mode: key,
            profile: &profile,
            sources: &sources,
            grid: &accum,
            record: &record,
        });
        out.conflicts += conflicts;
        out.fuse_ms.push(ms);
        out.records.push(record);
    }
    out.grid = accum;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(t: f64, x: f64, y: f64, mode: ModeKey) -> Waypoint {
        Waypoint { t, x, y, mode }
    }

    #[test]
    fn route_interpolation() {
        let r = [
            wp(0.0, 0.0, 0.0, ModeKey::Parking),
            wp(10.0, 10.0, 0.0, ModeKey::Road),
            wp(20.0, 10.0, 10.0, ModeKey::Parking),
        ];
        let p = pose_at(&r, 5.0);
        assert_eq!((p.position.x, p.position.y, p.heading), (5.0, 0.0, 0.0));
        let p = pose_at(&r, 15.0);
        assert_eq!((p.position.x, p.position.y), (10.0, 5.0));
        assert!((p.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // Past the end the vehicle keeps its last position and heading.
        let p = pose_at(&r, 99.0);
        assert_eq!((p.position.x, p.position.y), (10.0, 10.0));
        assert!((p.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(mode_at(&r, 0.0), ModeKey::Parking);
        assert_eq!(mode_at(&r, 9.99), ModeKey::Parking);
        assert_eq!(mode_at(&r, 10.0), ModeKey::Road);
        assert_eq!(mode_at(&r, 25.0), ModeKey::Parking);
    }

    #[test]
    fn stationary_waypoints_keep_heading() {
        let r = [
            wp(0.0, 0.0, 0.0, ModeKey::Parking),
            wp(1.0, 0.0, 1.0, ModeKey::Parking),
            wp(2.0, 0.0, 1.0, ModeKey::Parking),
        ];
        assert!((pose_at(&r, 1.5).heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(pose_at(&r[..1], 3.0).heading, 0.0);
    }
}
