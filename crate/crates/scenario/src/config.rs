//! Scenario configuration file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use apgm::requirements::{ModeLabel, RequirementProfile, TypeRequirement};
use apgm::sensor::SensorModelParams;
use apgm::{GridGeometry, Point2, TypeTag};
use serde::Deserialize;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{}", Diagnostics(.0))]
    Invalid(Vec<String>),
}

struct Diagnostics<'a>(&'a [String]);

impl fmt::Display for Diagnostics<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for d in self.0 {
            write!(f, "\n  - {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub cycle_s: f64,
    pub grid: GridConfig,
    pub sensor_model: SensorModelConfig,
    pub fusion: FusionConfig,
    pub world: WorldConfig,
    pub lidar: Vec<LidarConfig>,
    pub camera: Option<CameraConfig>,
    pub modes: BTreeMap<ModeKey, ModeConfig>,
    pub route: Vec<Waypoint>,
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKey {
    Parking,
    Road,
}

impl From<ModeKey> for ModeLabel {
    fn from(k: ModeKey) -> Self {
        match k {
            ModeKey::Parking => ModeLabel::Parking,
            ModeKey::Road => ModeLabel::Road,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub datum: [f64; 2],
    pub edge_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModelConfig {
    pub mu_hit: f64,
    pub mu_free: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub temporal_alpha: f64,
    #[serde(default)]
    pub record_timings: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub lot_size_m: f64,
    pub road_length_m: f64,
    pub block_length_m: f64,
    pub gap_m: f64,
    #[serde(default)]
    pub noise_barriers: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarConfig {
    pub name: String,
    /// Offset in the vehicle frame, x forward.
    pub mount: [f64; 2],
    pub beams: usize,
    pub noise_sigma_m: f64,
    pub max_range_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub name: String,
    pub mount: [f64; 2],
    pub fov_deg: f64,
    pub range_m: f64,
    pub ring_spacing_m: f64,
    pub angular_step_deg: f64,
    pub confidence_near: f64,
    pub confidence_far: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub occupancy: TypeConfig,
    pub semantic: TypeConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    #[serde(default = "yes")]
    pub active: bool,
    pub horizon_m: f64,
    pub max_cell_m: f64,
    pub fov_deg: Option<f64>,
}

fn yes() -> bool {
    true
}

impl TypeConfig {
    pub fn requirement(&self) -> TypeRequirement {
        let mut r = TypeRequirement::new(self.horizon_m, self.max_cell_m);
        r.active = self.active;
        r.fov = self.fov_deg.map(f64::to_radians);
        r
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub mode: ModeKey,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub static_cells: u64,
    pub static_bytes_per_cell: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("embedded default config is valid")
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(
            Point2::new(self.grid.datum[0], self.grid.datum[1]),
            self.grid.edge_m,
        )
        .expect("validated edge length")
    }

    pub fn sensor_params(&self, max_range: f64) -> SensorModelParams {
        SensorModelParams::new(
            self.sensor_model.mu_hit,
            self.sensor_model.mu_free,
            max_range,
        )
        .expect("validated sensor model")
    }

    /// Number of simulated cycles.
    pub fn cycles(&self) -> usize {
        (self.duration_s / self.cycle_s + 1e-9).floor() as usize
    }

    pub fn mode(&self, key: ModeKey) -> &ModeConfig {
        &self.modes[&key]
    }

    /// Collects every problem instead of stopping at the first one.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        check(
            &mut errs,
            self.duration_s >= 0.0 && self.duration_s.is_finite(),
            format!("duration_s must be >= 0, got {}", self.duration_s),
        );
        check(
            &mut errs,
            self.cycle_s > 0.0 && self.cycle_s.is_finite(),
            format!("cycle_s must be > 0, got {}", self.cycle_s),
        );
        check(
            &mut errs,
            self.grid.edge_m > 0.0 && self.grid.edge_m.is_finite(),
            format!("grid.edge_m must be > 0, got {}", self.grid.edge_m),
        );
        check(
            &mut errs,
            self.grid.datum.iter().all(|v| v.is_finite()),
            "grid.datum must be finite".into(),
        );
        check(
            &mut errs,
            self.sensor_model.mu_hit > 0.0 && self.sensor_model.mu_hit <= 1.0,
            format!(
                "sensor_model.mu_hit must be in (0, 1], got {}",
                self.sensor_model.mu_hit
            ),
        );
        check(
            &mut errs,
            self.sensor_model.mu_free > 0.0 && self.sensor_model.mu_free < 1.0,
            format!(
                "sensor_model.mu_free must be in (0, 1), got {}",
                self.sensor_model.mu_free
            ),
        );
        check(
            &mut errs,
            (0.0..=1.0).contains(&self.fusion.temporal_alpha),
            format!(
                "fusion.temporal_alpha must be in [0, 1], got {}",
                self.fusion.temporal_alpha
            ),
        );
        let w = &self.world;
        for (name, v) in [
            ("lot_size_m", w.lot_size_m),
            ("road_length_m", w.road_length_m),
            ("block_length_m", w.block_length_m),
            ("gap_m", w.gap_m),
        ] {
            check(
                &mut errs,
                v > 0.0 && v.is_finite(),
                format!("world.{name} must be > 0, got {v}"),
            );
        }
        for l in &self.lidar {
            check(
                &mut errs,
                l.beams > 0,
                format!("lidar {}: beams must be > 0", l.name),
            );
            check(
                &mut errs,
                l.noise_sigma_m >= 0.0,
                format!("lidar {}: noise_sigma_m must be >= 0", l.name),
            );
            check(
                &mut errs,
                l.max_range_m > 0.0,
                format!("lidar {}: max_range_m must be > 0", l.name),
            );
        }
        let mut names: Vec<&str> = self.lidar.iter().map(|l| l.name.as_str()).collect();
        if let Some(c) = &self.camera {
            names.push(&c.name);
            check(
                &mut errs,
                c.fov_deg > 0.0 && c.fov_deg <= 360.0,
                format!("camera: fov_deg must be in (0, 360], got {}", c.fov_deg),
            );
            check(
                &mut errs,
                c.range_m > 0.0,
                "camera: range_m must be > 0".into(),
            );
            check(
                &mut errs,
                c.ring_spacing_m > 0.0,
                "camera: ring_spacing_m must be > 0".into(),
            );
            check(
                &mut errs,
                c.angular_step_deg > 0.0,
                "camera: angular_step_deg must be > 0".into(),
            );
            for (n, v) in [
                ("confidence_near", c.confidence_near),
                ("confidence_far", c.confidence_far),
            ] {
                check(
                    &mut errs,
                    (0.0..=1.0).contains(&v),
                    format!("camera: {n} must be in [0, 1], got {v}"),
                );
            }
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        check(
            &mut errs,
            sorted.len() == names.len(),
            "sensor names must be unique".into(),
        );
        check(
            &mut errs,
            !names
                .iter()
                .any(|n| n.starts_with("fused") || n.starts_with("reference")),
            "sensor names must not start with `fused` or `reference`".into(),
        );

        for key in [ModeKey::Parking, ModeKey::Road] {
            let Some(mode) = self.modes.get(&key) else {
                errs.push(format!("modes.{key:?} is missing").to_lowercase());
                continue;
            };
            let profile = profile_from(mode, apgm::requirements::Pose2::default());
            if let Err(e) = profile.validate(self.grid.edge_m) {
                errs.push(format!("modes.{}: {e}", ModeLabel::from(key)));
            }
        }
        if self.route.is_empty() {
            errs.push("route needs at least one waypoint".into());
        }
        if self.route.first().is_some_and(|w| w.t > 0.0) {
            errs.push("route must start at t = 0".into());
        }
        for pair in self.route.windows(2) {
            if pair[1].t <= pair[0].t {
                errs.push(format!(
                    "route times must increase: {} then {}",
                    pair[0].t, pair[1].t
                ));
            }
        }
        check(
            &mut errs,
            self.reference.static_cells > 0,
            "reference.static_cells must be > 0".into(),
        );
        check(
            &mut errs,
            self.reference.static_bytes_per_cell > 0,
            "reference.static_bytes_per_cell must be > 0".into(),
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

fn check(errs: &mut Vec<String>, ok: bool, msg: String) {
    if !ok {
        errs.push(msg);
    }
}

/// Every information type the scenario maintains, in CSV order.
pub const TYPES: [TypeTag; 2] = [TypeTag::Occupancy, TypeTag::Semantic];

pub(crate) fn profile_from(
    mode: &ModeConfig,
    pose: apgm::requirements::Pose2,
) -> RequirementProfile {
    RequirementProfile::new(pose)
        .with_type(TypeTag::Occupancy, mode.occupancy.requirement())
        .with_type(TypeTag::Semantic, mode.semantic.requirement())
}
