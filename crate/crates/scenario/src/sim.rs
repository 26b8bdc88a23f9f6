//! Simulated lidars and camera.

use std::f64::consts::TAU;

use apgm::requirements::Pose2;
use apgm::sensor::{LabeledPoint, PointCloud, SemanticObservation};
use apgm::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{CameraConfig, LidarConfig};
use crate::world::World;

/// Random stream of one sensor in one cycle. Streams never overlap, so the
/// result does not depend on the order in which sensors are simulated.
pub fn sensor_rng(seed: u64, cycle: usize, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cycle as u64) << 16) | sensor as u64);
    rng
}

pub fn mount_position(pose: &Pose2, mount: [f64; 2]) -> Point2 {
    pose.transform(Point2::new(mount[0], mount[1]))
}

/// 360° scan with `beams` evenly spaced beams starting at the vehicle
/// heading. Each return gets Gaussian range noise; beams without a surface
/// within range produce no point.
pub fn simulate_lidar(
    world: &World,
    pose: &Pose2,
    cfg: &LidarConfig,
    rng: &mut ChaCha8Rng,
    timestamp: f64,
) -> PointCloud {
    let origin = mount_position(pose, cfg.mount);
    let noise = (cfg.noise_sigma_m > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_sigma_m).expect("validated sigma"));
    let mut points = Vec::new();
    for i in 0..cfg.beams {
        let angle = pose.heading + TAU * i as f64 / cfg.beams as f64;
        let dir = Point2::new(angle.cos(), angle.sin());
        let Some(range) = world.cast(origin, dir, cfg.max_range_m) else {
            continue;
        };
        let r = match &noise {
            Some(n) => (range + n.sample(rng)).clamp(0.0, cfg.max_range_m),
            None => range,
        };
        points.push(Point2::new(origin.x + r * dir.x, origin.y + r * dir.y));
    }
    PointCloud {
        origin,
        points,
        timestamp,
    }
}

/// Label confidence at range `r`: linear from `confidence_near` at the
/// camera to `confidence_far` at `range_m`.
pub fn camera_confidence(cfg: &CameraConfig, r: f64) -> f64 {
    let f = (r / cfg.range_m).clamp(0.0, 1.0);
    cfg.confidence_near - f * (cfg.confidence_near - cfg.confidence_far)
}

/// Ground points on a polar grid inside the frontal frustum, labeled from
/// the world's ground truth.
pub fn simulate_camera(
    world: &World,
    pose: &Pose2,
    cfg: &CameraConfig,
    timestamp: f64,
) -> SemanticObservation {
    let origin = mount_position(pose, cfg.mount);
    let half = cfg.fov_deg.to_radians() / 2.0;
    let step = cfg.angular_step_deg.to_radians();
    let n_angles = (2.0 * half / step + 1e-9).floor() as i64;
    let n_rings = (cfg.range_m / cfg.ring_spacing_m + 1e-9).floor() as i64;
    let labels = world.label_index();
    let mut points = Vec::with_capacity(((n_angles + 1) * n_rings) as usize);
    for ring in 1..=n_rings {
        let r = ring as f64 * cfg.ring_spacing_m;
        let confidence = camera_confidence(cfg, r);
        for k in 0..=n_angles {
            let a = pose.heading - half + k as f64 * step;
            let p = Point2::new(origin.x + r * a.cos(), origin.y + r * a.sin());
            points.push(LabeledPoint {
                position: p,
                label: labels.label_at(p),
                confidence,
            });
        }
    }
    SemanticObservation {
        origin,
        points,
        timestamp,
    }
}
