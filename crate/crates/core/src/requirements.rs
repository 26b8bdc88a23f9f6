//! Situational requirements and their realization on a grid map.
//!
//! A [`RequirementProfile`] states, per information type, whether the type is
//! needed at all, how far around the vehicle it must be maintained and the
//! coarsest acceptable cell size. [`apply_requirements`] culls patches and
//! layers that fall outside those bounds and resamples layers whose
//! resolution step does not match.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use thiserror::Error;

use crate::grid::{GridGeometry, GridMap, PatchIndex, Point2, TypeTag, MAX_STEP};
use crate::resample::{resample_layer, ResampleError, ResamplerRegistry};

const POWER_OF_TWO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequirementError {
    #[error("{tag}: horizon must be positive, got {value}")]
    NonPositiveHorizon { tag: TypeTag, value: f64 },
    #[error("{tag}: maximum cell size must be positive, got {value}")]
    NonPositiveCellSize { tag: TypeTag, value: f64 },
    #[error("{tag}: edge / cell size = {ratio} is not a power of two")]
    NotPowerOfTwo { tag: TypeTag, ratio: f64 },
    #[error("{tag}: field of view must lie in (0, 2π], got {value}")]
    InvalidFov { tag: TypeTag, value: f64 },
}

/// Vehicle position and heading (radians, counter-clockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub const fn new(position: Point2, heading: f64) -> Self {
        Self { position, heading }
    }

    /// Transforms a vehicle-frame offset into world coordinates.
    pub fn transform(&self, local: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(
            self.position.x + c * local.x - s * local.y,
            self.position.y + s * local.x + c * local.y,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeRequirement {
    pub active: bool,
    pub horizon_m: f64,
    pub max_cell_size_m: f64,
    /// Full opening angle in radians, centered on the vehicle heading.
    /// `None` means all around.
    pub fov: Option<f64>,
}

impl TypeRequirement {
    pub fn new(horizon_m: f64, max_cell_size_m: f64) -> Self {
        Self {
            active: true,
            horizon_m,
            max_cell_size_m,
            fov: None,
        }
    }

    pub fn with_fov(mut self, fov: f64) -> Self {
        self.fov = Some(fov);
        self
    }

    pub fn inactive(mut self) -> Self {
        self.active = false;
        self
    }

    /// Smallest step `r` with `edge / 2^r ≤ max_cell_size_m`.
    pub fn required_step(&self, edge: f64) -> u8 {
        let limit = self.max_cell_size_m * (1.0 + POWER_OF_TWO_TOLERANCE);
        (0..=MAX_STEP)
            .find(|&r| edge / (1u64 << r) as f64 <= limit)
            .unwrap_or(MAX_STEP)
    }
}

/// Scenario situation a profile belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeLabel {
    Parking,
    Road,
}

impl ModeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeLabel::Parking => "parking",
            ModeLabel::Road => "road",
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModeLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parking" => Ok(ModeLabel::Parking),
            "road" => Ok(ModeLabel::Road),
            other => Err(format!("unknown mode `{other}` (expected parking or road)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMode {
    pub label: ModeLabel,
    pub profile: RequirementProfile,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequirementProfile {
    types: BTreeMap<TypeTag, TypeRequirement>,
    pub pose: Pose2,
    step_overrides: BTreeMap<(PatchIndex, TypeTag), u8>,
}

impl RequirementProfile {
    pub fn new(pose: Pose2) -> Self {
        Self {
            pose,
            ..Self::default()
        }
    }

    pub fn with_type(mut self, tag: TypeTag, req: TypeRequirement) -> Self {
        self.types.insert(tag, req);
        self
    }

    pub fn set_type(&mut self, tag: TypeTag, req: TypeRequirement) {
        self.types.insert(tag, req);
    }

    pub fn requirement(&self, tag: TypeTag) -> Option<&TypeRequirement> {
        self.types.get(&tag)
    }

    pub fn is_active(&self, tag: TypeTag) -> bool {
        self.types.get(&tag).is_some_and(|r| r.active)
    }

    pub fn active_types(&self) -> impl Iterator<Item = TypeTag> + '_ {
        self.types.iter().filter(|(_, r)| r.active).map(|(t, _)| *t)
    }

    /// Pins the step of one type in one patch, overriding the profile-wide
    /// cell size. This is the hook for location-dependent resolution.
    pub fn set_step_override(&mut self, patch: PatchIndex, tag: TypeTag, step: u8) {
        self.step_overrides.insert((patch, tag), step);
    }

    pub fn clear_step_overrides(&mut self) {
        self.step_overrides.clear();
    }

    pub fn validate(&self, edge: f64) -> Result<(), RequirementError> {
        for (&tag, req) in &self.types {
            if req.horizon_m.is_nan() || req.horizon_m <= 0.0 {
                return Err(RequirementError::NonPositiveHorizon {
                    tag,
                    value: req.horizon_m,
                });
            }
            if req.max_cell_size_m.is_nan() || req.max_cell_size_m <= 0.0 {
                return Err(RequirementError::NonPositiveCellSize {
                    tag,
                    value: req.max_cell_size_m,
                });
            }
            let ratio = edge / req.max_cell_size_m;
            let nearest = ratio.log2().round().exp2();
            if ratio < 1.0 - POWER_OF_TWO_TOLERANCE
                || ((ratio - nearest) / nearest).abs() > POWER_OF_TWO_TOLERANCE
            {
                return Err(RequirementError::NotPowerOfTwo { tag, ratio });
            }
            if let Some(fov) = req.fov {
                if !(fov > 0.0 && fov <= 2.0 * PI + 1e-12) {
                    return Err(RequirementError::InvalidFov { tag, value: fov });
                }
            }
        }
        Ok(())
    }

    pub fn required_step(&self, tag: TypeTag, edge: f64) -> Option<u8> {
        self.types.get(&tag).map(|r| r.required_step(edge))
    }

    /// Required step in one patch, honoring overrides.
    pub fn required_step_at(&self, patch: PatchIndex, tag: TypeTag, edge: f64) -> Option<u8> {
        self.step_overrides
            .get(&(patch, tag))
            .copied()
            .or_else(|| self.required_step(tag, edge))
    }
}

/// Whether patch `index` must hold `tag` data under `profile`: the patch
/// square lies within the type's horizon and, if the type has a field of
/// view, intersects that frustum.
pub fn patch_in_horizon(
    geometry: &GridGeometry,
    index: PatchIndex,
    profile: &RequirementProfile,
    tag: TypeTag,
) -> bool {
    let Some(req) = profile.requirement(tag) else {
        return false;
    };
    let apex = profile.pose.position;
    if geometry.distance_to_patch(apex, index) > req.horizon_m {
        return false;
    }
    match req.fov {
        Some(fov) if fov < 2.0 * PI => {
            let d = geometry.patch_datum(index);
            let e = geometry.edge;
            let square = [
                d,
                Point2::new(d.x + e, d.y),
                Point2::new(d.x + e, d.y + e),
                Point2::new(d.x, d.y + e),
            ];
            sector_intersects_polygon(
                apex,
                profile.pose.heading,
                fov / 2.0,
                req.horizon_m,
                &square,
            )
        }
        _ => true,
    }
}

/// Whether a point lies inside the type's horizon disc and frustum.
pub fn point_in_horizon(point: Point2, profile: &RequirementProfile, tag: TypeTag) -> bool {
    let Some(req) = profile.requirement(tag) else {
        return false;
    };
    let rel = point - profile.pose.position;
    if rel.x.hypot(rel.y) > req.horizon_m {
        return false;
    }
    match req.fov {
        Some(fov) if fov < 2.0 * PI => {
            if rel.x == 0.0 && rel.y == 0.0 {
                return true;
            }
            let bearing = wrap_angle(rel.y.atan2(rel.x) - profile.pose.heading);
            bearing.abs() <= fov / 2.0 + 1e-12
        }
        _ => true,
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

fn cross(a: Point2, b: Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn rotate(v: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    Point2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Convex polygon vs. circular sector (apex, heading, half-angle, radius).
fn sector_intersects_polygon(
    apex: Point2,
    heading: f64,
    half_angle: f64,
    radius: f64,
    polygon: &[Point2],
) -> bool {
    // A sector wider than a half-plane is split into two convex wedges.
    let wedges: Vec<(f64, f64)> = if half_angle <= FRAC_PI_2 {
        vec![(heading, half_angle)]
    } else {
        let h = half_angle / 2.0;
        vec![(heading + h, h), (heading - h, h)]
    };
    wedges.into_iter().any(|(center, half)| {
        let dir = Point2::new(center.cos(), center.sin());
        let left = rotate(dir, half);
        let right = rotate(dir, -half);
        let mut poly = polygon.to_vec();
        poly = clip_half_plane(&poly, |p| cross(right, p - apex));
        poly = clip_half_plane(&poly, |p| cross(p - apex, left));
        !poly.is_empty() && distance_to_convex(apex, &poly) <= radius
    })
}

/// Keeps the part of `poly` where `side(p) ≥ 0`.
fn clip_half_plane(poly: &[Point2], side: impl Fn(Point2) -> f64) -> Vec<Point2> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            out.push(Point2::new(
                cur.x + t * (next.x - cur.x),
                cur.y + t * (next.y - cur.y),
            ));
        }
    }
    out
}

fn distance_to_convex(p: Point2, poly: &[Point2]) -> f64 {
    if poly.len() >= 3 {
        let inside = (0..poly.len()).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            cross(b - a, p - a) >= -1e-12
        });
        if inside {
            return 0.0;
        }
    }
    (0..poly.len())
        .map(|i| distance_to_segment(p, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

fn distance_to_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(Point2::new(a.x + t * ab.x, a.y + t * ab.y))
}

/// What [`apply_requirements`] changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MutationReport {
    pub patches_removed: usize,
    pub layers_removed: usize,
    pub layers_resampled: usize,
}

impl MutationReport {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// Realizes `profile` on `grid`.
///
/// Layers of inactive or unlisted types are removed, as are layers whose
/// patch leaves the type's horizon or frustum. Remaining layers are
/// resampled to the required step. Patches left without layers are deleted.
/// Nothing is allocated here; layers only appear when measurements arrive.
pub fn apply_requirements(
    grid: &mut GridMap,
    profile: &RequirementProfile,
    registry: &ResamplerRegistry,
) -> Result<MutationReport, ResampleError> {
    let geometry = grid.geometry();
    let mut report = MutationReport::default();
    let mut failure = None;
    grid.retain_patches(|patch| {
        let index = patch.index();
        patch.retain_layers(|&tag, layer| {
            let keep = profile.is_active(tag) && patch_in_horizon(&geometry, index, profile, tag);
            if !keep {
                report.layers_removed += 1;
                return false;
            }
            let step = profile
                .required_step_at(index, tag, geometry.edge)
                .expect("active type has a requirement");
            if layer.step() != step && failure.is_none() {
                match resample_layer(layer, step, registry) {
                    Ok(resampled) => {
                        *layer = resampled.into_owned();
                        report.layers_resampled += 1;
                    }
                    Err(e) => failure = Some(e),
                }
            }
            true
        });
        if patch.is_empty() {
            report.patches_removed += 1;
            false
        } else {
            true
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
