//! Measurement grids built from single sensor readings.
//!
//! Occupancy follows the grid measurement model: each point inside a cell is
//! relevant to that cell's occupancy with probability `mu_hit`, so `k` points
//! give `m(O) = 1 - (1 - mu_hit)^k`. Free evidence is only assigned to cells
//! without any hit, from the rays between sensor and returns.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::evidence::combine_masses;
use crate::grid::{occupancy, CellIndex, GridGeometry, GridMap, PatchIndex, Point2, TypeTag};
use crate::requirements::{patch_in_horizon, point_in_horizon, RequirementProfile};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid sensor parameter: {0}")]
    InvalidParam(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-projected returns of one scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub origin: Point2,
    pub points: Vec<Point2>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModelParams {
    pub mu_hit: f64,
    pub mu_free: f64,
    pub max_range: f64,
}

impl SensorModelParams {
    pub fn new(mu_hit: f64, mu_free: f64, max_range: f64) -> Result<Self, SensorError> {
        if !(mu_hit > 0.0 && mu_hit <= 1.0) {
            return Err(SensorError::InvalidParam(format!(
                "mu_hit must lie in (0, 1], got {mu_hit}"
            )));
        }
        if !(mu_free > 0.0 && mu_free < 1.0) {
            return Err(SensorError::InvalidParam(format!(
                "mu_free must lie in (0, 1), got {mu_free}"
            )));
        }
        if max_range.is_nan() || max_range <= 0.0 {
            return Err(SensorError::InvalidParam(format!(
                "max_range must be positive, got {max_range}"
            )));
        }
        Ok(Self {
            mu_hit,
            mu_free,
            max_range,
        })
    }
}

impl Default for SensorModelParams {
    fn default() -> Self {
        Self {
            mu_hit: 0.6,
            mu_free: 0.3,
            max_range: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticLabel {
    Road,
    Marking,
    Blocked,
    Unknown,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 4] = [
        SemanticLabel::Road,
        SemanticLabel::Marking,
        SemanticLabel::Blocked,
        SemanticLabel::Unknown,
    ];

    /// Position of the label in the semantic frame.
    pub fn index(self) -> usize {
        use crate::grid::semantic::*;
        match self {
            SemanticLabel::Road => ROAD,
            SemanticLabel::Marking => MARKING,
            SemanticLabel::Blocked => BLOCKED,
            SemanticLabel::Unknown => UNKNOWN,
        }
    }

    pub fn as_str(self) -> &'static str {
        crate::grid::semantic::LABELS[self.index()]
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        SemanticLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| format!("unknown semantic label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point2,
    pub label: SemanticLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticObservation {
    pub origin: Point2,
    pub points: Vec<LabeledPoint>,
    pub timestamp: f64,
}

/// `m(O) = 1 - (1 - mu_hit)^k` for `k` points in one cell.
pub fn occupancy_evidence(points_in_cell: usize, params: &SensorModelParams) -> f64 {
    1.0 - (1.0 - params.mu_hit).powi(points_in_cell as i32)
}

/// Cells strictly between the origin cell and the endpoint cell that the
/// segment passes through, in order, on the lattice of step `step`.
///
/// Parametric grid traversal on the global lattice, so the path continues
/// seamlessly across patch borders. When the segment passes exactly through a
/// lattice corner both coordinates advance together; the side cells are only
/// touched at a point and are not visited.
pub fn ray_traverse(
    origin: Point2,
    endpoint: Point2,
    geometry: &GridGeometry,
    step: u8,
) -> Vec<(PatchIndex, CellIndex)> {
    let mut out = Vec::new();
    traverse_global(origin, endpoint, geometry, step, 1.0, |g| {
        out.push(geometry.split_global(g, step));
    });
    out
}

const CORNER_TIE: f64 = 1e-12;

fn traverse_global(
    origin: Point2,
    endpoint: Point2,
    geometry: &GridGeometry,
    step: u8,
    t_limit: f64,
    mut visit: impl FnMut((i64, i64)),
) {
    let start = geometry.global_cell_of(origin, step);
    let goal = geometry.global_cell_of(endpoint, step);
    if start == goal {
        return;
    }
    let w = geometry.cell_size(step);
    let d = endpoint - origin;
    let axis = |o: f64, dir: f64, cell: i64, datum: f64| -> (i64, f64, f64) {
        if dir > 0.0 {
            (1, ((cell + 1) as f64 * w + datum - o) / dir, w / dir)
        } else if dir < 0.0 {
            (-1, (cell as f64 * w + datum - o) / dir, -w / dir)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(origin.x, d.x, start.0, geometry.datum.x);
    let (sy, mut ty, dty) = axis(origin.y, d.y, start.1, geometry.datum.y);
    let budget = (goal.0 - start.0).unsigned_abs() + (goal.1 - start.1).unsigned_abs();
    let mut cell = start;
    for _ in 0..budget {
        let t;
        if (tx - ty).abs() <= CORNER_TIE {
            t = tx.min(ty);
            cell.0 += sx;
            cell.1 += sy;
            tx += dtx;
            ty += dty;
        } else if tx < ty {
            t = tx;
            cell.0 += sx;
            tx += dtx;
        } else {
            t = ty;
            cell.1 += sy;
            ty += dty;
        }
        if cell == goal || t > t_limit || t > 1.0 + 1e-9 {
            return;
        }
        visit(cell);
    }
}

/// Largest `t ∈ [0, 1]` with `origin + t·(end - origin)` inside the disc.
/// Returns 1 when the origin itself is outside the disc.
fn clip_to_disc(origin: Point2, end: Point2, center: Point2, radius: f64) -> f64 {
    let d = end - origin;
    let f = origin - center;
    let c = f.x * f.x + f.y * f.y - radius * radius;
    if c > 0.0 {
        return 1.0;
    }
    let a = d.x * d.x + d.y * d.y;
    if a == 0.0 {
        return 1.0;
    }
    let b = 2.0 * (f.x * d.x + f.y * d.y);
    let disc = (b * b - 4.0 * a * c).max(0.0);
    ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
}

struct OccScratch {
    hits: Vec<u32>,
    rays: Vec<u32>,
}

/// Per-patch hit and ray counters, allocated on first touch of a patch inside
/// the horizon. Consecutive lookups mostly hit the same patch, so the last one
/// is cached.
struct OccCounters<'a> {
    geometry: &'a GridGeometry,
    profile: &'a RequirementProfile,
    cells: usize,
    slots: HashMap<PatchIndex, Option<usize>>,
    bufs: Vec<(PatchIndex, OccScratch)>,
    last: Option<(PatchIndex, Option<usize>)>,
}

impl OccCounters<'_> {
    fn slot(&mut self, patch: PatchIndex) -> Option<&mut OccScratch> {
        let slot = match self.last {
            Some((p, s)) if p == patch => s,
            _ => {
                let s = match self.slots.get(&patch) {
                    Some(&s) => s,
                    None => {
                        let s = patch_in_horizon(
                            self.geometry,
                            patch,
                            self.profile,
                            TypeTag::Occupancy,
                        )
                        .then(|| {
                            self.bufs.push((
                                patch,
                                OccScratch {
                                    hits: vec![0; self.cells],
                                    rays: vec![0; self.cells],
                                },
                            ));
                            self.bufs.len() - 1
                        });
                        self.slots.insert(patch, s);
                        s
                    }
                };
                self.last = Some((patch, s));
                s
            }
        };
        slot.map(|i| &mut self.bufs[i].1)
    }
}

/// Occupancy measurement grid of one scan under `profile`.
///
/// Returns an empty grid when the profile does not request occupancy. Only
/// patches inside the occupancy horizon are ever allocated.
pub fn measurement_grid_occupancy(
    cloud: &PointCloud,
    params: &SensorModelParams,
    geometry: &GridGeometry,
    profile: &RequirementProfile,
) -> GridMap {
    let tag = TypeTag::Occupancy;
    let mut grid = GridMap::with_geometry(*geometry);
    let (Some(req), Some(step)) = (
        profile.requirement(tag),
        profile.required_step(tag, geometry.edge),
    ) else {
        return grid;
    };
    if !req.active {
        return grid;
    }
    let side = 1usize << step;
    let cells = side * side;
    let mut counters = OccCounters {
        geometry,
        profile,
        cells,
        slots: HashMap::new(),
        bufs: Vec::new(),
        last: None,
    };

    let in_range: Vec<Point2> = cloud
        .points
        .iter()
        .copied()
        .filter(|p| p.distance(cloud.origin) <= params.max_range)
        .collect();

    for &p in &in_range {
        let (patch, cell) = geometry.locate(p, step);
        if let Some(s) = counters.slot(patch) {
            s.hits[cell.b as usize * side + cell.a as usize] += 1;
        }
    }

    // Any point of a patch that touches the horizon disc lies within one patch
    // diagonal of it, so rays can stop there.
    let reach = req.horizon_m + geometry.edge * std::f64::consts::SQRT_2;
    for &p in &in_range {
        let t_limit = clip_to_disc(cloud.origin, p, profile.pose.position, reach);
        traverse_global(cloud.origin, p, geometry, step, t_limit, |g| {
            let (patch, cell) = geometry.split_global(g, step);
            if let Some(s) = counters.slot(patch) {
                s.rays[cell.b as usize * side + cell.a as usize] += 1;
            }
        });
    }

    let mut masses = [0.0f64; 2];
    for (index, s) in counters.bufs {
        let layer = grid
            .get_or_create_layer(index, tag, step)
            .expect("fresh grid has no conflicting layer");
        for (i, (&hits, &rays)) in s.hits.iter().zip(&s.rays).enumerate() {
            if hits == 0 && rays == 0 {
                continue;
            }
            if hits > 0 {
                masses[occupancy::OCCUPIED] = occupancy_evidence(hits as usize, params);
                masses[occupancy::FREE] = 0.0;
            } else {
                masses[occupancy::OCCUPIED] = 0.0;
                masses[occupancy::FREE] = 1.0 - (1.0 - params.mu_free).powi(rays as i32);
            }
            let cell = CellIndex::new((i % side) as u32, (i / side) as u32);
            layer
                .set_cell_masses(cell, &masses)
                .expect("index within layer");
        }
    }
    grid
}

/// Semantic measurement grid plus the number of cells reset by total conflict.
#[derive(Debug, Clone)]
pub struct SemanticMeasurement {
    pub grid: GridMap,
    pub conflicts: usize,
}

/// Semantic measurement grid of one camera frame under `profile`.
///
/// Each labeled point is a simple support BBA (`confidence` on its label, the
/// rest on `Ω`); points falling in one cell are combined with Dempster's
/// rule. A cell that hits total conflict is reset to vacuous and counted.
pub fn measurement_grid_semantic(
    obs: &SemanticObservation,
    geometry: &GridGeometry,
    profile: &RequirementProfile,
) -> SemanticMeasurement {
    let tag = TypeTag::Semantic;
    let mut grid = GridMap::with_geometry(*geometry);
    let mut conflicts = 0;
    let (Some(req), Some(step)) = (
        profile.requirement(tag),
        profile.required_step(tag, geometry.edge),
    ) else {
        return SemanticMeasurement { grid, conflicts };
    };
    if !req.active {
        return SemanticMeasurement { grid, conflicts };
    }
    const DIM: usize = 4;
    let mut allowed: HashMap<PatchIndex, bool> = HashMap::new();
    let mut cells: BTreeMap<(PatchIndex, CellIndex), ([f64; DIM], f64)> = BTreeMap::new();
    for lp in &obs.points {
        if !point_in_horizon(lp.position, profile, tag) {
            continue;
        }
        let (patch, cell) = geometry.locate(lp.position, step);
        if !*allowed
            .entry(patch)
            .or_insert_with(|| patch_in_horizon(geometry, patch, profile, tag))
        {
            continue;
        }
        let conf = lp.confidence.clamp(0.0, 1.0);
        let mut single = [0.0; DIM];
        single[lp.label.index()] = conf;
        let entry = cells.entry((patch, cell)).or_insert(([0.0; DIM], 1.0));
        let mut out = [0.0; DIM];
        match combine_masses(&entry.0, entry.1, &single, 1.0 - conf, &mut out) {
            Ok((omega, _)) => *entry = (out, omega),
            Err(_) => {
                conflicts += 1;
                *entry = ([0.0; DIM], 1.0);
            }
        }
    }
    for ((patch, cell), (masses, _)) in cells {
        grid.get_or_create_layer(patch, tag, step)
            .expect("fresh grid has no conflicting layer")
            .set_cell_masses(cell, &masses)
            .expect("index within layer");
    }
    SemanticMeasurement { grid, conflicts }
}

/// One line of the text point format: `x y [label confidence]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixturePoint {
    pub position: Point2,
    pub label: Option<(SemanticLabel, f64)>,
}

/// Parses the text point format. Blank lines and `#` comments are skipped.
pub fn parse_points(text: &str) -> Result<Vec<FixturePoint>, SensorError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SensorError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 4 {
            return Err(err(format!(
                "expected `x y` or `x y label confidence`, got {} fields",
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{s}` is not a finite number")))
        };
        let position = Point2::new(num(fields[0])?, num(fields[1])?);
        let label = if fields.len() == 4 {
            let label = fields[2].parse::<SemanticLabel>().map_err(err)?;
            let conf = num(fields[3])?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(err(format!("confidence {conf} outside [0, 1]")));
            }
            Some((label, conf))
        } else {
            None
        };
        out.push(FixturePoint { position, label });
    }
    Ok(out)
}

pub fn load_points(path: impl AsRef<Path>) -> Result<Vec<FixturePoint>, SensorError> {
    parse_points(&std::fs::read_to_string(path)?)
}

impl PointCloud {
    pub fn from_fixture(origin: Point2, points: &[FixturePoint]) -> Self {
        Self {
            origin,
            points: points.iter().map(|p| p.position).collect(),
            timestamp: 0.0,
        }
    }
}

impl SemanticObservation {
    /// Keeps only the labeled fixture points.
    pub fn from_fixture(origin: Point2, points: &[FixturePoint]) -> Self {
        Self {
            origin,
            points: points
                .iter()
                .filter_map(|p| {
                    p.label.map(|(label, confidence)| LabeledPoint {
                        position: p.position,
                        label,
                        confidence,
                    })
                })
                .collect(),
            timestamp: 0.0,
        }
    }
}
