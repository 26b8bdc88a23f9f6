use std::collections::{BTreeMap, BTreeSet};

use apgm::grid::occupancy::{FREE, OCCUPIED};
use apgm::requirements::{Pose2, RequirementProfile, TypeRequirement};
use apgm::sensor::{
    measurement_grid_occupancy, measurement_grid_semantic, occupancy_evidence, parse_points,
    ray_traverse, PointCloud, SemanticObservation, SensorModelParams,
};
use apgm::{CellIndex, GridGeometry, PatchIndex, Point2, TypeTag};
use proptest::prelude::*;

/// Global lattice cells whose open interior the segment crosses, ordered by
/// entry parameter. Each candidate cell in the bounding box is clipped
/// against the segment (Liang-Barsky); a cell counts when the clipped piece
/// has positive length and its midpoint is strictly inside the cell.
fn supercover(o: Point2, e: Point2, w: f64) -> Vec<(i64, i64)> {
    let lo = |a: f64, b: f64| (a.min(b) / w).floor() as i64 - 1;
    let hi = |a: f64, b: f64| (a.max(b) / w).floor() as i64 + 1;
    let d = e - o;
    let mut hits = Vec::new();
    for i in lo(o.x, e.x)..=hi(o.x, e.x) {
        for j in lo(o.y, e.y)..=hi(o.y, e.y) {
            let (x0, x1) = (i as f64 * w, (i + 1) as f64 * w);
            let (y0, y1) = (j as f64 * w, (j + 1) as f64 * w);
            let mut t0: f64 = 0.0;
            let mut t1: f64 = 1.0;
            let mut ok = true;
            for (p, q) in [
                (-d.x, o.x - x0),
                (d.x, x1 - o.x),
                (-d.y, o.y - y0),
                (d.y, y1 - o.y),
            ] {
                if p == 0.0 {
                    if q < 0.0 {
                        ok = false;
                    }
                } else {
                    let r = q / p;
                    if p < 0.0 {
                        t0 = t0.max(r);
                    } else {
                        t1 = t1.min(r);
                    }
                }
            }
            if !ok || t1 - t0 <= 1e-12 {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let m = Point2::new(o.x + tm * d.x, o.y + tm * d.y);
            if m.x > x0 && m.x < x1 && m.y > y0 && m.y < y1 {
                hits.push((t0, (i, j)));
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|(_, c)| c).collect()
}

fn global(p: Point2, w: f64) -> (i64, i64) {
    ((p.x / w).floor() as i64, (p.y / w).floor() as i64)
}

fn geometry() -> GridGeometry {
    GridGeometry::new(Point2::default(), 12.8).unwrap()
}

fn expected_path(o: Point2, e: Point2, step: u8) -> Vec<(PatchIndex, CellIndex)> {
    let g = geometry();
    let w = g.cell_size(step);
    let (start, goal) = (global(o, w), global(e, w));
    supercover(o, e, w)
        .into_iter()
        .filter(|&c| c != start && c != goal)
        .map(|c| g.split_global(c, step))
        .collect()
}

fn point() -> impl Strategy<Value = Point2> {
    (-30.0f64..30.0, -30.0f64..30.0).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn traversal_matches_supercover(o in point(), e in point(), step in 2u8..6) {
        prop_assert_eq!(ray_traverse(o, e, &geometry(), step), expected_path(o, e, step));
    }
}

#[test]
fn traversal_examples() {
    let g = geometry();
    let o = Point2::new(0.05, 0.05);
    assert!(ray_traverse(o, o, &g, 7).is_empty());
    let path = ray_traverse(o, Point2::new(1.05, 0.05), &g, 7);
    assert_eq!(path.len(), 9);
    assert_eq!(path, expected_path(o, Point2::new(1.05, 0.05), 7));

    // Diagonal through lattice corners, crossing the patch border at 12.8.
    let o = Point2::new(11.85, 11.85);
    let e = Point2::new(14.15, 14.15);
    let path = ray_traverse(o, e, &g, 5);
    let globals: Vec<(i64, i64)> = path
        .iter()
        .map(|(p, c)| (p.ix as i64 * 32 + c.a as i64, p.iy as i64 * 32 + c.b as i64))
        .collect();
    for pair in globals.windows(2) {
        assert_eq!(pair[1].0, pair[0].0 + 1);
        assert_eq!(pair[1].1, pair[0].1 + 1);
    }
    assert!(path.iter().any(|(p, _)| *p == PatchIndex::new(1, 1)));
    assert_eq!(path, expected_path(o, e, 5));
}

fn profile(horizon: f64, cell: f64) -> RequirementProfile {
    RequirementProfile::new(Pose2::default())
        .with_type(TypeTag::Occupancy, TypeRequirement::new(horizon, cell))
        .with_type(TypeTag::Semantic, TypeRequirement::new(horizon, cell))
}

/// Occupancy measurement grid rebuilt from the definition: per cell count
/// the points and the rays whose supercover crosses it, ignoring patches.
fn occupancy_oracle(
    cloud: &PointCloud,
    params: &SensorModelParams,
    step: u8,
) -> BTreeMap<(i64, i64), (f64, f64)> {
    let w = geometry().cell_size(step);
    let mut hits: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    let mut rays: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    for &p in &cloud.points {
        *hits.entry(global(p, w)).or_default() += 1;
        let (start, goal) = (global(cloud.origin, w), global(p, w));
        for c in supercover(cloud.origin, p, w) {
            if c != start && c != goal {
                *rays.entry(c).or_default() += 1;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (&c, &k) in &hits {
        out.insert(c, (1.0 - (1.0 - params.mu_hit).powi(k as i32), 0.0));
    }
    for (&c, &n) in &rays {
        out.entry(c)
            .or_insert((0.0, 1.0 - (1.0 - params.mu_free).powi(n as i32)));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn occupancy_grid_matches_rasterizer(
        origin in (-3.0f64..3.0, -3.0f64..3.0),
        pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 0..25),
        mu_hit in 0.05f64..0.95,
        mu_free in 0.05f64..0.95,
    ) {
        let step = 4;
        let params = SensorModelParams::new(mu_hit, mu_free, 1000.0).unwrap();
        let cloud = PointCloud {
            origin: Point2::new(origin.0, origin.1),
            points: pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            timestamp: 0.0,
        };
        let g = geometry();
        let grid = measurement_grid_occupancy(&cloud, &params, &g, &profile(1000.0, 0.8));
        let oracle = occupancy_oracle(&cloud, &params, step);

        let oracle_patches: BTreeSet<PatchIndex> =
            oracle.keys().map(|&c| g.split_global(c, step).0).collect();
        prop_assert_eq!(grid.index_set(), oracle_patches);

        let side = 1i64 << step;
        let mut seen = 0;
        for patch in grid.patches() {
            let layer = patch.layer(TypeTag::Occupancy).unwrap();
            prop_assert_eq!(layer.step(), step);
            for (cell, m) in layer.cells() {
                let o = m[OCCUPIED] as f64;
                let f = m[FREE] as f64;
                prop_assert!(o == 0.0 || f == 0.0, "cell with both occupied and free mass");
                let key = (
                    patch.index().ix as i64 * side + cell.a as i64,
                    patch.index().iy as i64 * side + cell.b as i64,
                );
                let (eo, ef) = oracle.get(&key).copied().unwrap_or((0.0, 0.0));
                prop_assert!((o - eo).abs() < 1e-6 && (f - ef).abs() < 1e-6);
                if o > 0.0 || f > 0.0 {
                    seen += 1;
                }
            }
        }
        prop_assert_eq!(seen, oracle.len());
    }

    #[test]
    fn occupancy_stays_inside_horizon(
        pts in prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 1..40),
        horizon in 1.0f64..30.0,
    ) {
        let params = SensorModelParams::default();
        let cloud = PointCloud {
            origin: Point2::default(),
            points: pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            timestamp: 0.0,
        };
        let g = geometry();
        let grid = measurement_grid_occupancy(&cloud, &params, &g, &profile(horizon, 0.8));
        for index in grid.index_set() {
            prop_assert!(g.distance_to_patch(Point2::default(), index) <= horizon);
        }
    }

    #[test]
    fn evidence_monotone(k in 0usize..50, a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let p_lo = SensorModelParams::new(lo, 0.3, 100.0).unwrap();
        let p_hi = SensorModelParams::new(hi, 0.3, 100.0).unwrap();
        prop_assert!(occupancy_evidence(k + 1, &p_lo) >= occupancy_evidence(k, &p_lo));
        prop_assert!(occupancy_evidence(k, &p_hi) >= occupancy_evidence(k, &p_lo));
    }
}

#[test]
fn occupancy_examples() {
    let g = geometry();
    let params = SensorModelParams::new(0.6, 0.3, 120.0).unwrap();
    let p = profile(100.0, 0.1);
    let empty = PointCloud {
        origin: Point2::default(),
        points: vec![],
        timestamp: 0.0,
    };
    assert!(measurement_grid_occupancy(&empty, &params, &g, &p).is_empty());

    let two = PointCloud {
        origin: Point2::new(0.05, 0.05),
        points: vec![Point2::new(3.02, 0.03), Point2::new(3.07, 0.08)],
        timestamp: 0.0,
    };
    let grid = measurement_grid_occupancy(&two, &params, &g, &p);
    let m = grid
        .patch(PatchIndex::new(0, 0))
        .unwrap()
        .layer(TypeTag::Occupancy)
        .unwrap()
        .cell(CellIndex::new(30, 0))
        .unwrap();
    assert!((m.singleton(OCCUPIED) - 0.84).abs() < 1e-6);
    assert!(
        (occupancy_evidence(10, &SensorModelParams::new(0.5, 0.3, 1.0).unwrap()) - 0.9990234375)
            .abs()
            < 1e-12
    );
}

#[test]
fn fixture_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("apgm-fixture-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("scan.txt");
    std::fs::write(
        &path,
        "# two returns and two labels\n5.05 0.05\n5.05 0.05\n\n2.0 1.0 road 0.5\n2.0 1.0 Road 0.5\n",
    )
    .unwrap();
    let pts = apgm::sensor::load_points(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(pts.len(), 4);

    let g = geometry();
    let p = profile(40.0, 0.1);
    let cloud = PointCloud::from_fixture(Point2::new(0.05, 0.05), &pts);
    let grid = measurement_grid_occupancy(&cloud, &SensorModelParams::default(), &g, &p);
    let layer = grid
        .patch(PatchIndex::new(0, 0))
        .unwrap()
        .layer(TypeTag::Occupancy)
        .unwrap();
    assert!(
        (layer
            .cell(CellIndex::new(50, 0))
            .unwrap()
            .singleton(OCCUPIED)
            - 0.84)
            .abs()
            < 1e-6
    );

    let obs = SemanticObservation::from_fixture(Point2::default(), &pts);
    assert_eq!(obs.points.len(), 2);
    let sem = measurement_grid_semantic(&obs, &g, &p);
    assert_eq!(sem.conflicts, 0);
    let cell = g.locate(Point2::new(2.0, 1.0), 7);
    let bba = sem
        .grid
        .patch(cell.0)
        .unwrap()
        .layer(TypeTag::Semantic)
        .unwrap()
        .cell(cell.1)
        .unwrap();
    assert!((bba.mass_of("road").unwrap() - 0.75).abs() < 1e-6);
    assert!((bba.omega() - 0.25).abs() < 1e-6);

    assert!(parse_points("1 2 3").is_err());
    assert!(parse_points("1 2 lava 0.5").is_err());
    assert!(parse_points("1 2 road 1.5").is_err());
}
