use std::collections::{BTreeMap, BTreeSet};

use apgm::fusion::{fuse_grids, FusionPolicy};
use apgm::grid::occupancy::{FREE, OCCUPIED};
use apgm::{Bba, CellIndex, GridMap, PatchIndex, Point2, TypeTag};
use proptest::prelude::*;

type Sketch = BTreeMap<(PatchIndex, TypeTag), (u8, Vec<(u32, u32, f32, f32)>)>;

/// Sparse grid description: a few patches with random types, steps and
/// a handful of non-vacuous cells.
fn grid_sketch() -> impl Strategy<Value = Sketch> {
    let key = (
        (-2i32..2, -2i32..2).prop_map(|(x, y)| PatchIndex::new(x, y)),
        prop::sample::select(TypeTag::ALL.to_vec()),
    );
    let cells = prop::collection::vec((0u32..8, 0u32..8, 0.0f32..0.6, 0.0f32..0.4), 0..6);
    prop::collection::btree_map(key, (2u8..5, cells), 0..6)
}

fn build(sketch: &Sketch) -> GridMap {
    let mut g = GridMap::new(Point2::default(), 12.8).unwrap();
    for (&(idx, tag), (step, cells)) in sketch {
        let layer = g.get_or_create_layer(idx, tag, *step).unwrap();
        let side = layer.side();
        for &(a, b, x, y) in cells {
            let mut m = vec![0.0; tag.dim()];
            m[0] = x as f64;
            m[1] = y as f64;
            layer
                .set_cell_masses(CellIndex::new(a % side, b % side), &m)
                .unwrap();
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn union_and_step_rule(
        sketches in prop::collection::vec(grid_sketch(), 1..4),
        r_occ in prop::option::of(1u8..6),
        r_sem in prop::option::of(1u8..6),
    ) {
        let grids: Vec<GridMap> = sketches.iter().map(build).collect();
        let refs: Vec<&GridMap> = grids.iter().collect();
        let mut policy = FusionPolicy::default();
        if let Some(r) = r_occ { policy.required_steps.insert(TypeTag::Occupancy, r); }
        if let Some(r) = r_sem { policy.required_steps.insert(TypeTag::Semantic, r); }
        let fused = fuse_grids(&refs, &policy).unwrap().value;

        let want_indices: BTreeSet<PatchIndex> =
            sketches.iter().flat_map(|s| s.keys().map(|k| k.0)).collect();
        prop_assert_eq!(fused.index_set(), want_indices);

        let mut want_types: BTreeMap<PatchIndex, BTreeSet<TypeTag>> = BTreeMap::new();
        let mut max_step: BTreeMap<(PatchIndex, TypeTag), u8> = BTreeMap::new();
        for s in &sketches {
            for (&(i, t), (r, _)) in s {
                want_types.entry(i).or_default().insert(t);
                let e = max_step.entry((i, t)).or_insert(0);
                *e = (*e).max(*r);
            }
        }
        for patch in fused.patches() {
            prop_assert_eq!(&patch.type_set(), &want_types[&patch.index()]);
            for layer in patch.layers() {
                let max = max_step[&(patch.index(), layer.tag())];
                let want = policy.required_steps.get(&layer.tag()).map_or(max, |&r| r.min(max));
                prop_assert_eq!(layer.step(), want);
            }
        }
    }

    #[test]
    fn order_invariant(a in grid_sketch(), b in grid_sketch(), c in grid_sketch()) {
        let (ga, gb, gc) = (build(&a), build(&b), build(&c));
        let policy = FusionPolicy::default();
        let x = fuse_grids(&[&ga, &gb, &gc], &policy).unwrap().value;
        let y = fuse_grids(&[&gc, &ga, &gb], &policy).unwrap().value;
        prop_assert_eq!(x.index_set(), y.index_set());
        for (p, q) in x.patches().zip(y.patches()) {
            for (l, m) in p.layers().zip(q.layers()) {
                prop_assert_eq!(l.step(), m.step());
                for (u, v) in l.masses().iter().zip(m.masses()) {
                    prop_assert!((u - v).abs() < 1e-6, "{} vs {}", u, v);
                }
            }
        }
    }
}

/// Two overlapping lidar grids on a two-patch fixture, checked cell by cell
/// against Dempster's rule evaluated on `Bba` values.
#[test]
fn overlapping_sources_cellwise() {
    let mut front = GridMap::new(Point2::default(), 12.8).unwrap();
    let mut rear = GridMap::new(Point2::default(), 12.8).unwrap();
    let p0 = PatchIndex::new(0, 0);
    let p1 = PatchIndex::new(1, 0);
    for (i, a) in (0..16u32).enumerate() {
        let o = 0.05 * (i % 10) as f64;
        front
            .get_or_create_layer(p0, TypeTag::Occupancy, 4)
            .unwrap()
            .set_cell_masses(CellIndex::new(a, 3), &[o, 0.0])
            .unwrap();
        rear.get_or_create_layer(p0, TypeTag::Occupancy, 4)
            .unwrap()
            .set_cell_masses(CellIndex::new(a, 3), &[0.0, 0.3 + 0.02 * i as f64])
            .unwrap();
    }
    rear.get_or_create_layer(p1, TypeTag::Occupancy, 4)
        .unwrap()
        .set_cell_masses(CellIndex::new(0, 0), &[0.7, 0.0])
        .unwrap();

    let fused = fuse_grids(&[&front, &rear], &FusionPolicy::default()).unwrap();
    assert_eq!(fused.conflicts, 0);
    let g = fused.value;
    assert!(g.cell_count(Some(TypeTag::Occupancy)) >= front.cell_count(Some(TypeTag::Occupancy)));
    assert!(g.cell_count(Some(TypeTag::Occupancy)) >= rear.cell_count(Some(TypeTag::Occupancy)));

    let fl = front.patch(p0).unwrap().layer(TypeTag::Occupancy).unwrap();
    let rl = rear.patch(p0).unwrap().layer(TypeTag::Occupancy).unwrap();
    let gl = g.patch(p0).unwrap().layer(TypeTag::Occupancy).unwrap();
    for (cell, m) in gl.cells() {
        let x: Bba = fl.cell(cell).unwrap();
        let y: Bba = rl.cell(cell).unwrap();
        let (want, _) = x.combine(&y).unwrap();
        assert!((m[OCCUPIED] as f64 - want.singleton(OCCUPIED)).abs() < 1e-6);
        assert!((m[FREE] as f64 - want.singleton(FREE)).abs() < 1e-6);
    }
    assert_eq!(
        g.patch(p1).unwrap().layer(TypeTag::Occupancy),
        rear.patch(p1).unwrap().layer(TypeTag::Occupancy)
    );
}
