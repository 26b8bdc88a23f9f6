//! Synthetic static world: obstacles for the lidars, labeled ground regions
//! for the camera.

use apgm::sensor::SemanticLabel;
use apgm::Point2;

use crate::config::WorldConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point2::new(x0.min(x1), y0.min(y1)),
            max: Point2::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn polygon(&self) -> Vec<Point2> {
        vec![
            self.min,
            Point2::new(self.max.x, self.min.y),
            self.max,
            Point2::new(self.min.x, self.max.y),
        ]
    }

    /// Entry parameter of the ray `o + t·d`, `t ≥ 0`, into the rectangle
    /// (slab method). A ray starting inside reports its exit.
    fn ray_hit(&self, o: Point2, d: Point2) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (o, d, lo, hi) in [
            (o.x, d.x, self.min.x, self.max.x),
            (o.y, d.y, self.min.y, self.max.y),
        ] {
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let a = (lo - o) / d;
                let b = (hi - o) / d;
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t1 < t0 || t1 < 0.0 {
            return None;
        }
        Some(if t0 >= 0.0 { t0 } else { t1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    fn ray_hit(&self, o: Point2, d: Point2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = d.x * e.y - d.y * e.x;
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = self.a - o;
        let t = (w.x * e.y - w.y * e.x) / denom;
        let u = (w.x * d.y - w.y * d.x) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub polygon: Vec<Point2>,
    pub label: SemanticLabel,
}

impl Region {
    pub fn contains(&self, p: Point2) -> bool {
        // Even-odd crossing test.
        let mut inside = false;
        let n = self.polygon.len();
        for i in 0..n {
            let (a, b) = (self.polygon[i], self.polygon[(i + n - 1) % n]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
        }
        inside
    }

    fn x_extent(&self) -> (f64, f64) {
        self.polygon
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.x), hi.max(p.x))
            })
    }
}

/// Regions bucketed along x, so a lookup only tests nearby polygons.
/// Agrees with [`World::label_at`].
pub struct LabelIndex<'a> {
    regions: &'a [Region],
    x0: f64,
    bin: f64,
    buckets: Vec<Vec<usize>>,
}

impl LabelIndex<'_> {
    pub fn label_at(&self, p: Point2) -> SemanticLabel {
        let k = ((p.x - self.x0) / self.bin).floor();
        if !(k >= 0.0 && (k as usize) < self.buckets.len()) {
            return SemanticLabel::Unknown;
        }
        self.buckets[k as usize]
            .iter()
            .map(|&i| &self.regions[i])
            .find(|r| r.contains(p))
            .map_or(SemanticLabel::Unknown, |r| r.label)
    }
}

#[derive(Debug, Clone, Default)]
pub struct World {
    pub obstacles: Vec<Rect>,
    pub walls: Vec<Segment>,
    /// Ground truth labels; the first region containing a point wins.
    pub regions: Vec<Region>,
    pub bounds: Option<Rect>,
}

impl World {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Distance along the unit direction `dir` from `o` to the first surface,
    /// if any lies within `max_range`.
    pub fn cast(&self, o: Point2, dir: Point2, max_range: f64) -> Option<f64> {
        let rects = self.obstacles.iter().filter_map(|r| r.ray_hit(o, dir));
        let walls = self.walls.iter().filter_map(|s| s.ray_hit(o, dir));
        rects
            .chain(walls)
            .filter(|&t| t <= max_range)
            .min_by(f64::total_cmp)
    }

    pub fn label_at(&self, p: Point2) -> SemanticLabel {
        self.regions
            .iter()
            .find(|r| r.contains(p))
            .map_or(SemanticLabel::Unknown, |r| r.label)
    }

    pub fn label_index(&self) -> LabelIndex<'_> {
        const BIN: f64 = 8.0;
        let extents: Vec<(f64, f64)> = self.regions.iter().map(Region::x_extent).collect();
        let lo = extents.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let hi = extents
            .iter()
            .map(|e| e.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if lo > hi {
            return LabelIndex {
                regions: &self.regions,
                x0: 0.0,
                bin: BIN,
                buckets: Vec::new(),
            };
        }
        let n = ((hi - lo) / BIN).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); n];
        for (i, &(a, b)) in extents.iter().enumerate() {
            let first = ((a - lo) / BIN).floor() as usize;
            let last = (((b - lo) / BIN).floor() as usize).min(n - 1);
            for bucket in &mut buckets[first..=last] {
                bucket.push(i);
            }
        }
        LabelIndex {
            regions: &self.regions,
            x0: lo,
            bin: BIN,
            buckets,
        }
    }

    pub fn add_obstacle(&mut self, r: Rect) {
        self.obstacles.push(r);
        self.regions.push(Region {
            polygon: r.polygon(),
            label: SemanticLabel::Blocked,
        });
    }

    fn add_region(&mut self, r: Rect, label: SemanticLabel) {
        self.regions.push(Region {
            polygon: r.polygon(),
            label,
        });
    }

    /// Parking lot A, a road corridor lined with buildings, parking lot B.
    ///
    /// Lot A spans `[0, L]²`, the road runs along `y ∈ [24, 36]` from `x = L`
    /// for `road_length_m`, and lot B continues behind it. Both lot walls
    /// leave an opening where the road meets them.
    pub fn default_layout(cfg: &WorldConfig) -> Self {
        let mut w = World::empty();
        let l = cfg.lot_size_m;
        let x_road_end = l + cfg.road_length_m;
        let x_b_end = x_road_end + l;
        let (road_lo, road_hi) = (24.0, 36.0);
        let t = 0.3;

        // Markings first so they take priority over the road surface.
        let dash = 3.0;
        let mut x = l + 2.0;
        while x + dash < x_road_end - 2.0 {
            w.add_region(Rect::new(x, 29.9, x + dash, 30.1), SemanticLabel::Marking);
            x += 2.0 * dash;
        }
        for y in [road_lo + 0.2, road_hi - 0.4] {
            w.add_region(Rect::new(l, y, x_road_end, y + 0.2), SemanticLabel::Marking);
        }

        for (x0, x1) in [(0.0, l), (x_road_end, x_b_end)] {
            // Perimeter walls with an opening toward the road.
            w.add_obstacle(Rect::new(x0, 0.0, x1, t));
            w.add_obstacle(Rect::new(x0, l - t, x1, l));
            let (near, far) = if x0 == 0.0 {
                (x0, x1 - t)
            } else {
                (x1 - t, x0)
            };
            w.add_obstacle(Rect::new(near, 0.0, near + t, l));
            w.add_obstacle(Rect::new(far, 0.0, far + t, road_lo));
            w.add_obstacle(Rect::new(far, road_hi, far + t, l));
            // Two rows of parked cars along the north and south edges.
            let mut cx = x0 + 4.0;
            while cx + 2.0 < x1 - 4.0 {
                w.add_obstacle(Rect::new(cx, 2.0, cx + 2.0, 6.5));
                w.add_obstacle(Rect::new(cx, l - 6.5, cx + 2.0, l - 2.0));
                cx += 3.5;
            }
            // Island of cars in the middle, clear of the drive lanes.
            let mut cx = x0 + 12.0;
            while cx + 2.0 < x1 - 12.0 {
                w.add_obstacle(Rect::new(cx, 40.0, cx + 2.0, 44.5));
                cx += 3.5;
            }
            w.add_region(Rect::new(x0, 0.0, x1, l), SemanticLabel::Road);
        }

        // Buildings along both sides of the road, with gaps between blocks.
        let mut bx = l + cfg.gap_m;
        while bx < x_road_end - cfg.gap_m {
            let bx1 = (bx + cfg.block_length_m).min(x_road_end - cfg.gap_m);
            w.add_obstacle(Rect::new(bx, 40.0, bx1, 55.0));
            w.add_obstacle(Rect::new(bx, 5.0, bx1, 20.0));
            bx = bx1 + cfg.gap_m;
        }
        if cfg.noise_barriers {
            w.add_obstacle(Rect::new(l, l, x_road_end, l + 2.0));
            w.add_obstacle(Rect::new(l, -2.0, x_road_end, 0.0));
        }
        // Curbs are blocked ground for the camera but invisible to the lidars.
        for (y0, y1) in [(road_lo - 0.5, road_lo), (road_hi, road_hi + 0.5)] {
            w.add_region(Rect::new(l, y0, x_road_end, y1), SemanticLabel::Blocked);
        }
        w.add_region(
            Rect::new(l, road_lo, x_road_end, road_hi),
            SemanticLabel::Road,
        );
        w.bounds = Some(Rect::new(-5.0, -5.0, x_b_end + 5.0, l + 5.0));
        w
    }
}
