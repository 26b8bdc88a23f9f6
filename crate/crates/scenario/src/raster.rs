//! Grayscale raster export of one information type.

use std::io::{self, Write};
use std::path::Path;

use apgm::{GridMap, Point2, TypeTag};

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: Point2,
    pub max: Point2,
}

impl Region {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    /// Bounding box of every patch that carries a `tag` layer.
    pub fn of_grid(grid: &GridMap, tag: TypeTag) -> Option<Self> {
        let mut it = grid
            .patches()
            .filter(|p| p.layer(tag).is_some())
            .map(|p| p.index());
        let first = it.next()?;
        let (mut lo, mut hi) = ((first.ix, first.iy), (first.ix, first.iy));
        for i in it {
            lo = (lo.0.min(i.ix), lo.1.min(i.iy));
            hi = (hi.0.max(i.ix), hi.1.max(i.iy));
        }
        let min = grid.patch_datum(apgm::PatchIndex::new(lo.0, lo.1));
        let max = grid.patch_datum(apgm::PatchIndex::new(hi.0 + 1, hi.1 + 1));
        Some(Self { min, max })
    }
}

/// Pixel value for cells without a layer.
pub const UNKNOWN_PIXEL: u8 = 127;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixel_m: f64,
    /// Row-major, first row at the north edge.
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Samples `tag` over `region` at the finest step allocated there. Each pixel
/// is `⌊BetP(first hypothesis)·255⌋` of the cell under its center.
pub fn render_raster(grid: &GridMap, tag: TypeTag, region: Region) -> Raster {
    let geometry = grid.geometry();
    let lo = geometry.patch_index_of(region.min);
    let hi = geometry.patch_index_of(region.max);
    let step = grid
        .patches()
        .filter(|p| {
            let i = p.index();
            (lo.ix..=hi.ix).contains(&i.ix) && (lo.iy..=hi.iy).contains(&i.iy)
        })
        .filter_map(|p| p.layer(tag).map(|l| l.step()))
        .max()
        .unwrap_or(0);
    let pixel_m = geometry.cell_size(step);
    let extent = |a: f64, b: f64| (((b - a) / pixel_m) - 1e-9).ceil().max(1.0) as usize;
    let width = extent(region.min.x, region.max.x);
    let height = extent(region.min.y, region.max.y);
    let mut pixels = vec![UNKNOWN_PIXEL; width * height];
    for row in 0..height {
        let y = region.max.y - (row as f64 + 0.5) * pixel_m;
        for col in 0..width {
            let p = Point2::new(region.min.x + (col as f64 + 0.5) * pixel_m, y);
            let Some(layer) = grid
                .patch(geometry.patch_index_of(p))
                .and_then(|patch| patch.layer(tag))
            else {
                continue;
            };
            let (_, cell) = geometry.locate(p, layer.step());
            let m = layer.cell_masses(cell).expect("cell inside its patch");
            let omega = 1.0 - m.iter().map(|&v| v as f64).sum::<f64>();
            let betp = m[0] as f64 + omega.max(0.0) / m.len() as f64;
            pixels[row * width + col] = (betp.clamp(0.0, 1.0) * 255.0).floor() as u8;
        }
    }
    Raster {
        width,
        height,
        pixel_m,
        pixels,
    }
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm<W: Write>(raster: &Raster, mut w: W) -> io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", raster.width, raster.height)?;
    w.write_all(&raster.pixels)?;
    w.flush()
}

/// Renders and writes a PGM file. Without a region the bounding box of the
/// type's patches is used; an empty grid yields a single unknown pixel.
pub fn export_raster(
    grid: &GridMap,
    tag: TypeTag,
    region: Option<Region>,
    path: impl AsRef<Path>,
) -> io::Result<Raster> {
    let region = region
        .or_else(|| Region::of_grid(grid, tag))
        .unwrap_or_else(|| {
            let d = grid.datum();
            Region::new(d, Point2::new(d.x + grid.edge(), d.y + grid.edge()))
        });
    let raster = render_raster(grid, tag, region);
    write_pgm(&raster, io::BufWriter::new(std::fs::File::create(path)?))?;
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use apgm::{Bba, CellIndex, PatchIndex};

    #[test]
    fn empty_grid_is_uniform_unknown() {
        let g = GridMap::new(Point2::default(), 12.8).unwrap();
        let r = render_raster(
            &g,
            TypeTag::Occupancy,
            Region::new(Point2::default(), Point2::new(25.6, 12.8)),
        );
        assert_eq!((r.width, r.height), (2, 1));
        assert!(r.pixels.iter().all(|&p| p == UNKNOWN_PIXEL));
    }

    #[test]
    fn north_up_pixel_values() {
        let mut g = GridMap::new(Point2::default(), 12.8).unwrap();
        let layer = g
            .get_or_create_layer(PatchIndex::new(0, 0), TypeTag::Occupancy, 1)
            .unwrap();
        let frame = TypeTag::Occupancy.frame();
        // South-west cell occupied, north-west cell free, east column vacuous.
        layer
            .set_cell(
                CellIndex::new(0, 0),
                &Bba::new(frame.clone(), &[1.0, 0.0]).unwrap(),
            )
            .unwrap();
        layer
            .set_cell(CellIndex::new(0, 1), &Bba::new(frame, &[0.0, 1.0]).unwrap())
            .unwrap();
        let r = render_raster(
            &g,
            TypeTag::Occupancy,
            Region::of_grid(&g, TypeTag::Occupancy).unwrap(),
        );
        assert_eq!((r.width, r.height), (2, 2));
        assert_eq!(r.get(0, 1), 255);
        assert_eq!(r.get(0, 0), 0);
        assert_eq!(r.get(1, 0), 127);
        let mut buf = Vec::new();
        write_pgm(&r, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n2 2\n255\n");
        assert_eq!(buf.len(), 11 + 4);
    }
}
