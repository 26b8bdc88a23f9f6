//! Binary snapshot container for grid maps.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        b"APGM\x01"
//! datum        f64 x, f64 y
//! edge         f64
//! type table   u8 count, then per type: u8 id, u8 |Ω|, per label: u8 len + UTF-8 bytes
//! patch count  u32
//! per patch    i32 ix, i32 iy, u8 layer count,
//!              per layer: u8 type id, u8 step, 4^step · |Ω| × f32 masses
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{GridError, GridMap, Layer, Patch, PatchIndex, Point2, TypeTag};

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"APGM\x01";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an APGM snapshot (bad magic or unsupported version)")]
    BadMagic,
    #[error("unknown type id {0}")]
    UnknownType(u8),
    #[error("type table entry for {0} does not match the built-in frame")]
    FrameMismatch(TypeTag),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_snapshot<W: Write>(grid: &GridMap, mut w: W) -> Result<(), SnapshotError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    let datum = grid.datum();
    w.write_all(&datum.x.to_le_bytes())?;
    w.write_all(&datum.y.to_le_bytes())?;
    w.write_all(&grid.edge().to_le_bytes())?;

    w.write_all(&[TypeTag::ALL.len() as u8])?;
    for tag in TypeTag::ALL {
        let frame = tag.frame();
        w.write_all(&[tag.id(), frame.len() as u8])?;
        for label in frame.labels() {
            w.write_all(&[label.len() as u8])?;
            w.write_all(label.as_bytes())?;
        }
    }

    w.write_all(&(grid.patch_count() as u32).to_le_bytes())?;
    for patch in grid.patches() {
        let idx = patch.index();
        w.write_all(&idx.ix.to_le_bytes())?;
        w.write_all(&idx.iy.to_le_bytes())?;
        let layers: Vec<&Layer> = patch.layers().collect();
        w.write_all(&[layers.len() as u8])?;
        for layer in layers {
            w.write_all(&[layer.tag().id(), layer.step()])?;
            let mut buf = Vec::with_capacity(layer.payload_bytes());
            for m in layer.masses() {
                buf.extend_from_slice(&m.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<GridMap, SnapshotError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let datum = Point2::new(read_f64(&mut r)?, read_f64(&mut r)?);
    let edge = read_f64(&mut r)?;
    let mut grid = GridMap::new(datum, edge)?;

    let types = read_u8(&mut r)?;
    for _ in 0..types {
        let id = read_u8(&mut r)?;
        let tag = TypeTag::from_id(id).ok_or(SnapshotError::UnknownType(id))?;
        let n = read_u8(&mut r)? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u8(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            labels.push(
                String::from_utf8(bytes)
                    .map_err(|_| SnapshotError::Malformed("label is not UTF-8".into()))?,
            );
        }
        if labels != tag.frame().labels() {
            return Err(SnapshotError::FrameMismatch(tag));
        }
    }

    let patches = read_u32(&mut r)?;
    for _ in 0..patches {
        let index = PatchIndex::new(read_i32(&mut r)?, read_i32(&mut r)?);
        if grid.patch(index).is_some() {
            return Err(SnapshotError::Malformed(format!(
                "duplicate patch ({}, {})",
                index.ix, index.iy
            )));
        }
        let mut patch = Patch::new(index);
        let layers = read_u8(&mut r)?;
        for _ in 0..layers {
            let id = read_u8(&mut r)?;
            let tag = TypeTag::from_id(id).ok_or(SnapshotError::UnknownType(id))?;
            let step = read_u8(&mut r)?;
            let empty = Layer::vacuous(tag, step)?;
            let count = empty.masses().len();
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes)?;
            let masses = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if patch
                .insert_layer(Layer::from_masses(tag, step, masses)?)
                .is_some()
            {
                return Err(SnapshotError::Malformed(format!(
                    "two {tag} layers in one patch"
                )));
            }
        }
        grid.insert_patch(patch);
    }
    Ok(grid)
}

fn read_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R) -> io::Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
