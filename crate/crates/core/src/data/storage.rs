//! Lossless binary snapshot of a [`Dataset`], little-endian throughout.
//!
//! ```text
//! "CNTD" u32:version u32:name_len name u8:split
//! u64:count u64:dim u64:class_count
//! u8:has_geometry [u64 channels, u64 height, u64 width]
//! u8:has_labels
//! f64 * count * dim
//! [u32 * count]
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{Dataset, Split};
use crate::engine::architecture::InputGeometry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"CNTD";
const VERSION: u32 = 1;

pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + dataset.inputs.len() * 8);
    buf.extend_from_slice(MAGIC);
    let w = &mut buf;
    w.write_u32::<LittleEndian>(VERSION).unwrap();
    w.write_u32::<LittleEndian>(dataset.name.len() as u32)
        .unwrap();
    w.write_all(dataset.name.as_bytes()).unwrap();
    w.write_u8(matches!(dataset.split, Split::Test) as u8)
        .unwrap();
    for v in [dataset.len(), dataset.feature_dim(), dataset.class_count] {
        w.write_u64::<LittleEndian>(v as u64).unwrap();
    }
    match dataset.geometry {
        Some(g) => {
            w.write_u8(1).unwrap();
            for v in [g.channels, g.height, g.width] {
                w.write_u64::<LittleEndian>(v as u64).unwrap();
            }
        }
        None => w.write_u8(0).unwrap(),
    }
    w.write_u8(dataset.labels.is_some() as u8).unwrap();
    for &v in dataset.inputs.iter() {
        w.write_f64::<LittleEndian>(v.to_f64_lossless()).unwrap();
    }
    if let Some(labels) = &dataset.labels {
        for &l in labels {
            w.write_u32::<LittleEndian>(l as u32).unwrap();
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor::new(&bytes[..]);
    let fail = |r: &Cursor<&[u8]>, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset: r.position(),
        message: msg.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fail(&r, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(fail(&r, "not a dataset snapshot"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fail(&r, "truncated header"))?;
    if version != VERSION {
        return Err(fail(&r, &format!("unsupported version {version}")));
    }
    let name_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fail(&r, "truncated header"))? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|_| fail(&r, "truncated name"))?;
    let name = String::from_utf8(name).map_err(|_| fail(&r, "name is not UTF-8"))?;
    let split = match r.read_u8().map_err(|_| fail(&r, "truncated header"))? {
        0 => Split::Train,
        _ => Split::Test,
    };
    let mut u64s = [0usize; 3];
    for v in &mut u64s {
        *v = r
            .read_u64::<LittleEndian>()
            .map_err(|_| fail(&r, "truncated header"))? as usize;
    }
    let [count, dim, class_count] = u64s;
    let geometry = if r.read_u8().map_err(|_| fail(&r, "truncated header"))? == 1 {
        let mut g = [0usize; 3];
        for v in &mut g {
            *v = r
                .read_u64::<LittleEndian>()
                .map_err(|_| fail(&r, "truncated geometry"))? as usize;
        }
        Some(InputGeometry {
            channels: g[0],
            height: g[1],
            width: g[2],
        })
    } else {
        None
    };
    let has_labels = r.read_u8().map_err(|_| fail(&r, "truncated header"))? == 1;
    let mut values = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        values.push(T::of(
            r.read_f64::<LittleEndian>()
                .map_err(|_| fail(&r, "truncated inputs"))?,
        ));
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            labels.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| fail(&r, "truncated labels"))? as usize,
            );
        }
        Some(labels)
    } else {
        None
    };
    Ok(Dataset {
        name,
        split,
        inputs: Array2::from_shape_vec((count, dim), values).expect("length matches header"),
        labels,
        class_count,
        geometry,
    })
}
