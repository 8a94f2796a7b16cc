//! "PGSW" named-tensor checkpoints.
//!
//! Layout (all little-endian): magic `PGSW`, `u32` version (1), `u32` tensor
//! count, then per tensor: `u16` name length, UTF-8 name, `u8` rank,
//! rank × `u32` dims, and the row-major values as `f32`.

use std::io::Read;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGSW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        let t = Self {
            name: name.into(),
            dims,
            values,
        };
        assert_eq!(t.dims.iter().product::<usize>(), t.values.len());
        t
    }
}

fn format_err(detail: impl Into<String>, offset: u64) -> Error {
    Error::Format {
        what: "PGSW".into(),
        detail: detail.into(),
        offset,
    }
}

pub fn write_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(u32::try_from(tensors.len()).expect("tensor count"))?;
    for t in tensors {
        if t.dims.iter().product::<usize>() != t.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {}: dims product vs value count",
                t.name
            )));
        }
        let name = t.name.as_bytes();
        out.write_u16::<LittleEndian>(u16::try_from(name.len()).expect("name length"))?;
        out.extend_from_slice(name);
        out.write_u8(u8::try_from(t.dims.len()).expect("rank"))?;
        for &d in &t.dims {
            out.write_u32::<LittleEndian>(u32::try_from(d).expect("dim"))?;
        }
        for &v in &t.values {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(out)
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let total = bytes.len() as u64;
    let mut r = bytes;
    let pos = |r: &[u8]| total - r.len() as u64;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err("truncated magic", 0))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic (want PGSW)", 0));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err("truncated version", pos(r)))?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}"), 4));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| format_err("truncated tensor count", pos(r)))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| format_err("truncated name length", pos(r)))? as usize;
        if r.len() < name_len {
            return Err(format_err("truncated name", pos(r)));
        }
        let name = std::str::from_utf8(&r[..name_len])
            .map_err(|_| format_err("non-UTF8 tensor name", pos(r)))?
            .to_string();
        r = &r[name_len..];
        let rank = r.read_u8().map_err(|_| format_err("truncated rank", pos(r)))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(
                r.read_u32::<LittleEndian>()
                    .map_err(|_| format_err("truncated dims", pos(r)))? as usize,
            );
        }
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from(r.read_f32::<LittleEndian>().map_err(|_| {
                format_err(format!("truncated values for tensor {name}"), pos(r))
            })?));
        }
        tensors.push(NamedTensor { name, dims, values });
    }
    if !r.is_empty() {
        return Err(format_err(
            format!("{} trailing bytes after last tensor", r.len()),
            pos(r),
        ));
    }
    Ok(tensors)
}
