//! "PGSF" driving-feature sequences: per-frame audio and expression vectors.
//!
//! Layout (all little-endian): magic `PGSF`, `u32` version (1), `u32` frame
//! count, `u32` audio dimension, `u32` expression dimension, then
//! frame_count × (dim_audio + dim_expr) `f32` values, audio first. The file
//! length must match the header arithmetic exactly.

use std::io::Read;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::deform::FrameFeatures;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGSF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub dim_audio: usize,
    pub dim_expr: usize,
    pub frames: Vec<FrameFeatures>,
}

fn format_err(detail: impl Into<String>, offset: u64) -> Error {
    Error::Format {
        what: "PGSF".into(),
        detail: detail.into(),
        offset,
    }
}

pub fn write_features(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(u32::try_from(seq.frames.len()).expect("frame count"))?;
    out.write_u32::<LittleEndian>(u32::try_from(seq.dim_audio).expect("dim_audio"))?;
    out.write_u32::<LittleEndian>(u32::try_from(seq.dim_expr).expect("dim_expr"))?;
    for f in &seq.frames {
        if f.audio.len() != seq.dim_audio || f.expression.len() != seq.dim_expr {
            return Err(Error::ShapeMismatch("frame features vs header dims".into()));
        }
        for &v in f.audio.iter().chain(&f.expression) {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(out)
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let total = bytes.len() as u64;
    let mut r = bytes;
    let pos = |r: &[u8]| total - r.len() as u64;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err("truncated magic", 0))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic (want PGSF)", 0));
    }
    let mut u32_field = |what: &str| -> Result<usize> {
        let at = pos(r);
        Ok(r.read_u32::<LittleEndian>()
            .map_err(|_| format_err(format!("truncated {what}"), at))? as usize)
    };
    let version = u32_field("version")?;
    if version != VERSION as usize {
        return Err(format_err(format!("unsupported version {version}"), 4));
    }
    let frame_count = u32_field("frame count")?;
    let dim_audio = u32_field("audio dimension")?;
    let dim_expr = u32_field("expression dimension")?;
    let expected = 20 + 4 * frame_count * (dim_audio + dim_expr);
    if bytes.len() != expected {
        return Err(format_err(
            format!("file is {} bytes, header implies {expected}", bytes.len()),
            bytes.len().min(expected) as u64,
        ));
    }
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let at = pos(r);
                    Ok(f64::from(
                        r.read_f32::<LittleEndian>()
                            .map_err(|_| format_err("truncated frame values", at))?,
                    ))
                })
                .collect()
        };
        let audio = read_vec(dim_audio)?;
        let expression = read_vec(dim_expr)?;
        frames.push(FrameFeatures { audio, expression });
    }
    Ok(FeatureSequence {
        dim_audio,
        dim_expr,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSequence {
        FeatureSequence {
            dim_audio: 2,
            dim_expr: 3,
            frames: (0..4)
                .map(|i| FrameFeatures {
                    audio: vec![i as f64, 0.5],
                    expression: vec![0.25, -1.0, i as f64 * 0.1],
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = write_features(&sample()).unwrap();
        let back = read_features(&bytes).unwrap();
        assert_eq!(back.frames.len(), 4);
        assert_eq!(back.dim_audio, 2);
        assert_eq!(write_features(&back).unwrap(), bytes);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut bytes = write_features(&sample()).unwrap();
        bytes.push(0);
        assert!(matches!(read_features(&bytes), Err(Error::Format { .. })));
        let bytes = write_features(&sample()).unwrap();
        assert!(matches!(
            read_features(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn shape_mismatch_on_write_is_rejected() {
        let mut seq = sample();
        seq.frames[1].audio.pop();
        assert!(matches!(write_features(&seq), Err(Error::ShapeMismatch(_))));
    }
}
