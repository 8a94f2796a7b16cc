//! Binary little-endian PLY snapshots of a Gaussian cloud.
//!
//! The vertex layout follows the de-facto 3DGS interchange naming so external
//! viewers can open snapshots: `x y z`, `f_dc_0..2`, `f_rest_*` (channel-major,
//! present only for SH degree 1), `opacity`, `scale_0..2`, `rot_0..3`, all
//! `float`. Values are stored as f32; the reader accepts any property order.

use std::collections::HashMap;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::gsmath::GaussianCloud;
use crate::{Error, Result};

fn format_err(detail: impl Into<String>, offset: u64) -> Error {
    Error::Format {
        what: "PLY".into(),
        detail: detail.into(),
        offset,
    }
}

fn property_names(basis: usize) -> Vec<String> {
    let mut names = vec!["x".into(), "y".into(), "z".into()];
    for c in 0..3 {
        names.push(format!("f_dc_{c}"));
    }
    // Channel-major higher-order coefficients: all R, then G, then B.
    for c in 0..3 {
        for k in 0..basis - 1 {
            names.push(format!("f_rest_{}", c * (basis - 1) + k));
        }
    }
    names.push("opacity".into());
    for a in 0..3 {
        names.push(format!("scale_{a}"));
    }
    for a in 0..4 {
        names.push(format!("rot_{a}"));
    }
    names
}

/// Serializes `cloud` as binary little-endian PLY.
pub fn write_ply(cloud: &GaussianCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let basis = cloud.basis();
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    for name in property_names(basis) {
        out.extend_from_slice(format!("property float {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let coeffs = cloud.sh_coeffs(i);
        let mut row: Vec<f64> = vec![p.x, p.y, p.z];
        for c in 0..3 {
            row.push(coeffs[0][c]);
        }
        for c in 0..3 {
            for coeff in &coeffs[1..] {
                row.push(coeff[c]);
            }
        }
        row.push(cloud.raw_opacities[i]);
        row.extend(cloud.raw_scales[i].iter());
        row.extend(cloud.raw_rotations[i].iter());
        for v in row {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(out)
}

/// Parses a binary little-endian PLY produced by [`write_ply`] (or any file
/// with the same property set in any order).
pub fn read_ply(bytes: &[u8]) -> Result<GaussianCloud> {
    let (names, count, body_start) = parse_header(bytes)?;
    let columns: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    if columns.len() != names.len() {
        return Err(format_err("duplicate property name", body_start as u64));
    }
    let rest = names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let (sh_degree, basis) = match rest {
        0 => (0, 1),
        9 => (1, 4),
        other => {
            return Err(format_err(
                format!("unsupported f_rest_* count {other} (expected 0 or 9)"),
                body_start as u64,
            ))
        }
    };
    let col = |name: &str| -> Result<usize> {
        columns
            .get(name)
            .copied()
            .ok_or_else(|| format_err(format!("missing property {name}"), body_start as u64))
    };

    let stride = names.len() * 4;
    let expected = body_start + count * stride;
    if bytes.len() != expected {
        return Err(format_err(
            format!("payload is {} bytes, expected {}", bytes.len() - body_start, count * stride),
            bytes.len().min(expected) as u64,
        ));
    }

    let mut cloud = GaussianCloud::with_capacity(sh_degree, count);
    let mut cursor = &bytes[body_start..];
    let mut row = vec![0.0f64; names.len()];
    for i in 0..count {
        for v in row.iter_mut() {
            *v = f64::from(cursor.read_f32::<LittleEndian>().map_err(|_| {
                format_err("truncated vertex data", (body_start + i * stride) as u64)
            })?);
        }
        let position = Vector3::new(row[col("x")?], row[col("y")?], row[col("z")?]);
        let mut coeffs = vec![Vector3::new(
            row[col("f_dc_0")?],
            row[col("f_dc_1")?],
            row[col("f_dc_2")?],
        )];
        for k in 0..basis - 1 {
            let mut v = Vector3::zeros();
            for c in 0..3 {
                v[c] = row[col(&format!("f_rest_{}", c * (basis - 1) + k))?];
            }
            coeffs.push(v);
        }
        let scale = Vector3::new(
            row[col("scale_0")?],
            row[col("scale_1")?],
            row[col("scale_2")?],
        );
        let rotation = Vector4::new(
            row[col("rot_0")?],
            row[col("rot_1")?],
            row[col("rot_2")?],
            row[col("rot_3")?],
        );
        cloud.push(position, scale, rotation, row[col("opacity")?], &coeffs);
    }
    cloud
        .validate()
        .map_err(|e| format_err(format!("invalid cloud: {e}"), body_start as u64))?;
    Ok(cloud)
}

fn next_line(bytes: &[u8], offset: &mut usize) -> Result<String> {
    let start = *offset;
    while *offset < bytes.len() && bytes[*offset] != b'\n' {
        *offset += 1;
    }
    if *offset == bytes.len() {
        return Err(format_err("header not terminated", start as u64));
    }
    let s = std::str::from_utf8(&bytes[start..*offset])
        .map_err(|_| format_err("non-UTF8 header line", start as u64))?
        .to_string();
    *offset += 1;
    Ok(s)
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<String>, usize, usize)> {
    let mut offset = 0usize;
    if next_line(bytes, &mut offset)? != "ply" {
        return Err(format_err("missing 'ply' magic", 0));
    }
    if next_line(bytes, &mut offset)? != "format binary_little_endian 1.0" {
        return Err(format_err("unsupported format (want binary_little_endian 1.0)", 4));
    }
    let mut count: Option<usize> = None;
    let mut names = Vec::new();
    loop {
        let at = offset as u64;
        let l = next_line(bytes, &mut offset)?;
        if l == "end_header" {
            break;
        }
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("comment") => {}
            Some("element") => {
                if parts.next() != Some("vertex") {
                    return Err(format_err("unsupported element (want vertex)", at));
                }
                let n = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| format_err("bad vertex count", at))?;
                count = Some(n);
            }
            Some("property") => {
                if parts.next() != Some("float") {
                    return Err(format_err("unsupported property type (want float)", at));
                }
                let name = parts
                    .next()
                    .ok_or_else(|| format_err("property missing name", at))?;
                names.push(name.to_string());
            }
            _ => return Err(format_err(format!("unrecognized header line '{l}'"), at)),
        }
    }
    let count = count.ok_or_else(|| format_err("missing vertex element", offset as u64))?;
    if names.is_empty() {
        return Err(format_err("no properties declared", offset as u64));
    }
    Ok((names, count, offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn round_trip_is_byte_identical() {
        for seed in [0u64, 1, 2] {
            let (cloud, _) = synth::random_scene(seed, 17, 32, 32);
            let bytes = write_ply(&cloud).unwrap();
            let back = read_ply(&bytes).unwrap();
            assert_eq!(back.len(), cloud.len());
            assert_eq!(back.sh_degree, cloud.sh_degree);
            let again = write_ply(&back).unwrap();
            assert_eq!(bytes, again);
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let (cloud, _) = synth::random_scene(3, 5, 16, 16);
        let mut bytes = write_ply(&cloud).unwrap();
        bytes.truncate(bytes.len() - 7);
        match read_ply(&bytes) {
            Err(Error::Format { what, offset, .. }) => {
                assert_eq!(what, "PLY");
                assert!(offset > 0);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_property_is_rejected() {
        let (cloud, _) = synth::random_scene(4, 3, 16, 16);
        let bytes = write_ply(&cloud).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let header_len = text.find("end_header").unwrap() + "end_header\n".len();
        let mut mangled = String::from_utf8(bytes[..header_len].to_vec()).unwrap();
        mangled = mangled.replace("property float opacity\n", "property float opaque\n");
        let mut out = mangled.into_bytes();
        out.extend_from_slice(&bytes[header_len..]);
        assert!(matches!(read_ply(&out), Err(Error::Format { .. })));
    }

    #[test]
    fn garbage_magic_is_rejected() {
        assert!(matches!(read_ply(b"not a ply\n"), Err(Error::Format { offset: 0, .. })));
    }
}
