//! Deterministic PNG output: linear values are clamped to [0,1] and encoded
//! with a fixed gamma of 2.2 so bytes are reproducible across platforms.

use std::path::Path;

use pgst_core::image::Image;
use pgst_core::{Error, Result};

pub fn to_srgb8(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() * 3);
    for p in &img.pixels {
        for c in 0..3 {
            let v = p[c].clamp(0.0, 1.0).powf(1.0 / 2.2);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let buf = to_srgb8(img);
    image::save_buffer(
        path,
        &buf,
        img.width as u32,
        img.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::InvalidConfig(format!("png write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_encoding_is_monotone_and_clamped() {
        let mut img = Image::new(3, 1);
        img.pixels[0] = [-0.5, 0.0, 0.25];
        img.pixels[1] = [0.5, 0.75, 1.0];
        img.pixels[2] = [2.0, 1.0, 0.5];
        let b = to_srgb8(&img);
        assert_eq!(b[0], 0);
        assert_eq!(b[5], 255);
        assert_eq!(b[6], 255);
        assert!(b[2] < b[3] && b[3] < b[4]);
    }

    #[test]
    fn identical_images_yield_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(8, 8, [0.2, 0.6, 0.9]);
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        write_png(&a, &img).unwrap();
        write_png(&b, &img).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
