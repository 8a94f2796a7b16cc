//! Dual-branch head compositing: the mouth render shows through wherever
//! the face branch left transmittance.

use crate::image::Image;
use crate::raster::RenderArtifacts;
use crate::{Error, Result};

/// C_head = C_face·A + C_mouth·(1−A) with A = 1 − T_face per pixel. The face
/// branch must be rendered on a black background so C_face is pure foreground.
pub fn composite_head(face: &RenderArtifacts, mouth: &RenderArtifacts) -> Result<Image> {
    if face.image.width != mouth.image.width || face.image.height != mouth.image.height {
        return Err(Error::ShapeMismatch("branch render sizes differ".into()));
    }
    let mut out = Image::new(face.image.width, face.image.height);
    for (p, o) in out.pixels.iter_mut().enumerate() {
        let a = 1.0 - face.final_transmittance[p];
        let cf = face.image.pixels[p];
        let cm = mouth.image.pixels[p];
        for c in 0..3 {
            o[c] = cf[c] * a + cm[c] * (1.0 - a);
        }
    }
    Ok(out)
}

/// Split dL/dC_head into per-branch image gradients, holding A fixed
/// (stage 3 updates colors only, so ∂A/∂θ_color = 0).
pub fn composite_backward(
    face: &RenderArtifacts,
    dl_dhead: &Image,
) -> (Image, Image) {
    let mut d_face = Image::new(dl_dhead.width, dl_dhead.height);
    let mut d_mouth = Image::new(dl_dhead.width, dl_dhead.height);
    for (p, dl) in dl_dhead.pixels.iter().enumerate() {
        let a = 1.0 - face.final_transmittance[p];
        for c in 0..3 {
            d_face.pixels[p][c] = dl[c] * a;
            d_mouth.pixels[p][c] = dl[c] * (1.0 - a);
        }
    }
    (d_face, d_mouth)
}
