//! Tile-binned forward rasterization.

use rayon::prelude::*;

use super::{
    composite_pixel, fnv_fold, fnv_start, fold_color_clamps, prepare_view, Prepared,
    RenderArtifacts, RenderConfig,
};
use crate::gsmath::{Camera, GaussianCloud};
use crate::image::Image;
use crate::Result;

struct TileResult {
    /// (pixel index, rgb, final transmittance), row-major within the tile.
    pixels: Vec<(usize, [f64; 3], f64)>,
    coverage: Vec<(usize, u32)>,
    hash: u64,
}

/// Pixel-rect of a tile, `tile` counted row-major over the tile grid.
pub(crate) fn tile_bounds(
    tile: usize,
    tiles_x: usize,
    tile_size: usize,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * tile_size;
    let y0 = ty * tile_size;
    (x0, y0, (x0 + tile_size).min(width), (y0 + tile_size).min(height))
}

/// Bin prepared Gaussians to tiles by their radius-disc bounding square.
/// Each tile list stays in composition order because binning walks the
/// depth-sorted slots in order.
pub(crate) fn bin_tiles(
    prepared: &[Prepared],
    tiles_x: usize,
    tiles_y: usize,
    tile_size: usize,
) -> Vec<Vec<usize>> {
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, g) in prepared.iter().enumerate() {
        let r = g.proj.radius_px;
        if r <= 0.0 {
            continue;
        }
        let cx = g.proj.center_px.x;
        let cy = g.proj.center_px.y;
        let ts = tile_size as f64;
        let tx0 = (((cx - r) / ts).floor().max(0.0)) as usize;
        let ty0 = (((cy - r) / ts).floor().max(0.0)) as usize;
        let tx1 = ((cx + r) / ts).floor() as isize;
        let ty1 = ((cy + r) / ts).floor() as isize;
        if tx1 < 0 || ty1 < 0 {
            continue;
        }
        let tx1 = (tx1 as usize).min(tiles_x - 1);
        let ty1 = (ty1 as usize).min(tiles_y - 1);
        if tx0 >= tiles_x || ty0 >= tiles_y {
            continue;
        }
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(slot);
            }
        }
    }
    lists
}

/// Render one view. Deterministic for fixed inputs regardless of thread
/// count: tiles are disjoint and merged in tile order.
pub fn rasterize_forward(
    cloud: &GaussianCloud,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderArtifacts> {
    cloud.validate()?;
    camera.validate()?;
    cfg.validate()?;

    let (prepared, mut stats) = prepare_view(cloud, camera);
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(cfg.tile_size);
    let tiles_y = h.div_ceil(cfg.tile_size);
    let lists = bin_tiles(&prepared, tiles_x, tiles_y, cfg.tile_size);

    let results: Vec<TileResult> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_bounds(tile, tiles_x, cfg.tile_size, w, h);
            let order = &lists[tile];
            let mut out = TileResult {
                pixels: Vec::with_capacity((x1 - x0) * (y1 - y0)),
                coverage: Vec::new(),
                hash: fnv_start(),
            };
            let mut local_m = vec![0u32; prepared.len()];
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut rgb = [0.0f64; 3];
                    let pixel_index = (y * w + x) as u64;
                    let t_final = composite_pixel(
                        &prepared,
                        order,
                        x as f64,
                        y as f64,
                        cfg,
                        |c| {
                            let g = &prepared[c.slot];
                            let wgt = c.alpha * c.transmittance_before;
                            for ch in 0..3 {
                                rgb[ch] += g.color.rgb[ch] * wgt;
                            }
                            if cfg.count_coverage && g.valid {
                                local_m[c.slot] += 1;
                            }
                            out.hash = fnv_fold(
                                out.hash,
                                pixel_index << 22
                                    | (g.idx as u64) << 1
                                    | c.clamped as u64,
                            );
                        },
                    );
                    for ch in 0..3 {
                        rgb[ch] += t_final * cfg.background[ch];
                    }
                    out.pixels.push((y * w + x, rgb, t_final));
                }
            }
            for (slot, &m) in local_m.iter().enumerate() {
                if m > 0 {
                    out.coverage.push((slot, m));
                }
            }
            out
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut final_t = vec![1.0f64; w * h];
    let mut hash = fnv_start();
    for tr in &results {
        for &(pi, rgb, t) in &tr.pixels {
            image.pixels[pi] = rgb;
            final_t[pi] = t;
        }
        for &(slot, m) in &tr.coverage {
            stats[prepared[slot].idx].coverage += m;
        }
        hash = fnv_fold(hash, tr.hash);
    }
    hash = fold_color_clamps(hash, &prepared);

    Ok(RenderArtifacts {
        image,
        final_transmittance: final_t,
        per_gaussian: stats,
        structure_hash: hash,
    })
}
