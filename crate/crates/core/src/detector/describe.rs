use super::{Descriptor, InterestPoint, DESCRIPTOR_DIM};
use crate::imaging::{GrayImage, IntegralImage};

/// Upright 64-d descriptors: a 20s window split into 4x4 subregions, each
/// summarising 5x5 Haar responses of size 2s as (Σdx, Σ|dx|, Σdy, Σ|dy|),
/// Gaussian-weighted (σ = 3.3s) and L2-normalised.
///
/// Haar boxes that leave the image contribute nothing, so a point whose
/// window lies outside the image (or on flat content) gets an all-zero
/// descriptor.
pub fn describe(img: &GrayImage, points: &[InterestPoint]) -> Vec<Descriptor> {
    let ii = IntegralImage::new(img);
    points.iter().map(|p| describe_point(&ii, p)).collect()
}

fn describe_point(ii: &IntegralImage, p: &InterestPoint) -> Descriptor {
    let scale = p.scale as f64;
    let (px, py) = (p.x as f64, p.y as f64);
    let haar_half = (scale.round() as i64).max(1);
    let inv_two_sigma_sq = 1.0 / (2.0 * (3.3 * scale).powi(2));

    let mut desc = [0f32; DESCRIPTOR_DIM];
    let mut slot = 0;
    for sub_y in 0..4 {
        for sub_x in 0..4 {
            let (mut sdx, mut sadx, mut sdy, mut sady) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..5 {
                for l in 0..5 {
                    let off_x = -10.0 + (5 * sub_x + l) as f64 + 0.5;
                    let off_y = -10.0 + (5 * sub_y + k) as f64 + 0.5;
                    let sx = (px + off_x * scale).round() as i64;
                    let sy = (py + off_y * scale).round() as i64;
                    let Some((dx, dy)) = haar(ii, sx, sy, haar_half) else { continue };
                    let weight = (-(off_x * off_x + off_y * off_y) * scale * scale * inv_two_sigma_sq).exp();
                    let (dx, dy) = (dx * weight, dy * weight);
                    sdx += dx;
                    sadx += dx.abs();
                    sdy += dy;
                    sady += dy.abs();
                }
            }
            desc[slot..slot + 4].copy_from_slice(&[sdx as f32, sadx as f32, sdy as f32, sady as f32]);
            slot += 4;
        }
    }

    let norm = desc.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut desc {
            *v = (*v as f64 / norm) as f32;
        }
    }
    desc
}

/// Haar wavelet responses of side `2 * half` centred on `(x, y)`; `None`
/// when the box is not fully inside the image.
#[inline]
fn haar(ii: &IntegralImage, x: i64, y: i64, half: i64) -> Option<(f64, f64)> {
    let (x0, y0, x1, y1) = (x - half, y - half, x + half, y + half);
    if x0 < 0 || y0 < 0 || x1 > ii.width() as i64 || y1 > ii.height() as i64 {
        return None;
    }
    let dx = ii.sum_clipped(x, y0, x1, y1) - ii.sum_clipped(x0, y0, x, y1);
    let dy = ii.sum_clipped(x0, y, x1, y1) - ii.sum_clipped(x0, y0, x1, y);
    Some((dx, dy))
}
