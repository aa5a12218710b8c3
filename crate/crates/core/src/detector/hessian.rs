//! Fast-Hessian detector: box-filter approximations of the second-order
//! Gaussian derivatives evaluated on an integral image, 3x3x3 non-maximum
//! suppression and quadratic sub-pixel/scale refinement.

use nalgebra::{Matrix3, Vector3};

use super::{DetectorConfig, InterestPoint};
use crate::imaging::{GrayImage, IntegralImage};

/// Weight that balances the box-filter Dxy against Dxx/Dyy.
const DXY_WEIGHT_SQ: f64 = 0.81;

/// Side of the box filter for `layer` of `octave`: 9, 15, 21, 27 / 15, 27, 39, 51 / ...
fn filter_size(octave: usize, layer: usize) -> usize {
    3 * ((1 << (octave + 1)) * (layer + 1) + 1)
}

fn size_to_scale(size: f64) -> f64 {
    1.2 * size / 9.0
}

/// Response grid of one layer. Cells whose filter leaves the image are `None`.
struct Layer {
    size: usize,
    cols: usize,
    rows: usize,
    response: Vec<Option<f64>>,
}

impl Layer {
    #[inline]
    fn at(&self, col: usize, row: usize) -> Option<f64> {
        self.response[row * self.cols + col]
    }
}

/// Determinant of the box-filter Hessian at pixel `(x, y)` for a filter of
/// side `size`, normalised by the filter area.
#[inline]
pub(crate) fn hessian_response(ii: &IntegralImage, x: i64, y: i64, size: usize) -> f64 {
    let lobe = (size / 3) as i64;
    let half = (size as i64 - 1) / 2;
    let mid = (lobe - 1) / 2;
    let tall = lobe - 1;
    let s = |x0: i64, y0: i64, x1: i64, y1: i64| ii.sum_clipped(x0, y0, x1 + 1, y1 + 1);

    // whole (3l x 2l-1) box minus three times the central l-wide band
    let dxx = s(x - half, y - tall, x + half, y + tall) - 3.0 * s(x - mid, y - tall, x + mid, y + tall);
    let dyy = s(x - tall, y - half, x + tall, y + half) - 3.0 * s(x - tall, y - mid, x + tall, y + mid);
    let dxy = s(x + 1, y + 1, x + lobe, y + lobe) + s(x - lobe, y - lobe, x - 1, y - 1)
        - s(x + 1, y - lobe, x + lobe, y - 1)
        - s(x - lobe, y + 1, x - 1, y + lobe);

    let inv_area = 1.0 / (size * size) as f64;
    let (dxx, dyy, dxy) = (dxx * inv_area, dyy * inv_area, dxy * inv_area);
    dxx * dyy - DXY_WEIGHT_SQ * dxy * dxy
}

fn build_layer(ii: &IntegralImage, size: usize, step: usize) -> Layer {
    let (w, h) = (ii.width(), ii.height());
    let cols = (w - 1) / step + 1;
    let rows = (h - 1) / step + 1;
    let half = (size - 1) / 2;
    let mut response = vec![None; cols * rows];
    for row in 0..rows {
        let y = row * step;
        if y < half || y + half >= h {
            continue;
        }
        for col in 0..cols {
            let x = col * step;
            if x < half || x + half >= w {
                continue;
            }
            response[row * cols + col] = Some(hessian_response(ii, x as i64, y as i64, size));
        }
    }
    Layer {
        size,
        cols,
        rows,
        response,
    }
}

/// Scale-space maxima of the Hessian determinant above `hessian_threshold`,
/// sorted by response (descending), then by row and column.
///
/// Images too small for the first filter yield no points.
pub fn detect(img: &GrayImage, cfg: &DetectorConfig) -> Vec<InterestPoint> {
    let ii = IntegralImage::new(img);
    let (w, h) = (img.width(), img.height());
    let mut points = Vec::new();

    for octave in 0..cfg.octaves {
        let step = cfg.initial_step << octave;
        let sizes: Vec<usize> = (0..cfg.layers).map(|l| filter_size(octave, l)).collect();
        // the middle layers need the largest filter of the octave to fit
        if sizes[2] >= w.min(h) {
            break;
        }
        let layers: Vec<Layer> = sizes.iter().map(|&s| build_layer(&ii, s, step)).collect();
        for l in 1..layers.len() - 1 {
            find_extrema(&layers[l - 1], &layers[l], &layers[l + 1], step, cfg, w, h, &mut points);
        }
    }

    points.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.scale.total_cmp(&b.scale))
    });
    points
}

#[allow(clippy::too_many_arguments)]
fn find_extrema(
    below: &Layer,
    mid: &Layer,
    above: &Layer,
    step: usize,
    cfg: &DetectorConfig,
    width: usize,
    height: usize,
    out: &mut Vec<InterestPoint>,
) {
    for row in 1..mid.rows.saturating_sub(1) {
        'cell: for col in 1..mid.cols.saturating_sub(1) {
            let Some(value) = mid.at(col, row) else { continue };
            if value < cfg.hessian_threshold || value <= 0.0 {
                continue;
            }
            // Plateaus: among equal neighbours only the first in
            // (layer, row, col) order survives.
            for (dl, layer) in [(-1i64, below), (0, mid), (1, above)] {
                for dr in [-1i64, 0, 1] {
                    for dc in [-1i64, 0, 1] {
                        if dl == 0 && dr == 0 && dc == 0 {
                            continue;
                        }
                        let r = (row as i64 + dr) as usize;
                        let c = (col as i64 + dc) as usize;
                        let later = (dl, dr, dc) > (0, 0, 0);
                        match layer.at(c, r) {
                            Some(v) if v < value || (v == value && later) => {}
                            _ => continue 'cell,
                        }
                    }
                }
            }
            if let Some(p) = refine(below, mid, above, col, row, step, value) {
                if p.x >= 0.0 && p.y >= 0.0 && (p.x as usize) < width && (p.y as usize) < height {
                    out.push(p);
                }
            }
        }
    }
}

/// Fits a 3-d quadratic around the discrete maximum; rejects the point when
/// the fitted extremum lies more than one cell away.
fn refine(
    below: &Layer,
    mid: &Layer,
    above: &Layer,
    col: usize,
    row: usize,
    step: usize,
    value: f64,
) -> Option<InterestPoint> {
    // all 26 neighbours were checked present by the caller
    let v = |layer: &Layer, dc: i64, dr: i64| {
        layer
            .at((col as i64 + dc) as usize, (row as i64 + dr) as usize)
            .unwrap_or(0.0)
    };
    let dx = (v(mid, 1, 0) - v(mid, -1, 0)) / 2.0;
    let dy = (v(mid, 0, 1) - v(mid, 0, -1)) / 2.0;
    let ds = (v(above, 0, 0) - v(below, 0, 0)) / 2.0;
    let dxx = v(mid, 1, 0) + v(mid, -1, 0) - 2.0 * value;
    let dyy = v(mid, 0, 1) + v(mid, 0, -1) - 2.0 * value;
    let dss = v(above, 0, 0) + v(below, 0, 0) - 2.0 * value;
    let dxy = (v(mid, 1, 1) - v(mid, -1, 1) - v(mid, 1, -1) + v(mid, -1, -1)) / 4.0;
    let dxs = (v(above, 1, 0) - v(above, -1, 0) - v(below, 1, 0) + v(below, -1, 0)) / 4.0;
    let dys = (v(above, 0, 1) - v(above, 0, -1) - v(below, 0, 1) + v(below, 0, -1)) / 4.0;

    let hessian = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let gradient = Vector3::new(dx, dy, ds);
    let offset = -(hessian.try_inverse()? * gradient);
    if offset.iter().any(|o| !o.is_finite() || o.abs() > 1.0) {
        return None;
    }

    let size_step = (above.size - mid.size) as f64;
    let size = mid.size as f64 + offset.z * size_step;
    Some(InterestPoint {
        x: ((col as f64 + offset.x) * step as f64) as f32,
        y: ((row as f64 + offset.y) * step as f64) as f32,
        scale: size_to_scale(size) as f32,
        response: value as f32,
    })
}
