use nalgebra::{Matrix3, Vector3};

use super::GrayImage;
use crate::error::{Error, Result};

const SINGULAR_DET: f64 = 1e-12;

/// Planar projective transform acting on pixel-index coordinates
/// (pixel `(x, y)` sits at the point `(x, y)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Scales the matrix so the bottom-right entry is 1 whenever it is non-zero.
    pub fn new(m: Matrix3<f64>) -> Self {
        let h22 = m[(2, 2)];
        if h22.abs() > f64::EPSILON {
            Homography(m / h22)
        } else {
            Homography(m)
        }
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Homography(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    /// Similarity: rotate by `angle` radians and scale by `scale` about
    /// `(cx, cy)`, then translate by `(tx, ty)`.
    pub fn similarity(scale: f64, angle: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let a = scale * c;
        let b = scale * s;
        Homography(Matrix3::new(
            a,
            -b,
            cx - a * cx + b * cy + tx,
            b,
            a,
            cy - b * cx - a * cy + ty,
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() > SINGULAR_DET
    }

    pub fn inverse(&self) -> Result<Homography> {
        let det = self.determinant();
        if det.abs() <= SINGULAR_DET {
            return Err(Error::SingularHomography(det));
        }
        self.0
            .try_inverse()
            .map(Homography::new)
            .ok_or(Error::SingularHomography(det))
    }

    /// `self` after `first`: maps `p` to `self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Homography {
        Homography::new(self.0 * first.0)
    }

    /// Maps a point; returns non-finite coordinates for points sent to infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }
}

/// Renders `img` under `h` onto an `out_w x out_h` canvas.
///
/// Each output pixel is inverse-mapped into the source and sampled
/// bilinearly. A source location counts as inside when it falls within half a
/// pixel of the pixel grid (edge pixels are clamped); everything else is 0.
pub fn warp(img: &GrayImage, h: &Homography, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidImage(format!(
            "output dimensions must be positive, got {out_w}x{out_h}"
        )));
    }
    let inv = h.inverse()?;
    let m = inv.matrix();
    let (w, hgt) = (img.width() as f64, img.height() as f64);
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (xf, yf) = (x as f64, y as f64);
            let z = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
            let u = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / z;
            let v = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / z;
            let inside = u.is_finite()
                && v.is_finite()
                && u >= -0.5
                && u <= w - 0.5
                && v >= -0.5
                && v <= hgt - 0.5;
            out.push(if inside { sample_bilinear(img, u, v) } else { 0 });
        }
    }
    GrayImage::new(out_w, out_h, out)
}

#[inline]
fn sample_bilinear(img: &GrayImage, u: f64, v: f64) -> u8 {
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let u = u.clamp(0.0, max_x);
    let v = v.clamp(0.0, max_y);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
    let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
    let value = top * (1.0 - fy) + bottom * fy;
    (value + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random())
    }

    #[test]
    fn identity_warp_is_pixel_identical() {
        let img = random_image(23, 17, 1);
        let out = warp(&img, &Homography::identity(), 23, 17).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_translation_shifts_and_zero_fills() {
        let img = random_image(12, 9, 2);
        let out = warp(&img, &Homography::translation(3.0, 0.0), 12, 9).unwrap();
        for y in 0..9 {
            for x in 0..12 {
                let expected = if x < 3 { 0 } else { img.get(x - 3, y) };
                assert_eq!(out.get(x, y), expected, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn upscaled_checker_keeps_corners() {
        let checker = GrayImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        let out = warp(&checker, &Homography::scaling(2.0, 2.0), 4, 4).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(3, 0), 255);
        assert_eq!(out.get(0, 3), 255);
        assert_eq!(out.get(3, 3), 0);
        // (1, 0) samples the source at (0.5, 0): halfway between 0 and 255
        assert_eq!(out.get(1, 0), 128);
    }

    #[test]
    fn singular_homography_is_rejected() {
        let img = GrayImage::filled(4, 4, 1);
        let h = Homography::new(Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0));
        assert!(matches!(warp(&img, &h, 4, 4), Err(Error::SingularHomography(_))));
    }

    #[test]
    fn normalization_sets_corner_to_one() {
        let h = Homography::new(Matrix3::new(2.0, 0.0, 4.0, 0.0, 2.0, 6.0, 0.0, 0.0, 2.0));
        assert_eq!(h.matrix()[(2, 2)], 1.0);
        assert_eq!(h.apply(1.0, 1.0), (3.0, 4.0));
    }

    #[test]
    fn similarity_rotates_about_center() {
        let h = Homography::similarity(1.0, std::f64::consts::FRAC_PI_2, 5.0, 5.0, 0.0, 0.0);
        let (x, y) = h.apply(6.0, 5.0);
        assert!((x - 5.0).abs() < 1e-12 && (y - 6.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn warp_is_pure(seed in any::<u64>(), tx in -4.0f64..4.0, ty in -4.0f64..4.0) {
            let img = random_image(10, 10, seed);
            let h = Homography::translation(tx, ty);
            prop_assert_eq!(warp(&img, &h, 10, 10).unwrap(), warp(&img, &h, 10, 10).unwrap());
        }

        #[test]
        fn translations_compound(
            seed in any::<u64>(),
            t1 in (-5i32..=5, -5i32..=5),
            t2 in (-5i32..=5, -5i32..=5),
        ) {
            let (w, h) = (16usize, 14usize);
            let img = random_image(w, h, seed);
            let h1 = Homography::translation(t1.0 as f64, t1.1 as f64);
            let h2 = Homography::translation(t2.0 as f64, t2.1 as f64);
            let twice = warp(&warp(&img, &h1, w, h).unwrap(), &h2, w, h).unwrap();
            let once = warp(&img, &h2.compose(&h1), w, h).unwrap();
            for y in 0..h {
                for x in 0..w {
                    // Only pixels whose intermediate sample stayed on the canvas
                    // can be compared; the rest were zero-filled in between.
                    let ix = x as i32 - t2.0;
                    let iy = y as i32 - t2.1;
                    if ix < 0 || iy < 0 || ix >= w as i32 || iy >= h as i32 {
                        continue;
                    }
                    let diff = (twice.get(x, y) as i32 - once.get(x, y) as i32).abs();
                    prop_assert!(diff <= 1, "pixel ({}, {}) differs by {}", x, y, diff);
                }
            }
        }
    }
}
