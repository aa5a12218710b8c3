use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{warp, GrayImage, Homography};

/// Smallest side a transformed image may have.
pub const MIN_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Crop,
    Scale,
    Rotate,
    Brightness,
    Clip,
    Blur,
    Splice,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::Crop,
        TransformKind::Scale,
        TransformKind::Rotate,
        TransformKind::Brightness,
        TransformKind::Clip,
        TransformKind::Blur,
        TransformKind::Splice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Crop => "crop",
            TransformKind::Scale => "scale",
            TransformKind::Rotate => "rotate",
            TransformKind::Brightness => "brightness",
            TransformKind::Clip => "clip",
            TransformKind::Blur => "blur",
            TransformKind::Splice => "splice",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown transform `{s}`")))
    }

    /// Clipping and blurring destroy information, so the parent cannot be
    /// rebuilt from the child.
    pub fn irreversible(self) -> bool {
        matches!(self, TransformKind::Clip | TransformKind::Blur)
    }
}

fn random_crop<R: Rng>(img: &GrayImage, lo: f64, hi: f64, rng: &mut R) -> Result<GrayImage> {
    for _ in 0..16 {
        let w = (img.width() as f64 * rng.random_range(lo..hi)).round() as usize;
        let h = (img.height() as f64 * rng.random_range(lo..hi)).round() as usize;
        if w < MIN_SIDE || h < MIN_SIDE || w > img.width() || h > img.height() {
            continue;
        }
        let x = rng.random_range(0..=img.width() - w);
        let y = rng.random_range(0..=img.height() - h);
        return img.crop(x, y, w, h);
    }
    Err(Error::InvalidImage(format!(
        "{}x{} too small to crop",
        img.width(),
        img.height()
    )))
}

fn signed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Small rotation and rescale about the centre on the same canvas, as an
/// edited image is resampled when re-saved.
fn jitter<R: Rng>(img: &GrayImage, rng: &mut R) -> Result<GrayImage> {
    let angle = signed(rng, 3.0, 8.0) * PI / 180.0;
    let scale = rng.random_range(0.92..1.08);
    let (cx, cy) = ((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
    warp(img, &Homography::similarity(scale, angle, cx, cy, 0.0, 0.0), img.width(), img.height())
}

fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, h - 1))
                    };
                    acc += kv * src[(sy * w + sx) as usize];
                }
                out[(y * w + x) as usize] = acc / norm;
            }
        }
        out
    };
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let out = pass(&pass(&src, true), false);
    GrayImage::new(img.width(), img.height(), out.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
        .expect("same dimensions")
}

/// Single-parent transformation of `img`. Splicing goes through [`splice`].
pub fn apply<R: Rng>(kind: TransformKind, img: &GrayImage, rng: &mut R) -> Result<GrayImage> {
    match kind {
        TransformKind::Crop => random_crop(img, 0.75, 0.92, rng),
        TransformKind::Scale => {
            let s = 1.0 + signed(rng, 0.12, 0.3);
            let (w, h) = (
                (img.width() as f64 * s).round() as usize,
                (img.height() as f64 * s).round() as usize,
            );
            warp(img, &Homography::scaling(s, s), w.max(MIN_SIDE), h.max(MIN_SIDE))
        }
        TransformKind::Rotate => {
            let angle = signed(rng, 8.0, 25.0) * PI / 180.0;
            let (cx, cy) = ((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
            warp(img, &Homography::similarity(1.0, angle, cx, cy, 0.0, 0.0), img.width(), img.height())
        }
        TransformKind::Brightness => {
            let a = rng.random_range(0.75..1.25);
            let b = rng.random_range(-25.0..25.0);
            Ok(img.map(|v| (a * v as f64 + b).round().clamp(0.0, 255.0) as u8))
        }
        TransformKind::Clip => {
            let lo = rng.random_range(50..80u8);
            let hi = rng.random_range(170..205u8);
            Ok(jitter(img, rng)?.map(|v| v.clamp(lo, hi)))
        }
        TransformKind::Blur => {
            let sigma = rng.random_range(1.0..2.0);
            Ok(gaussian_blur(&jitter(img, rng)?, sigma))
        }
        TransformKind::Splice => Err(Error::InvalidConfig("splice needs a donor".into())),
    }
}

/// Pastes a random region of `donor` (30-50% of each side) somewhere into
/// `host`.
pub fn splice<R: Rng>(host: &GrayImage, donor: &GrayImage, rng: &mut R) -> Result<GrayImage> {
    let mut region = random_crop(donor, 0.3, 0.5, rng)?;
    if region.width() > host.width() || region.height() > host.height() {
        region = region.crop(0, 0, region.width().min(host.width()), region.height().min(host.height()))?;
    }
    let x0 = rng.random_range(0..=host.width() - region.width());
    let y0 = rng.random_range(0..=host.height() - region.height());
    let mut out = host.clone();
    for y in 0..region.height() {
        for x in 0..region.width() {
            out.set(x0 + x, y0 + y, region.get(x, y));
        }
    }
    Ok(out)
}
