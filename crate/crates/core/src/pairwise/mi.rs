use crate::error::{Error, Result};
use crate::imaging::{entropy_bits, match_histograms, warp, GrayImage};

use super::{estimate_homography, Match, MatchConfig};
use crate::detector::FeatureSet;

/// Mutual information in bits from the 256x256 joint histogram of two
/// same-sized patches.
pub fn mutual_information(r1: &GrayImage, r2: &GrayImage) -> Result<f64> {
    if (r1.width(), r1.height()) != (r2.width(), r2.height()) {
        return Err(Error::DimensionMismatch(format!(
            "patches {}x{} and {}x{}",
            r1.width(),
            r1.height(),
            r2.width(),
            r2.height()
        )));
    }
    let mut joint = vec![0u64; 256 * 256];
    for (&x, &y) in r1.data().iter().zip(r2.data()) {
        joint[x as usize * 256 + y as usize] += 1;
    }
    let n = r1.data().len() as f64;
    let mut px = [0u64; 256];
    let mut py = [0u64; 256];
    for x in 0..256 {
        for y in 0..256 {
            let c = joint[x * 256 + y];
            px[x] += c;
            py[y] += c;
        }
    }
    let mut mi = 0.0;
    for x in 0..256 {
        if px[x] == 0 {
            continue;
        }
        for y in 0..256 {
            let c = joint[x * 256 + y];
            if c == 0 {
                continue;
            }
            // p(x,y) log2(p(x,y) / (p(x) p(y))) with counts: c/n log2(c n / (cx cy))
            mi += c as f64 / n * (c as f64 * n / (px[x] as f64 * py[y] as f64)).log2();
        }
    }
    Ok(mi.max(0.0))
}

/// Shannon entropy of a patch in bits.
pub fn patch_entropy(r: &GrayImage) -> f64 {
    entropy_bits(r)
}

/// MI evidence that image i explains image j: i is warped into j's frame by
/// the homography of the consistent matches (i's points onto j's), both are
/// cropped to the bounding box of j's matched points, the warped patch is
/// histogram-matched to j's patch and their MI is returned. 0 when no
/// homography can be estimated.
pub fn mi_pair(
    img_i: &GrayImage,
    feats_i: &FeatureSet,
    img_j: &GrayImage,
    feats_j: &FeatureSet,
    matches: &[Match],
    cfg: &MatchConfig,
) -> Result<f64> {
    let fit = match estimate_homography(matches, &feats_i.points, &feats_j.points, cfg) {
        Ok(fit) => fit,
        Err(Error::NoHomography) | Err(Error::SingularHomography(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    let warped = warp(img_i, &fit.homography, img_j.width(), img_j.height())?;

    let inlier_pts = fit.inliers.iter().map(|&k| feats_j.points[matches[k].b]);
    let (mut x0, mut y0, mut x1, mut y1) = (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY);
    for p in inlier_pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let clamp = |v: f32, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
    let (x0, x1) = (clamp(x0, img_j.width()), clamp(x1, img_j.width()));
    let (y0, y1) = (clamp(y0, img_j.height()), clamp(y1, img_j.height()));
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);

    let r1 = warped.crop(x0, y0, w, h)?;
    let r2 = img_j.crop(x0, y0, w, h)?;
    let r1 = match_histograms(&r1, &r2)?;
    mutual_information(&r1, &r2)
}
