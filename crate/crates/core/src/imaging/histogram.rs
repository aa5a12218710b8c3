use super::GrayImage;
use crate::error::{Error, Result};

/// Histogram specification: remaps `src` so its value distribution follows
/// `reference`.
///
/// Each source level `v` goes to the smallest reference level `g` with
/// `cdf_ref(g) >= cdf_src(v)`. CDFs are compared as exact cross-multiplied
/// integer counts, so a patch matched against itself is left untouched.
pub fn match_histograms(src: &GrayImage, reference: &GrayImage) -> Result<GrayImage> {
    if src.data().is_empty() || reference.data().is_empty() {
        return Err(Error::EmptyPatch);
    }
    let lut = specification_lut(&src.histogram(), &reference.histogram());
    Ok(src.map(|v| lut[v as usize]))
}

fn cumulative(hist: &[u64; 256]) -> [u64; 256] {
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, &h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    cdf
}

fn specification_lut(src_hist: &[u64; 256], ref_hist: &[u64; 256]) -> [u8; 256] {
    let src_cdf = cumulative(src_hist);
    let ref_cdf = cumulative(ref_hist);
    let n_src = src_cdf[255] as u128;
    let n_ref = ref_cdf[255] as u128;
    let mut lut = [0u8; 256];
    let mut g = 0usize;
    // src_cdf is non-decreasing, so the target level only ever moves up.
    for v in 0..256 {
        let need = src_cdf[v] as u128 * n_ref;
        while g < 255 && (ref_cdf[g] as u128 * n_src) < need {
            g += 1;
        }
        lut[v] = g as u8;
    }
    lut
}
