//! Similarity-model consistency filter and RANSAC homography estimation.

use std::collections::HashSet;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Match, MatchConfig};
use crate::detector::InterestPoint;
use crate::error::{Error, Result};
use crate::imaging::Homography;

type P2 = (f64, f64);

fn pt(p: &InterestPoint) -> P2 {
    (p.x as f64, p.y as f64)
}

/// Similarity `x -> s R(theta) (x - p1) + q1` taking segment p1p2 onto q1q2.
#[derive(Clone, Copy, Debug)]
struct Similarity {
    c: f64,
    s: f64,
    p1: P2,
    q1: P2,
}

impl Similarity {
    fn from_pairs(p1: P2, p2: P2, q1: P2, q2: P2) -> Option<Self> {
        let (vpx, vpy) = (p2.0 - p1.0, p2.1 - p1.1);
        let (vqx, vqy) = (q2.0 - q1.0, q2.1 - q1.1);
        let lp = vpx.hypot(vpy);
        let lq = vqx.hypot(vqy);
        if lp < 1e-9 || lq < 1e-9 {
            return None;
        }
        let scale = lq / lp;
        let angle = vqy.atan2(vqx) - vpy.atan2(vpx);
        Some(Self {
            c: scale * angle.cos(),
            s: scale * angle.sin(),
            p1,
            q1,
        })
    }

    fn apply(&self, p: P2) -> P2 {
        let (dx, dy) = (p.0 - self.p1.0, p.1 - self.p1.1);
        (self.q1.0 + self.c * dx - self.s * dy, self.q1.1 + self.s * dx + self.c * dy)
    }
}

/// All index pairs when there are at most `trials` of them, otherwise
/// `trials` random distinct pairs.
fn pair_samples(n: usize, trials: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    if total <= trials {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    (0..trials)
        .map(|_| {
            let v = sample(rng, n, 2);
            (v.index(0), v.index(1))
        })
        .collect()
}

/// Keeps the matches that agree with the best similarity model built from a
/// pair of matches: most inliers within `gc_epsilon`, then smallest mean
/// residual. Inliers are one-to-one; of several matches sharing a point only
/// the closest one counts. Fewer than two matches are returned unchanged; if every sampled
/// pair is degenerate nothing is consistent.
pub fn geometric_consistency(
    matches: &[Match],
    pts_a: &[InterestPoint],
    pts_b: &[InterestPoint],
    cfg: &MatchConfig,
) -> Vec<Match> {
    if matches.len() < 2 {
        return matches.to_vec();
    }
    let a: Vec<P2> = matches.iter().map(|m| pt(&pts_a[m.a])).collect();
    let b: Vec<P2> = matches.iter().map(|m| pt(&pts_b[m.b])).collect();
    let eps2 = cfg.gc_epsilon * cfg.gc_epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for (i, j) in pair_samples(matches.len(), cfg.gc_trials, &mut rng) {
        let Some(model) = Similarity::from_pairs(a[i], a[j], b[i], b[j]) else { continue };
        let mut close: Vec<(f64, usize)> = Vec::new();
        for (k, (&pa, &pb)) in a.iter().zip(&b).enumerate() {
            let (x, y) = model.apply(pa);
            let d2 = (x - pb.0).powi(2) + (y - pb.1).powi(2);
            if d2 <= eps2 {
                close.push((d2, k));
            }
        }
        // one-to-one: a point supports the model through its closest match only
        close.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let (mut used_a, mut used_b) = (HashSet::new(), HashSet::new());
        let mut inliers = Vec::new();
        let mut residual = 0.0;
        for (d2, k) in close {
            let m = matches[k];
            if !used_a.contains(&m.a) && !used_b.contains(&m.b) {
                used_a.insert(m.a);
                used_b.insert(m.b);
                inliers.push(k);
                residual += d2.sqrt();
            }
        }
        inliers.sort_unstable();
        let mean = residual / inliers.len().max(1) as f64;
        let better = match &best {
            None => true,
            Some((count, best_mean, _)) => inliers.len() > *count || (inliers.len() == *count && mean < *best_mean),
        };
        if better {
            best = Some((inliers.len(), mean, inliers));
        }
    }
    best.map(|(_, _, idx)| idx.into_iter().map(|k| matches[k]).collect())
        .unwrap_or_default()
}

#[derive(Clone, Debug)]
pub struct HomographyFit {
    /// Maps A's points onto B's.
    pub homography: Homography,
    /// Positions in the input match list.
    pub inliers: Vec<usize>,
    /// Reprojection RMS over the inliers, in pixels.
    pub rms: f64,
}

/// Hartley normalisation: centroid to the origin, mean distance sqrt(2).
fn normaliser(points: &[P2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (cx, cy) = points.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean = points.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    let s = if mean > 1e-12 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: P2) -> P2 {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Normalised DLT over all given correspondences.
pub(crate) fn dlt(a: &[P2], b: &[P2]) -> Option<Matrix3<f64>> {
    let n = a.len();
    if n < 4 {
        return None;
    }
    let (ta, tb) = (normaliser(a), normaliser(b));
    // at least 9 rows so the SVD yields a full right basis
    let rows = (2 * n).max(9);
    let mut m = DMatrix::<f64>::zeros(rows, 9);
    for k in 0..n {
        let (x, y) = transform(&ta, a[k]);
        let (u, v) = transform(&tb, b[k]);
        let r = 2 * k;
        m.row_mut(r).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        m.row_mut(r + 1).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = tb.try_inverse()? * hn * ta;
    if !h.iter().all(|v| v.is_finite()) || h.determinant().abs() <= 1e-12 * h.norm().powi(3) {
        return None;
    }
    Some(h)
}

fn reprojection_sq(h: &Matrix3<f64>, a: P2, b: P2) -> f64 {
    let v = h * Vector3::new(a.0, a.1, 1.0);
    if v.z.abs() < 1e-12 {
        return f64::INFINITY;
    }
    (v.x / v.z - b.0).powi(2) + (v.y / v.z - b.1).powi(2)
}

fn collinear(p: P2, q: P2, r: P2) -> bool {
    ((q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)).abs() < 1e-6
}

fn degenerate(s: &[P2]) -> bool {
    (0..4).any(|skip| {
        let t: Vec<P2> = (0..4).filter(|&i| i != skip).map(|i| s[i]).collect();
        collinear(t[0], t[1], t[2])
    })
}

fn inliers_of(h: &Matrix3<f64>, a: &[P2], b: &[P2], eps2: f64) -> Vec<usize> {
    (0..a.len()).filter(|&k| reprojection_sq(h, a[k], b[k]) <= eps2).collect()
}

/// RANSAC homography from the points of `matches` (A onto B).
pub fn estimate_homography(
    matches: &[Match],
    pts_a: &[InterestPoint],
    pts_b: &[InterestPoint],
    cfg: &MatchConfig,
) -> Result<HomographyFit> {
    let a: Vec<P2> = matches.iter().map(|m| pt(&pts_a[m.a])).collect();
    let b: Vec<P2> = matches.iter().map(|m| pt(&pts_b[m.b])).collect();
    fit_homography(&a, &b, cfg)
}

/// RANSAC over 4-point DLT samples (`ransac_trials` draws, inlier radius
/// `gc_epsilon`), then least-squares refits on the inliers until the inlier
/// set is stable.
pub fn fit_homography(a: &[(f64, f64)], b: &[(f64, f64)], cfg: &MatchConfig) -> Result<HomographyFit> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.len() < cfg.min_matches_for_homography.max(4) {
        return Err(Error::NoHomography);
    }
    let n = a.len();
    let eps2 = cfg.gc_epsilon * cfg.gc_epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut best: Option<(Vec<usize>, f64)> = None;
    let exhaustive = n == 4;
    let trials = if exhaustive { 1 } else { cfg.ransac_trials };
    for _ in 0..trials {
        let idx: Vec<usize> = if exhaustive {
            (0..4).collect()
        } else {
            sample(&mut rng, n, 4).into_vec()
        };
        let sa: Vec<P2> = idx.iter().map(|&i| a[i]).collect();
        let sb: Vec<P2> = idx.iter().map(|&i| b[i]).collect();
        if degenerate(&sa) || degenerate(&sb) {
            continue;
        }
        let Some(h) = dlt(&sa, &sb) else { continue };
        let inl = inliers_of(&h, a, b, eps2);
        let err: f64 = inl.iter().map(|&k| reprojection_sq(&h, a[k], b[k])).sum();
        let better = match &best {
            None => inl.len() >= 4,
            Some((bi, be)) => inl.len() > bi.len() || (inl.len() == bi.len() && err < *be),
        };
        if better {
            best = Some((inl, err));
        }
        if best.as_ref().is_some_and(|(bi, _)| bi.len() == n) {
            break;
        }
    }
    let (mut inliers, _) = best.ok_or(Error::NoHomography)?;

    let mut h = None;
    for _ in 0..5 {
        let ia: Vec<P2> = inliers.iter().map(|&k| a[k]).collect();
        let ib: Vec<P2> = inliers.iter().map(|&k| b[k]).collect();
        let Some(refit) = dlt(&ia, &ib) else { break };
        let next = inliers_of(&refit, a, b, eps2);
        h = Some(refit);
        if next.len() < 4 || next == inliers {
            break;
        }
        inliers = next;
    }
    let h = h.ok_or(Error::NoHomography)?;
    let homography = Homography::new(h);
    if !homography.is_invertible() {
        return Err(Error::SingularHomography(homography.determinant()));
    }
    let rms = (inliers.iter().map(|&k| reprojection_sq(&h, a[k], b[k])).sum::<f64>() / inliers.len() as f64).sqrt();
    Ok(HomographyFit {
        homography,
        inliers,
        rms,
    })
}
