use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Descriptor, FeatureSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Index into A's points.
    pub a: usize,
    /// Index into B's points.
    pub b: usize,
    pub distance: f32,
}

impl Match {
    pub fn swapped(self) -> Match {
        Match {
            a: self.b,
            b: self.a,
            distance: self.distance,
        }
    }
}

/// Lowe's ratio test: keep when `d1 / d2 <= t`. `d2 = inf` always passes.
#[inline]
pub fn nndr_accept(d1: f64, d2: f64, t: f64) -> bool {
    if d2.is_infinite() {
        return true;
    }
    d1 <= t * d2
}

#[inline]
fn sq_dist(a: &Descriptor, b: &Descriptor) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest and second-nearest squared distances from `q` into `pool`
/// (lowest index wins ties). `None` for an empty pool.
pub(crate) fn two_nearest(q: &Descriptor, pool: &[Descriptor]) -> Option<(usize, f32, f32)> {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for (i, d) in pool.iter().enumerate() {
        let dist = sq_dist(q, d);
        if dist < best.1 {
            second = best.1;
            best = (i, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Best match in `pool` for every query descriptor that passes the ratio test.
pub(crate) fn ratio_matches(queries: &[Descriptor], pool: &[Descriptor], t: f64) -> Vec<Match> {
    queries
        .par_iter()
        .enumerate()
        .with_min_len(32)
        .filter_map(|(a, q)| {
            let (b, d1, d2) = two_nearest(q, pool)?;
            let (d1, d2) = ((d1 as f64).sqrt(), (d2 as f64).sqrt());
            nndr_accept(d1, d2, t).then_some(Match {
                a,
                b,
                distance: d1 as f32,
            })
        })
        .collect()
}

/// A-to-B nearest-neighbour matches filtered by the distance-ratio test.
pub fn nndr_match(a: &FeatureSet, b: &FeatureSet, t: f64) -> Vec<Match> {
    ratio_matches(&a.descriptors, &b.descriptors, t)
}
