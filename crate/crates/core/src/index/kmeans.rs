use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
#[inline]
pub(crate) fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub(crate) fn assign(data: &[f32], centroids: &[f32], dim: usize) -> Vec<(usize, f32)> {
    data.par_chunks_exact(dim)
        .with_min_len(256)
        .map(|p| nearest(p, centroids, dim))
        .collect()
}

/// k-means++ seeding: first centroid uniform, the rest drawn proportionally
/// to the squared distance to the closest centroid chosen so far.
pub(crate) fn seed_plus_plus<R: Rng>(data: &[f32], dim: usize, k: usize, rng: &mut R) -> Vec<f32> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]) as f64)
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // fewer distinct points than centroids; duplicates are fixed up by Lloyd
            sample(rng, n, 1).index(0)
        };
        let c = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        d2.par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(d, p)| *d = d.min(sq_dist(p, c) as f64));
    }
    centroids
}

/// Lloyd iterations from `centroids`. An empty cluster takes the point
/// farthest from its current centroid.
pub(crate) fn lloyd(data: &[f32], dim: usize, centroids: &mut [f32], iters: usize) {
    let k = centroids.len() / dim;
    for _ in 0..iters {
        let assignment = assign(data, centroids, dim);
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v as f64;
            }
        }

        let mut far: Vec<(f32, usize)> = assignment.iter().enumerate().map(|(i, &(_, d))| (d, i)).collect();
        let mut taken = 0;
        if counts.contains(&0) {
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
        for c in 0..k {
            let target = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                let idx = far[taken.min(far.len() - 1)].1;
                taken += 1;
                target.copy_from_slice(&data[idx * dim..(idx + 1) * dim]);
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (t, s) in target.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *t = (s * inv) as f32;
                }
            }
        }
    }
}

pub(crate) fn kmeans<R: Rng>(data: &[f32], dim: usize, k: usize, iters: usize, rng: &mut R) -> Vec<f32> {
    let mut centroids = seed_plus_plus(data, dim, k, rng);
    lloyd(data, dim, &mut centroids, iters);
    centroids
}
