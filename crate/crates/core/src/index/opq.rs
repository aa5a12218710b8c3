//! Product quantizer over rotated residuals and the non-parametric OPQ
//! rotation (alternating sub-codebook k-means and Procrustes).

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::kmeans::{kmeans, lloyd, nearest};
use crate::detector::DESCRIPTOR_DIM;

const D: usize = DESCRIPTOR_DIM;

/// Lloyd refinements of the sub-codebooks after each rotation update.
const REFINE_ITERS: usize = 2;

/// `m` codebooks of `k` centroids over consecutive `D / m` dimensional slices.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ProductQuantizer {
    pub m: usize,
    pub k: usize,
    /// `m * k * dsub`, codebook-major.
    pub centroids: Vec<f32>,
}

impl ProductQuantizer {
    pub fn dsub(&self) -> usize {
        D / self.m
    }

    pub fn codebook(&self, j: usize) -> &[f32] {
        let len = self.k * self.dsub();
        &self.centroids[j * len..(j + 1) * len]
    }

    pub fn train<R: Rng>(data: &[f32], m: usize, k: usize, iters: usize, rng: &mut R) -> Self {
        let dsub = D / m;
        let mut centroids = Vec::with_capacity(m * k * dsub);
        for j in 0..m {
            let slice = sub_slice(data, j, dsub);
            centroids.extend(kmeans(&slice, dsub, k, iters, rng));
        }
        Self { m, k, centroids }
    }

    pub fn refine(&mut self, data: &[f32], iters: usize) {
        let dsub = self.dsub();
        let len = self.k * dsub;
        for j in 0..self.m {
            let slice = sub_slice(data, j, dsub);
            lloyd(&slice, dsub, &mut self.centroids[j * len..(j + 1) * len], iters);
        }
    }

    pub fn encode(&self, v: &[f32], out: &mut [u8]) {
        let dsub = self.dsub();
        for (j, code) in out.iter_mut().enumerate() {
            *code = nearest(&v[j * dsub..(j + 1) * dsub], self.codebook(j), dsub).0 as u8;
        }
    }

    pub fn decode(&self, codes: &[u8], out: &mut [f32]) {
        let dsub = self.dsub();
        for (j, &c) in codes.iter().enumerate() {
            let c = c as usize;
            out[j * dsub..(j + 1) * dsub].copy_from_slice(&self.codebook(j)[c * dsub..(c + 1) * dsub]);
        }
    }

    /// Quantized reconstruction of every row of `data`.
    pub fn reconstruct_all(&self, data: &[f32]) -> Vec<f32> {
        let mut out = vec![0f32; data.len()];
        out.par_chunks_exact_mut(D)
            .zip(data.par_chunks_exact(D))
            .for_each(|(o, v)| {
                let mut codes = vec![0u8; self.m];
                self.encode(v, &mut codes);
                self.decode(&codes, o);
            });
        out
    }
}

fn sub_slice(data: &[f32], j: usize, dsub: usize) -> Vec<f32> {
    data.chunks_exact(D)
        .flat_map(|row| row[j * dsub..(j + 1) * dsub].iter().copied())
        .collect()
}

/// Row-major `D x D` rotation applied as `y = R x`.
pub(crate) fn rotate(rotation: &[f32], x: &[f32], out: &mut [f32]) {
    for (o, row) in out.iter_mut().zip(rotation.chunks_exact(D)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

pub(crate) fn rotate_all(rotation: &[f32], data: &[f32]) -> Vec<f32> {
    let mut out = vec![0f32; data.len()];
    out.par_chunks_exact_mut(D)
        .zip(data.par_chunks_exact(D))
        .for_each(|(o, x)| rotate(rotation, x, o));
    out
}

pub(crate) fn identity() -> Vec<f32> {
    let mut r = vec![0f32; D * D];
    for i in 0..D {
        r[i * D + i] = 1.0;
    }
    r
}

/// Orthogonal `R` minimising `||R X - Y||`: with `Y Xᵀ = U S Vᵀ`, `R = U Vᵀ`.
pub(crate) fn procrustes(x: &[f32], y: &[f32]) -> Vec<f32> {
    let mut cross = DMatrix::<f64>::zeros(D, D);
    // fixed blocks summed in order keep the result independent of thread count
    const BLOCK: usize = 1024;
    let blocks: Vec<Vec<f64>> = x
        .par_chunks(BLOCK * D)
        .zip(y.par_chunks(BLOCK * D))
        .map(|(xb, yb)| {
            let mut acc = vec![0f64; D * D];
            for (xr, yr) in xb.chunks_exact(D).zip(yb.chunks_exact(D)) {
                for (a, &yv) in yr.iter().enumerate() {
                    let row = &mut acc[a * D..(a + 1) * D];
                    for (r, &xv) in row.iter_mut().zip(xr) {
                        *r += yv as f64 * xv as f64;
                    }
                }
            }
            acc
        })
        .collect();
    let mut partial = vec![0f64; D * D];
    for b in &blocks {
        partial.iter_mut().zip(b).for_each(|(s, v)| *s += v);
    }
    for a in 0..D {
        for b in 0..D {
            cross[(a, b)] = partial[a * D + b];
        }
    }
    let svd = cross.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    let mut out = vec![0f32; D * D];
    for a in 0..D {
        for b in 0..D {
            out[a * D + b] = r[(a, b)] as f32;
        }
    }
    out
}

/// Alternates sub-codebook k-means on `R x` with a Procrustes update of `R`.
/// `opq_iters == 0` is plain PQ (identity rotation).
pub(crate) fn train_opq<R: Rng>(
    residuals: &[f32],
    m: usize,
    k: usize,
    kmeans_iters: usize,
    opq_iters: usize,
    rng: &mut R,
) -> (Vec<f32>, ProductQuantizer) {
    let mut rotation = identity();
    let mut pq = ProductQuantizer::train(residuals, m, k, kmeans_iters, rng);
    for _ in 0..opq_iters {
        let rotated = rotate_all(&rotation, residuals);
        let recon = pq.reconstruct_all(&rotated);
        rotation = procrustes(residuals, &recon);
        let rotated = rotate_all(&rotation, residuals);
        pq.refine(&rotated, REFINE_ITERS);
    }
    (rotation, pq)
}
