//! Shared inputs for the pipeline benchmarks.

use provenance_core::detector::Descriptor;
use provenance_core::imaging::GrayImage;
use provenance_core::synth::procedural_image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` unit-norm random descriptors.
pub fn descriptors(n: usize, seed: u64) -> Vec<Descriptor> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let mut d = [0f32; 64];
            d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            d.iter_mut().for_each(|v| *v /= norm);
            d
        })
        .collect()
}

pub fn scene(size: usize, seed: u64) -> GrayImage {
    procedural_image(size, size, &mut rng(seed))
}
