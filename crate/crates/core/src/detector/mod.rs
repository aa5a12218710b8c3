//! Hessian interest points, upright 64-d descriptors and distributed
//! interest point selection.

mod describe;
mod features_io;
mod hessian;
mod select;

pub use describe::describe;
pub use features_io::{
    decode_features, encode_features, read_feature_file, write_feature_file, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use hessian::detect;
pub use select::{select_distributed, select_distributed_detailed, Selection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub const DESCRIPTOR_DIM: usize = 64;

pub type Descriptor = [f32; DESCRIPTOR_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestPoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian-equivalent scale (1.2 for the 9x9 filter).
    pub scale: f32,
    /// Box-filter Hessian determinant.
    pub response: f32,
}

/// Interest points of one image with their descriptors, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub image_id: u64,
    pub points: Vec<InterestPoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn new(image_id: u64, points: Vec<InterestPoint>, descriptors: Vec<Descriptor>) -> Self {
        assert_eq!(points.len(), descriptors.len(), "one descriptor per point");
        Self {
            image_id,
            points,
            descriptors,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Points kept per image (p).
    pub points: usize,
    /// Strongest points kept unconditionally (m); `m == p` is plain top-p.
    pub top: usize,
    pub octaves: usize,
    pub layers: usize,
    pub hessian_threshold: f64,
    /// Disk radius multiplier for the overlap test (radius = factor * scale).
    pub overlap_factor: f64,
    /// Sampling step of the first octave, in pixels.
    pub initial_step: usize,
}

/// Response floor of the count-driven presets. They rank points by response
/// and cut at `points`, so the threshold only discards numerical noise.
pub const PRESET_RESPONSE_FLOOR: f64 = 1.0;

/// DSURF counts with the classic SURF threshold of 100.
impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hessian_threshold: 100.0,
            ..Self::dsurf()
        }
    }
}

impl DetectorConfig {
    fn with_counts(points: usize, top: usize) -> Self {
        Self {
            points,
            top,
            octaves: 4,
            layers: 4,
            hessian_threshold: PRESET_RESPONSE_FLOOR,
            overlap_factor: 3.0,
            initial_step: 1,
        }
    }

    /// Top-2000 strongest points.
    pub fn surf2k() -> Self {
        Self::with_counts(2000, 2000)
    }

    /// Top-5000 strongest points.
    pub fn surf5k() -> Self {
        Self::with_counts(5000, 5000)
    }

    /// 5000 points: the 2500 strongest plus 2500 spread over the image.
    pub fn dsurf() -> Self {
        Self::with_counts(5000, 2500)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.top == 0 || self.top > self.points {
            return Err(Error::InvalidConfig(format!(
                "need 0 < top <= points, got top={} points={}",
                self.top, self.points
            )));
        }
        if !(self.overlap_factor > 0.0) {
            return Err(Error::InvalidConfig("overlap_factor must be positive".into()));
        }
        if self.octaves == 0 || self.layers < 3 {
            return Err(Error::InvalidConfig(
                "need at least one octave and three layers".into(),
            ));
        }
        if self.initial_step == 0 {
            return Err(Error::InvalidConfig("initial_step must be positive".into()));
        }
        Ok(())
    }
}

/// Detect, select and describe: the per-image feature extraction used for
/// both indexing and querying.
pub fn extract_features(img: &GrayImage, image_id: u64, cfg: &DetectorConfig) -> FeatureSet {
    let detected = detect(img, cfg);
    let selected = select_distributed(&detected, cfg);
    let descriptors = describe(img, &selected);
    FeatureSet::new(image_id, selected, descriptors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = DetectorConfig::dsurf();
        assert_eq!((d.points, d.top), (5000, 2500));
        assert_eq!(DetectorConfig::surf5k().top, 5000);
        assert_eq!(DetectorConfig::surf2k().points, 2000);
        for cfg in [DetectorConfig::surf2k(), DetectorConfig::surf5k(), d] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn rejects_top_above_points() {
        let cfg = DetectorConfig {
            top: 10,
            points: 5,
            ..DetectorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
