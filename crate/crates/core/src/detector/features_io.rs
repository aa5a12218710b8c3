//! Per-image feature file:
//!
//! ```text
//! "PVF1" | u32 version | u64 image id | u32 count |
//!   count x (f32 x, f32 y, f32 scale, f32 response, 64 x f32 descriptor)
//! ```
//! little-endian throughout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{FeatureSet, InterestPoint, DESCRIPTOR_DIM};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"PVF1";
pub const FEATURE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 4;
const RECORD_LEN: usize = 4 * (4 + DESCRIPTOR_DIM);

pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * set.len());
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&set.image_id.to_le_bytes());
    buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for (p, d) in set.points.iter().zip(&set.descriptors) {
        for v in [p.x, p.y, p.scale, p.response].iter().chain(d.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("feature file too short ({} bytes)", bytes.len())));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            what: "feature file",
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "feature file",
            found: version,
        });
    }
    let image_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "feature file for image {image_id}: expected {expected} bytes for {count} points, got {}",
            bytes.len()
        )));
    }

    let mut points = Vec::with_capacity(count);
    let mut descriptors = Vec::with_capacity(count);
    for record in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN) {
        let mut floats = record.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut next = || floats.next().unwrap();
        points.push(InterestPoint {
            x: next(),
            y: next(),
            scale: next(),
            response: next(),
        });
        let mut d = [0f32; DESCRIPTOR_DIM];
        for v in &mut d {
            *v = next();
        }
        descriptors.push(d);
    }
    Ok(FeatureSet::new(image_id, points, descriptors))
}

pub fn write_feature_file(path: impl AsRef<Path>, set: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_features(set)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
