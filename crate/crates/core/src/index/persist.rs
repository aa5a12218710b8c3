//! Index file, little-endian:
//!
//! ```text
//! "PVIX" | u32 version |
//! config: u32 coarse_k, subq_m, subq_k, nprobe, knn_k, opq_iters, kmeans_iters | u64 batch_b | u64 seed |
//! u64 n_images | u64 n_features |
//! rotation 64x64 f32 (row-major) | coarse_k x 64 f32 | subq_m x subq_k x dsub f32 |
//! coarse_k x (u64 len | len x (u64 feature id | u64 image id | subq_m x u8))
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::opq::ProductQuantizer;
use super::{IndexConfig, InvertedList, IvfAdcIndex, D};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"PVIX";
pub const INDEX_VERSION: u32 = 1;

impl IvfAdcIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut b = Vec::new();
        b.extend_from_slice(&INDEX_MAGIC);
        b.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        for v in [c.coarse_k, c.subq_m, c.subq_k, c.nprobe, c.knn_k, c.opq_iters, c.kmeans_iters] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&(c.batch_b as u64).to_le_bytes());
        b.extend_from_slice(&c.seed.to_le_bytes());
        b.extend_from_slice(&self.n_images.to_le_bytes());
        b.extend_from_slice(&self.n_features.to_le_bytes());
        for v in self.rotation.iter().chain(&self.coarse).chain(&self.pq.centroids) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for list in &self.lists {
            b.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for (e, codes) in list.codes.chunks_exact(c.subq_m).enumerate() {
                b.extend_from_slice(&list.feature_ids[e].to_le_bytes());
                b.extend_from_slice(&list.image_ids[e].to_le_bytes());
                b.extend_from_slice(codes);
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != INDEX_MAGIC {
            return Err(Error::BadMagic {
                what: "index file",
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "index file",
                found: version,
            });
        }
        let mut small = [0usize; 7];
        for v in &mut small {
            *v = r.u32()? as usize;
        }
        let [coarse_k, subq_m, subq_k, nprobe, knn_k, opq_iters, kmeans_iters] = small;
        let config = IndexConfig {
            coarse_k,
            subq_m,
            subq_k,
            nprobe,
            knn_k,
            opq_iters,
            kmeans_iters,
            batch_b: r.u64()? as usize,
            seed: r.u64()?,
        };
        config
            .validate()
            .map_err(|e| Error::Corrupt(format!("index config: {e}")))?;
        let n_images = r.u64()?;
        let n_features = r.u64()?;
        let rotation = r.f32s(D * D)?;
        let coarse = r.f32s(coarse_k * D)?;
        let centroids = r.f32s(subq_k * D)?;

        let mut lists = Vec::with_capacity(coarse_k);
        let mut total = 0u64;
        for _ in 0..coarse_k {
            let len = r.u64()?;
            let entry = 16 + subq_m;
            if len.checked_mul(entry as u64).map_or(true, |n| n > r.remaining() as u64) {
                return Err(Error::Corrupt(format!("inverted list of {len} entries overruns the file")));
            }
            let len = len as usize;
            let mut list = InvertedList {
                feature_ids: Vec::with_capacity(len),
                image_ids: Vec::with_capacity(len),
                codes: Vec::with_capacity(len * subq_m),
            };
            for _ in 0..len {
                list.feature_ids.push(r.u64()?);
                list.image_ids.push(r.u64()?);
                let codes = r.take(subq_m)?;
                if codes.iter().any(|&c| c as usize >= subq_k) {
                    return Err(Error::Corrupt("PQ code out of range".into()));
                }
                list.codes.extend_from_slice(codes);
            }
            total += len as u64;
            lists.push(list);
        }
        if r.remaining() != 0 {
            return Err(Error::Corrupt(format!("{} trailing bytes after index", r.remaining())));
        }
        if total != n_features {
            return Err(Error::Corrupt(format!(
                "lists hold {total} entries but header says {n_features}"
            )));
        }
        Ok(Self {
            config,
            rotation,
            coarse,
            pq: ProductQuantizer {
                m: subq_m,
                k: subq_k,
                centroids,
            },
            lists,
            n_images,
            n_features,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Corrupt(format!(
                "index file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained() -> IvfAdcIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<_> = (0..200)
            .map(|_| {
                let mut d = [0f32; D];
                d.iter_mut().for_each(|v| *v = rng.random());
                d
            })
            .collect();
        let cfg = IndexConfig {
            coarse_k: 4,
            subq_k: 16,
            subq_m: 4,
            opq_iters: 2,
            kmeans_iters: 4,
            ..IndexConfig::default()
        };
        IvfAdcIndex::train(&data, &cfg).unwrap()
    }

    #[test]
    fn empty_index_round_trips() {
        let index = trained();
        assert_eq!(IvfAdcIndex::from_bytes(&index.to_bytes()).unwrap(), index);
    }

    #[test]
    fn header_layout() {
        let b = trained().to_bytes();
        assert_eq!(&b[..4], b"PVIX");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), INDEX_VERSION);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 4);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = trained().to_bytes();
        let mut bad = good.clone();
        bad[1] = b'Q';
        assert!(matches!(IvfAdcIndex::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(IvfAdcIndex::from_bytes(&bad), Err(Error::UnsupportedVersion { found: 2, .. })));
        assert!(matches!(IvfAdcIndex::from_bytes(&good[..good.len() - 1]), Err(Error::Corrupt(_))));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(IvfAdcIndex::from_bytes(&bad), Err(Error::Corrupt(_))));
    }
}
