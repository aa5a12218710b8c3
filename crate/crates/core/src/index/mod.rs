//! OPQ-rotated IVFADC index: coarse inverted file over rotated descriptors,
//! product-quantized residuals and asymmetric distance search.

mod ingest;
mod kmeans;
mod opq;
mod persist;

pub use ingest::{ingest_feature_files, IngestReport};
pub use persist::{INDEX_MAGIC, INDEX_VERSION};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Descriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use opq::{rotate, ProductQuantizer};

const D: usize = DESCRIPTOR_DIM;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub coarse_k: usize,
    pub subq_m: usize,
    pub subq_k: usize,
    pub nprobe: usize,
    /// Neighbours returned per query feature (K).
    pub knn_k: usize,
    /// Ingestion batch size in features (B).
    pub batch_b: usize,
    pub opq_iters: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            coarse_k: 32,
            subq_m: 8,
            subq_k: 96,
            nprobe: 4,
            knn_k: 20,
            batch_b: 65536,
            opq_iters: 10,
            kmeans_iters: 25,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.subq_m == 0 || D % self.subq_m != 0 {
            return bad(format!("subq_m={} must divide {D}", self.subq_m));
        }
        if self.coarse_k == 0 || self.subq_k == 0 || self.subq_k > 256 {
            return bad(format!(
                "need coarse_k >= 1 and 1 <= subq_k <= 256, got {} and {}",
                self.coarse_k, self.subq_k
            ));
        }
        if self.nprobe == 0 || self.nprobe > self.coarse_k {
            return bad(format!("nprobe={} outside 1..={}", self.nprobe, self.coarse_k));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.batch_b == 0 {
            return bad("batch_b must be at least 1".into());
        }
        Ok(())
    }

    /// Smallest training sample accepted by [`IvfAdcIndex::train`].
    pub fn min_training_size(&self) -> usize {
        10 * self.coarse_k.max(self.subq_k)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvertedList {
    pub feature_ids: Vec<u64>,
    pub image_ids: Vec<u64>,
    /// `subq_m` codes per entry.
    pub codes: Vec<u8>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_ids.is_empty()
    }
}

/// One search hit. Rows shorter than K are padded with [`Neighbor::SENTINEL`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub feature_id: u64,
    pub image_id: u64,
    pub distance: f32,
}

impl Neighbor {
    pub const SENTINEL: Neighbor = Neighbor {
        feature_id: u64::MAX,
        image_id: u64::MAX,
        distance: f32::INFINITY,
    };

    pub fn is_sentinel(&self) -> bool {
        self.feature_id == u64::MAX
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvfAdcIndex {
    pub(crate) config: IndexConfig,
    /// Row-major 64x64 OPQ rotation.
    pub(crate) rotation: Vec<f32>,
    /// `coarse_k x 64` centroids in the rotated space.
    pub(crate) coarse: Vec<f32>,
    pub(crate) pq: ProductQuantizer,
    pub(crate) lists: Vec<InvertedList>,
    pub(crate) n_images: u64,
    pub(crate) n_features: u64,
}

/// Encoded feature ready to be appended.
pub(crate) struct Encoded {
    list: usize,
    image_id: u64,
    codes: Vec<u8>,
}

impl IvfAdcIndex {
    /// Trains the coarse quantizer, the OPQ rotation and the residual
    /// sub-codebooks. The returned index has empty lists.
    pub fn train(sample: &[Descriptor], config: &IndexConfig) -> Result<Self> {
        config.validate()?;
        let needed = config.min_training_size();
        if sample.len() < needed {
            return Err(Error::SampleTooSmall {
                needed,
                got: sample.len(),
            });
        }
        let data: Vec<f32> = sample.iter().flatten().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        // k-means is rotation invariant, so the coarse quantizer is trained
        // in the input space and rotated once R is known.
        let coarse_raw = kmeans::kmeans(&data, D, config.coarse_k, config.kmeans_iters, &mut rng);
        let assignment = kmeans::assign(&data, &coarse_raw, D);
        let mut residuals = data;
        for (row, &(c, _)) in residuals.chunks_exact_mut(D).zip(&assignment) {
            for (v, cv) in row.iter_mut().zip(&coarse_raw[c * D..(c + 1) * D]) {
                *v -= cv;
            }
        }

        let (rotation, pq) = opq::train_opq(
            &residuals,
            config.subq_m,
            config.subq_k,
            config.kmeans_iters,
            config.opq_iters,
            &mut rng,
        );
        let coarse = opq::rotate_all(&rotation, &coarse_raw);
        Ok(Self {
            config: config.clone(),
            rotation,
            coarse,
            pq,
            lists: vec![InvertedList::default(); config.coarse_k],
            n_images: 0,
            n_features: 0,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    /// Search-time parameters (nprobe, K) may change after training.
    pub fn set_search_params(&mut self, nprobe: usize, knn_k: usize) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.nprobe = nprobe;
        cfg.knn_k = knn_k;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn rotation(&self) -> &[f32] {
        &self.rotation
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn n_images(&self) -> u64 {
        self.n_images
    }

    pub fn n_features(&self) -> u64 {
        self.n_features
    }

    pub fn rotate(&self, v: &Descriptor) -> Descriptor {
        let mut out = [0f32; D];
        rotate(&self.rotation, v, &mut out);
        out
    }

    /// Mean squared error of rotating, coarse-quantizing and PQ-encoding `data`.
    pub fn quantization_mse(&self, data: &[Descriptor]) -> f64 {
        let per_vector: Vec<f64> = data
            .par_iter()
            .map(|v| {
                let (list, codes) = self.encode_one(v);
                let recon = self.reconstruct(list, &codes);
                let rotated = self.rotate(v);
                rotated.iter().zip(&recon).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
            })
            .collect();
        per_vector.iter().sum::<f64>() / data.len().max(1) as f64
    }

    /// Rotated-space reconstruction: coarse centroid plus decoded residual.
    pub fn reconstruct(&self, list: usize, codes: &[u8]) -> Descriptor {
        let mut out = [0f32; D];
        self.pq.decode(codes, &mut out);
        for (o, c) in out.iter_mut().zip(&self.coarse[list * D..(list + 1) * D]) {
            *o += c;
        }
        out
    }

    /// Coarse list and PQ codes of one descriptor.
    pub fn encode_one(&self, v: &Descriptor) -> (usize, Vec<u8>) {
        let rotated = self.rotate(v);
        let (list, _) = kmeans::nearest(&rotated, &self.coarse, D);
        let mut residual = rotated;
        for (r, c) in residual.iter_mut().zip(&self.coarse[list * D..(list + 1) * D]) {
            *r -= c;
        }
        let mut codes = vec![0u8; self.pq.m];
        self.pq.encode(&residual, &mut codes);
        (list, codes)
    }

    pub(crate) fn encode_batch(&self, features: &[(u64, Descriptor)]) -> Vec<Encoded> {
        features
            .par_iter()
            .with_min_len(64)
            .map(|(image_id, v)| {
                let (list, codes) = self.encode_one(v);
                Encoded {
                    list,
                    image_id: *image_id,
                    codes,
                }
            })
            .collect()
    }

    /// Appends in order; feature ids continue from `n_features`.
    pub(crate) fn append(&mut self, encoded: Vec<Encoded>) {
        for e in encoded {
            let list = &mut self.lists[e.list];
            list.feature_ids.push(self.n_features);
            list.image_ids.push(e.image_id);
            list.codes.extend_from_slice(&e.codes);
            self.n_features += 1;
            self.n_images = self.n_images.max(e.image_id.saturating_add(1));
        }
    }

    /// Adds `(image id, descriptor)` pairs in batches of `batch_b`.
    pub fn add_batch(&mut self, features: &[(u64, Descriptor)]) -> IngestReport {
        let mut report = IngestReport::default();
        for chunk in features.chunks(self.config.batch_b) {
            let encoded = self.encode_batch(chunk);
            self.append(encoded);
            report.batch_sizes.push(chunk.len());
            report.added += chunk.len() as u64;
        }
        report
    }

    /// The `nprobe` coarse lists closest to a rotated query, nearest first
    /// (lower list index on ties).
    fn probe(&self, rotated: &[f32], nprobe: usize) -> Vec<usize> {
        let mut dists: Vec<(f32, usize)> = self
            .coarse
            .chunks_exact(D)
            .enumerate()
            .map(|(c, centroid)| (kmeans::sq_dist(rotated, centroid), c))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists.into_iter().take(nprobe).map(|(_, c)| c).collect()
    }

    /// K nearest indexed features of one query by ADC, ascending distance
    /// then feature id, padded with sentinels.
    pub fn search_one(&self, query: &Descriptor) -> Vec<Neighbor> {
        let (m, k, dsub) = (self.pq.m, self.pq.k, self.pq.dsub());
        let knn = self.config.knn_k;
        let rotated = self.rotate(query);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(knn + 1);
        let mut table = vec![0f32; m * k];

        for list_idx in self.probe(&rotated, self.config.nprobe) {
            let list = &self.lists[list_idx];
            if list.is_empty() {
                continue;
            }
            let centroid = &self.coarse[list_idx * D..(list_idx + 1) * D];
            for j in 0..m {
                let book = self.pq.codebook(j);
                let r: Vec<f32> = (j * dsub..(j + 1) * dsub).map(|d| rotated[d] - centroid[d]).collect();
                for (c, entry) in table[j * k..(j + 1) * k].iter_mut().enumerate() {
                    *entry = kmeans::sq_dist(&r, &book[c * dsub..(c + 1) * dsub]);
                }
            }
            for (e, codes) in list.codes.chunks_exact(m).enumerate() {
                let dist: f32 = codes.iter().enumerate().map(|(j, &c)| table[j * k + c as usize]).sum();
                let cand = Candidate {
                    distance: dist,
                    feature_id: list.feature_ids[e],
                    image_id: list.image_ids[e],
                };
                if heap.len() < knn {
                    heap.push(cand);
                } else if cand < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }

        let mut row: Vec<Neighbor> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                feature_id: c.feature_id,
                image_id: c.image_id,
                distance: c.distance,
            })
            .collect();
        row.resize(knn, Neighbor::SENTINEL);
        row
    }

    /// One row of K neighbours per query (the matrix R).
    pub fn search_knn(&self, queries: &[Descriptor]) -> Result<Vec<Vec<Neighbor>>> {
        if self.n_features == 0 {
            return Err(Error::EmptyIndex);
        }
        Ok(queries.par_iter().map(|q| self.search_one(q)).collect())
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    distance: f32,
    feature_id: u64,
    image_id: u64,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.feature_id.cmp(&other.feature_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_descriptors(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut d = [0f32; D];
                d.iter_mut().for_each(|v| *v = rng.random::<f32>());
                d
            })
            .collect()
    }

    fn small_config() -> IndexConfig {
        IndexConfig {
            coarse_k: 8,
            subq_k: 16,
            opq_iters: 3,
            kmeans_iters: 8,
            batch_b: 100,
            ..IndexConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        IndexConfig::default().validate().unwrap();
        for bad in [
            IndexConfig { subq_m: 7, ..IndexConfig::default() },
            IndexConfig { nprobe: 33, ..IndexConfig::default() },
            IndexConfig { nprobe: 0, ..IndexConfig::default() },
            IndexConfig { knn_k: 0, ..IndexConfig::default() },
            IndexConfig { subq_k: 300, ..IndexConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sample_too_small() {
        let cfg = small_config();
        let err = IvfAdcIndex::train(&random_descriptors(159, 1), &cfg).unwrap_err();
        assert!(matches!(err, Error::SampleTooSmall { needed: 160, got: 159 }));
    }

    #[test]
    fn empty_index_search_fails() {
        let index = IvfAdcIndex::train(&random_descriptors(300, 2), &small_config()).unwrap();
        assert!(matches!(index.search_knn(&random_descriptors(1, 3)), Err(Error::EmptyIndex)));
    }

    #[test]
    fn adding_nothing_changes_nothing() {
        let mut index = IvfAdcIndex::train(&random_descriptors(300, 2), &small_config()).unwrap();
        let before = index.clone();
        let report = index.add_batch(&[]);
        assert_eq!(report.added, 0);
        assert!(report.batch_sizes.is_empty());
        assert_eq!(index, before);
    }

    #[test]
    fn feature_ids_are_contiguous_in_arrival_order() {
        let data = random_descriptors(350, 4);
        let mut index = IvfAdcIndex::train(&data, &small_config()).unwrap();
        let feats: Vec<_> = data.iter().enumerate().map(|(i, d)| (i as u64 / 10, *d)).collect();
        let report = index.add_batch(&feats);
        assert_eq!(report.batch_sizes, vec![100, 100, 100, 50]);
        let mut ids: Vec<u64> = index.lists.iter().flat_map(|l| l.feature_ids.clone()).collect();
        ids.sort();
        assert_eq!(ids, (0..350).collect::<Vec<_>>());
        assert_eq!(index.n_images(), 35);
        for list in &index.lists {
            for (&fid, &iid) in list.feature_ids.iter().zip(&list.image_ids) {
                assert_eq!(iid, fid / 10);
            }
        }
    }
}
