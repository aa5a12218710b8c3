//! Four-stage ingestion: prefetch paths -> read feature files -> assemble
//! batches of B -> rotate, encode and append. Stages are threads joined by
//! bounded channels; encoding inside a batch runs on the rayon pool.

use std::path::{Path, PathBuf};
use std::thread;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::Serialize;

use super::IvfAdcIndex;
use crate::detector::{read_feature_file, Descriptor, FeatureSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub files: usize,
    pub added: u64,
    pub batch_sizes: Vec<usize>,
}

/// Slots per channel between stages.
const QUEUE_DEPTH: usize = 4;

type Batch = Vec<(u64, Descriptor)>;

/// Appends every feature file in `paths` (in order) to `index`. Feature ids
/// follow file order then point order. On error the index is rolled back.
pub fn ingest_feature_files(index: &mut IvfAdcIndex, paths: &[PathBuf]) -> Result<IngestReport> {
    let batch_b = index.config.batch_b;
    let checkpoint = Checkpoint::take(index);

    let result = thread::scope(|s| {
        let (path_tx, path_rx) = bounded::<Result<PathBuf>>(QUEUE_DEPTH);
        let (set_tx, set_rx) = bounded(QUEUE_DEPTH);
        let (batch_tx, batch_rx) = bounded::<Result<Batch>>(QUEUE_DEPTH);

        s.spawn(move || prefetch(paths, path_tx));
        s.spawn(move || read_files(path_rx, set_tx));
        s.spawn(move || assemble(set_rx, batch_tx, batch_b));

        let mut report = IngestReport {
            files: paths.len(),
            ..IngestReport::default()
        };
        for batch in batch_rx {
            let batch = batch?;
            let encoded = index.encode_batch(&batch);
            index.append(encoded);
            report.added += batch.len() as u64;
            report.batch_sizes.push(batch.len());
        }
        Ok(report)
    });

    if result.is_err() {
        checkpoint.restore(index);
    }
    result
}

fn prefetch(paths: &[PathBuf], tx: Sender<Result<PathBuf>>) {
    for path in paths {
        let item = match path.metadata() {
            Ok(m) if m.is_file() => Ok(path.clone()),
            Ok(_) => Err(Error::Pipeline(format!("{} is not a file", path.display()))),
            Err(e) => Err(Error::io(path, e)),
        };
        let failed = item.is_err();
        if tx.send(item).is_err() || failed {
            return;
        }
    }
}

fn read_files(rx: Receiver<Result<PathBuf>>, tx: Sender<Result<FeatureSet>>) {
    for item in rx {
        let item = item.and_then(|p: PathBuf| read_feature_file(Path::new(&p)));
        let failed = item.is_err();
        if tx.send(item).is_err() || failed {
            return;
        }
    }
}

fn assemble(rx: Receiver<Result<FeatureSet>>, tx: Sender<Result<Batch>>, batch_b: usize) {
    let mut batch: Batch = Vec::with_capacity(batch_b);
    for item in rx {
        let set = match item {
            Ok(set) => set,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        for d in set.descriptors {
            batch.push((set.image_id, d));
            if batch.len() == batch_b {
                let full = std::mem::replace(&mut batch, Vec::with_capacity(batch_b));
                if tx.send(Ok(full)).is_err() {
                    return;
                }
            }
        }
    }
    if !batch.is_empty() {
        let _ = tx.send(Ok(batch));
    }
}

struct Checkpoint {
    lens: Vec<usize>,
    n_images: u64,
    n_features: u64,
}

impl Checkpoint {
    fn take(index: &IvfAdcIndex) -> Self {
        Self {
            lens: index.lists.iter().map(|l| l.len()).collect(),
            n_images: index.n_images,
            n_features: index.n_features,
        }
    }

    fn restore(self, index: &mut IvfAdcIndex) {
        let m = index.config.subq_m;
        for (list, len) in index.lists.iter_mut().zip(self.lens) {
            list.feature_ids.truncate(len);
            list.image_ids.truncate(len);
            list.codes.truncate(len * m);
        }
        index.n_images = self.n_images;
        index.n_features = self.n_features;
    }
}
