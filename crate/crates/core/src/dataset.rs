//! Content-addressed dataset store and deterministic mini-batching.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{keyed_stream, SHUFFLE_DOMAIN};
use crate::tensor::Tensor;
use crate::tensor_file::TensorFile;

pub const SECTIONS: [&str; 4] = ["train_x", "train_y", "test_x", "test_y"];

/// Lower-case hex SHA-256 of a dataset file's bytes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetHash(String);

impl DatasetHash {
    pub fn of(bytes: &[u8]) -> Self {
        DatasetHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(DatasetHash(s.to_string()))
        } else {
            Err(Error::format("dataset hash", format!("`{s}` is not a sha256 hex digest")))
        }
    }
}

impl fmt::Display for DatasetHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A train/test split. Targets are class indices stored as floats, one per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub hash: DatasetHash,
    pub train_x: Tensor,
    pub train_y: Tensor,
    pub test_x: Tensor,
    pub test_y: Tensor,
    /// Size of the encoded file.
    pub byte_len: u64,
}

impl Dataset {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut file = TensorFile::decode(bytes)?;
        let mut take = |name: &'static str| {
            file.take(name)
                .ok_or_else(|| Error::format("dataset", format!("missing section `{name}`")))
        };
        let (train_x, train_y, test_x, test_y) = (take("train_x")?, take("train_y")?, take("test_x")?, take("test_y")?);
        for (x, y, split) in [(&train_x, &train_y, "train"), (&test_x, &test_y, "test")] {
            if x.rank() < 2 || y.rank() != 1 || x.batch() != y.len() {
                return Err(Error::format(
                    "dataset",
                    format!("{split} inputs {:?} do not match targets {:?}", x.shape(), y.shape()),
                ));
            }
            if test_x.shape()[1..] != train_x.shape()[1..] {
                return Err(Error::format("dataset", "train and test samples differ in shape"));
            }
        }
        Ok(Self {
            hash: DatasetHash::of(bytes),
            train_x,
            train_y,
            test_x,
            test_y,
            byte_len: bytes.len() as u64,
        })
    }

    /// Writes the four sections in canonical order.
    pub fn encode(train_x: &Tensor, train_y: &Tensor, test_x: &Tensor, test_y: &Tensor) -> Result<Vec<u8>> {
        let mut f = TensorFile::new();
        for (name, t) in SECTIONS.iter().zip([train_x, train_y, test_x, test_y]) {
            f.push(*name, t.clone());
        }
        f.encode()
    }

    pub fn train_samples(&self) -> usize {
        self.train_x.batch()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.train_x.shape()[1..]
    }

    /// Training batches for one epoch, shuffled by (dataset, seed, epoch).
    pub fn batches(&self, batch_size: usize, epoch: u32, seed: u64) -> Result<Vec<Batch>> {
        let n = self.train_samples();
        if batch_size == 0 || batch_size > n {
            return Err(Error::BatchTooLarge {
                batch: batch_size,
                samples: n,
            });
        }
        let order = epoch_order(&self.hash, seed, epoch, n);
        Ok(order
            .chunks(batch_size)
            .enumerate()
            .map(|(index, idx)| Batch {
                inputs: self.train_x.gather_rows(idx),
                targets: self.train_y.gather_rows(idx),
                index,
            })
            .collect())
    }

    /// Test split in fixed order.
    pub fn test_batches(&self, batch_size: usize) -> Vec<Batch> {
        let n = self.test_x.batch();
        (0..n)
            .step_by(batch_size.max(1))
            .enumerate()
            .map(|(index, start)| {
                let count = batch_size.min(n - start);
                Batch {
                    inputs: self.test_x.rows(start, count),
                    targets: self.test_y.rows(start, count),
                    index,
                }
            })
            .collect()
    }
}

/// Permutation of `0..n` for one epoch.
pub fn epoch_order(hash: &DatasetHash, seed: u64, epoch: u32, n: usize) -> Vec<usize> {
    let mut rng = keyed_stream(SHUFFLE_DOMAIN, seed, &[hash.as_str().as_bytes(), &epoch.to_le_bytes()]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub index: usize,
}

/// Datasets keyed by content hash; identical bytes are stored once.
#[derive(Clone, Debug, Default)]
pub struct DatasetStore {
    datasets: BTreeMap<DatasetHash, Arc<Dataset>>,
}

impl DatasetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest_bytes(&mut self, bytes: &[u8]) -> Result<DatasetHash> {
        let hash = DatasetHash::of(bytes);
        if !self.datasets.contains_key(&hash) {
            let ds = Dataset::decode(bytes)?;
            self.datasets.insert(hash.clone(), Arc::new(ds));
        }
        Ok(hash)
    }

    pub fn ingest_file(&mut self, path: &Path) -> Result<DatasetHash> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path.display()))?;
        self.ingest_bytes(&bytes).map_err(|e| e.in_file(path.display()))
    }

    pub fn get(&self, hash: &DatasetHash) -> Result<Arc<Dataset>> {
        self.datasets
            .get(hash)
            .cloned()
            .ok_or_else(|| Error::UnknownDataset(hash.to_string()))
    }

    pub fn contains(&self, hash: &DatasetHash) -> bool {
        self.datasets.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    /// Bytes held, summed over distinct datasets.
    pub fn footprint_bytes(&self) -> u64 {
        self.datasets.values().map(|d| d.byte_len).sum()
    }

    pub fn hashes(&self) -> impl Iterator<Item = &DatasetHash> {
        self.datasets.keys()
    }

    pub fn batches(&self, hash: &DatasetHash, batch_size: usize, epoch: u32, seed: u64) -> Result<Vec<Batch>> {
        self.get(hash)?.batches(batch_size, epoch, seed)
    }
}
