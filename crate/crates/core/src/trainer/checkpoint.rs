//! Paused sub-model state.
//!
//! A checkpoint file is a model stream (graph, hyper-parameters and current
//! parameters, with the job's original ids) followed by an optimizer section:
//!
//! ```text
//! "OPTS", u16 version, u32 meta_len, meta JSON
//! UNND container of optimizer buffers named "<param id>#<slot>"
//! ```
//!
//! The meta JSON carries a SHA-256 over the model stream and buffer bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{OptimizerMeta, OptimizerState, ParamStore};
use crate::dataset::DatasetHash;
use crate::error::{Error, Result};
use crate::model::format::{read_framed, write_framed};
use crate::model::{HyperParams, ModelFile, ModelGraph};
use crate::tensor_file::{Reader, TensorFile};

const OPT_MAGIC: &[u8; 4] = b"OPTS";

/// Where the data-order stream resumes. Epoch `e` of a job is always shuffled
/// by (dataset, seed, e), so the next epoch index is the whole cursor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCursor {
    pub dataset: DatasetHash,
    pub seed: u64,
    pub next_epoch: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub job_id: String,
    pub graph: ModelGraph,
    pub hyper: HyperParams,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub completed_epochs: u32,
    pub cursor: DataCursor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    job_id: String,
    completed_epochs: u32,
    cursor: DataCursor,
    optimizer: OptimizerMeta,
    checksum: String,
}

fn checksum(model: &[u8], buffers: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(model);
    h.update(buffers);
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let model = ModelFile::new(self.graph.clone(), self.params.clone())
            .with_hyper(self.hyper.clone())
            .encode()?;
        let mut buffers = TensorFile::new();
        for (id, slots) in self.optimizer.buffers() {
            for (i, t) in slots.iter().enumerate() {
                buffers.push(format!("{id}#{i}"), t.clone());
            }
        }
        let buffers = buffers.encode()?;
        let meta = Meta {
            job_id: self.job_id.clone(),
            completed_epochs: self.completed_epochs,
            cursor: self.cursor.clone(),
            optimizer: self.optimizer.meta().clone(),
            checksum: checksum(&model, &buffers),
        };
        let mut out = model;
        write_framed(&mut out, OPT_MAGIC, &serde_json::to_vec(&meta)?)?;
        out.extend_from_slice(&buffers);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let model_start = r.remaining();
        let model = ModelFile::decode_from(&mut r)?;
        let model_len = model_start - r.remaining();
        let meta: Meta = serde_json::from_slice(read_framed(&mut r, OPT_MAGIC, "checkpoint")?)?;
        let buffer_bytes = &bytes[bytes.len() - r.remaining()..];
        if checksum(&bytes[..model_len], buffer_bytes) != meta.checksum {
            return Err(Error::CheckpointMismatch("checksum does not match contents".into()));
        }
        let hyper = model
            .hyper
            .ok_or_else(|| Error::format("checkpoint", "missing hyper-parameters"))?;
        let mut grouped: BTreeMap<String, Vec<(usize, crate::tensor::Tensor)>> = BTreeMap::new();
        for (name, t) in TensorFile::decode(buffer_bytes)?.sections {
            let (id, slot) = name
                .rsplit_once('#')
                .and_then(|(id, s)| Some((id.to_string(), s.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::format("checkpoint", format!("bad buffer name `{name}`")))?;
            grouped.entry(id).or_default().push((slot, t));
        }
        let mut buffers = BTreeMap::new();
        for (id, mut slots) in grouped {
            slots.sort_by_key(|(i, _)| *i);
            if slots.iter().enumerate().any(|(k, (i, _))| k != *i) {
                return Err(Error::format("checkpoint", format!("buffer slots of `{id}` are not contiguous")));
            }
            let p = model
                .params
                .get(&id)
                .ok_or_else(|| Error::CheckpointMismatch(format!("buffer for unknown parameter `{id}`")))?;
            if let Some((_, t)) = slots.iter().find(|(_, t)| t.shape() != p.shape()) {
                return Err(Error::ParameterShape {
                    id,
                    expected: p.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            buffers.insert(id, slots.into_iter().map(|(_, t)| t).collect());
        }
        if model.params.is_empty() && model.graph.param_count() > 0 {
            return Err(Error::CheckpointMismatch("checkpoint carries no parameters".into()));
        }
        Ok(Self {
            job_id: meta.job_id,
            graph: model.graph,
            hyper,
            params: model.params,
            optimizer: OptimizerState::from_parts(meta.optimizer, buffers)?,
            completed_epochs: meta.completed_epochs,
            cursor: meta.cursor,
        })
    }
}
