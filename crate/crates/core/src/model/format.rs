//! `UNNM` model stream.
//!
//! ```text
//! magic        "UNNM"
//! version      u16 LE, currently 1
//! header_len   u32 LE
//! header       UTF-8 JSON: {"graph": .., "hyper": .. | null, "param_count": n}
//! params       UNND tensor container, one section per parameter, sorted by id
//! ```
//!
//! A model with no trained parameters is written with an empty container.

use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelGraph};
use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor_file::{Reader, TensorFile};

pub const MAGIC: &[u8; 4] = b"UNNM";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub graph: ModelGraph,
    pub hyper: Option<HyperParams>,
    pub param_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub graph: ModelGraph,
    pub hyper: Option<HyperParams>,
    pub params: ParamStore,
}

impl ModelFile {
    pub fn new(graph: ModelGraph, params: ParamStore) -> Self {
        Self {
            graph,
            hyper: None,
            params,
        }
    }

    pub fn with_hyper(mut self, hyper: HyperParams) -> Self {
        self.hyper = Some(hyper);
        self
    }

    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            graph: self.graph.clone(),
            hyper: self.hyper.clone(),
            param_count: self.graph.param_count(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        write_framed(&mut out, MAGIC, &serde_json::to_vec(&self.header())?)?;
        params_container(&self.params).encode_into(&mut out)?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let file = Self::decode_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::format("model stream", format!("{} trailing bytes", r.remaining())));
        }
        Ok(file)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let header: ModelHeader = serde_json::from_slice(read_framed(r, MAGIC, "model stream")?)?;
        let params = TensorFile::decode_from(r)?.sections.into_iter().collect::<ParamStore>();
        let file = ModelFile {
            graph: header.graph,
            hyper: header.hyper,
            params,
        };
        file.validate()?;
        let count = file.graph.param_count();
        if header.param_count != count {
            return Err(Error::format(
                "model stream",
                format!("header declares {} parameters, graph has {count}", header.param_count),
            ));
        }
        Ok(file)
    }

    /// Accepts either a binary model stream or a bare JSON graph document.
    pub fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            return Self::decode(bytes);
        }
        let graph: ModelGraph = serde_json::from_slice(bytes)?;
        let file = ModelFile::new(graph, ParamStore::new());
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        self.graph.check()?;
        if let Some(h) = &self.hyper {
            h.validate()?;
        }
        if !self.params.is_empty() {
            self.graph.check_params(&self.params)?;
        }
        Ok(())
    }
}

/// Header-only read, without touching the parameter payload.
pub fn read_header(bytes: &[u8]) -> Result<ModelHeader> {
    let mut r = Reader::new(bytes);
    Ok(serde_json::from_slice(read_framed(&mut r, MAGIC, "model stream")?)?)
}

pub(crate) fn params_container(params: &ParamStore) -> TensorFile {
    let mut f = TensorFile::new();
    for (id, t) in params.iter() {
        f.push(id.clone(), t.clone());
    }
    f
}

/// magic, version, u32 length, payload.
pub(crate) fn write_framed(out: &mut Vec<u8>, magic: &[u8; 4], payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| Error::format("stream", "header exceeds 4 GiB"))?;
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    Ok(())
}

pub(crate) fn read_framed<'a>(r: &mut Reader<'a>, magic: &[u8; 4], what: &'static str) -> Result<&'a [u8]> {
    if r.take(4)? != magic {
        return Err(Error::format(what, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    r.take(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use crate::model::OptimizerChoice;

    #[test]
    fn lenet_header_reports_param_count() {
        let g = demo::lenet_class();
        let bytes = ModelFile::new(g.clone(), g.init_params(1)).encode().unwrap();
        assert_eq!(read_header(&bytes).unwrap().param_count, 44470);
    }

    #[test]
    fn deterministic_and_roundtrips() {
        let g = demo::mlp2();
        let file = ModelFile::new(g.clone(), g.init_params(42))
            .with_hyper(HyperParams::new(3, 8, 0.05, OptimizerChoice::Adam).with_seed(42));
        let a = file.encode().unwrap();
        let b = file.clone().encode().unwrap();
        assert_eq!(a, b);
        let back = ModelFile::decode(&a).unwrap();
        assert_eq!(back, file);
        assert!(back.params.bits_eq(&file.params));
    }

    #[test]
    fn graph_only_json_is_accepted() {
        let g = demo::mlp3();
        let file = ModelFile::read(serde_json::to_string(&g).unwrap().as_bytes()).unwrap();
        assert_eq!(file.graph, g);
        assert!(file.params.is_empty());
    }

    #[test]
    fn rejects_wrong_params_and_bad_bytes() {
        let g = demo::mlp2();
        let other = demo::mlp3();
        assert!(ModelFile::new(g.clone(), other.init_params(0)).encode().is_err());
        let mut bytes = ModelFile::new(g.clone(), g.init_params(0)).encode().unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(ModelFile::decode(&bytes).is_err());
        assert!(ModelFile::read(b"not a model").is_err());
    }
}
