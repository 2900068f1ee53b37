//! `UNND` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     "UNND"            4 bytes
//! version   u16               currently 1
//! sections  u16
//! per section:
//!   name_len u8, name bytes (UTF-8)
//!   rank     u8
//!   dims     rank x u32
//!   payload  product(dims) x f32 (IEEE-754), row-major
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UNND";
pub const VERSION: u16 = 1;

/// Named tensors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub sections: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.sections.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        let idx = self.sections.iter().position(|(n, _)| n == name)?;
        Some(self.sections.remove(idx).1)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<()> {
        let count = u16::try_from(self.sections.len())
            .map_err(|_| Error::format("tensor file", "more than 65535 sections"))?;
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.sections {
            let name_len = u8::try_from(name.len())
                .map_err(|_| Error::format("tensor file", format!("section name `{name}` exceeds 255 bytes")))?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::format("tensor file", format!("section `{name}` has rank > 255")))?;
            out.push(name_len);
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::format("tensor file", format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(())
    }

    /// Decodes a whole buffer; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let file = Self::decode_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::format("tensor file", format!("{} trailing bytes", r.remaining())));
        }
        Ok(file)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(Error::format("tensor file", "bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format("tensor file", format!("unsupported version {version}")));
        }
        let count = r.u16()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u8()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("tensor file", "section name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    Error::format("tensor file", format!("section `{name}` dims {dims:?} exceed the payload"))
                })?;
            let payload = r.take(len * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(dims, data).map_err(|e| Error::format("tensor file", format!("`{name}`: {e}")))?;
            sections.push((name, tensor));
        }
        Ok(Self { sections })
    }
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format("stream", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
