//! Binary checkpoint container.
//!
//! Layout: the magic bytes `TGFDCKPT`, a little-endian `u32` header length,
//! a JSON header, then one section per tensor in header order. A section is
//! a `u32` name length, the UTF-8 name, a `u64` value count and that many
//! little-endian IEEE-754 `f64` values, row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::diff::Matrix;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams, ParamId};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TGFDCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    /// Epoch whose parameters were kept; 0 for the initialization.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    dims: ModelDims,
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    sections: Vec<SectionInfo>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            dims: self.params.dims(),
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            sections: self
                .params
                .named()
                .map(|(id, t)| SectionInfo {
                    name: id.name().to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 16 + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (id, t) in self.params.named() {
            let name = id.name().as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.sections.len() != ParamId::ALL.len() {
            return Err(Error::Format(format!(
                "expected {} tensor sections, header lists {}",
                ParamId::ALL.len(),
                header.sections.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.sections.len());
        for (info, id) in header.sections.iter().zip(ParamId::ALL) {
            if info.name != id.name() {
                return Err(Error::Format(format!("expected section {}, found {}", id.name(), info.name)));
            }
            if (info.rows, info.cols) != id.shape(&header.dims) {
                return Err(Error::Format(format!(
                    "{} declared as {}x{}, dims require {:?}",
                    info.name,
                    info.rows,
                    info.cols,
                    id.shape(&header.dims)
                )));
            }
            let name_len = r.u32()? as usize;
            if r.take(name_len)? != info.name.as_bytes() {
                return Err(Error::Format(format!("section name mismatch for {}", info.name)));
            }
            let count = r.u64()?;
            if count != (info.rows * info.cols) as u64 {
                return Err(Error::Format(format!("{} holds {count} values", info.name)));
            }
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
            tensors.push(Matrix::from_vec(info.rows, info.cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last section".into()));
        }
        let params = ModelParams::from_tensors(header.dims, tensors)
            .map_err(|e| Error::Format(format!("checkpoint tensors: {e}")))?;
        Ok(Checkpoint {
            params,
            config: header.config,
            epoch: header.epoch,
            history: header.history,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
