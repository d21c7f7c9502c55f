//! Self-describing checkpoint container.
//!
//! Layout: magic `DLCK`, a format-version integer, a JSON header (architecture
//! descriptor, training config, optional optimizer metadata, tensor index)
//! and the raw tensor data as little-endian f64 in index order. The SHA-256
//! digest of the serialized bytes identifies the model; bitstreams embed it
//! and decoders refuse checkpoints whose digest differs.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{ArchitectureDescriptor, ModelParams};
use crate::error::{Error, Result};
use crate::training::RdoConfig;

pub const MAGIC: &[u8; 4] = b"DLCK";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer state carried across checkpoint/resume boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// First-moment estimate, parameter layout.
    pub m: ModelParams,
    /// Second-moment estimate, parameter layout.
    pub v: ModelParams,
    /// Completed optimization steps.
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: RdoConfig,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    descriptor: ArchitectureDescriptor,
    config: RdoConfig,
    tensor_sizes: Vec<usize>,
    has_train_state: bool,
    step: u64,
}

fn collect_sizes(params: &ModelParams) -> Vec<usize> {
    let mut sizes = Vec::new();
    params.visit(&mut |s| sizes.push(s.len()));
    sizes
}

fn write_tensors(buf: &mut Vec<u8>, params: &ModelParams) {
    params.visit(&mut |s| {
        for v in s {
            buf.write_f64::<LittleEndian>(*v).expect("vec write");
        }
    });
}

fn read_tensors(cur: &mut Cursor<&[u8]>, template: &mut ModelParams) -> Result<()> {
    let mut failed = false;
    template.visit_mut(&mut |s| {
        if failed {
            return;
        }
        for v in s.iter_mut() {
            match cur.read_f64::<LittleEndian>() {
                Ok(x) => *v = x,
                Err(_) => {
                    failed = true;
                    return;
                }
            }
        }
    });
    if failed {
        return Err(Error::Checkpoint("truncated tensor data".into()));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(params: ModelParams, config: RdoConfig) -> Self {
        Self { params, config, train_state: None }
    }

    /// Serializes to the container byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            descriptor: self.params.descriptor.clone(),
            config: self.config.clone(),
            tensor_sizes: collect_sizes(&self.params),
            has_train_state: self.train_state.is_some(),
            step: self.train_state.as_ref().map_or(0, |t| t.step),
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        out.write_u32::<LittleEndian>(header_json.len() as u32)?;
        out.extend_from_slice(&header_json);
        write_tensors(&mut out, &self.params);
        if let Some(state) = &self.train_state {
            write_tensors(&mut out, &state.m);
            write_tensors(&mut out, &state.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        let version = cur.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let header_len = cur.read_u32::<LittleEndian>()? as usize;
        let start = cur.position() as usize;
        if bytes.len() < start + header_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[start..start + header_len])?;
        cur.set_position((start + header_len) as u64);

        let mut params = ModelParams::init(header.descriptor.clone(), 0);
        if collect_sizes(&params) != header.tensor_sizes {
            return Err(Error::Checkpoint(
                "tensor index does not match the architecture descriptor".into(),
            ));
        }
        read_tensors(&mut cur, &mut params)?;
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }

        let train_state = if header.has_train_state {
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            read_tensors(&mut cur, &mut m)?;
            read_tensors(&mut cur, &mut v)?;
            Some(TrainState { m, v, step: header.step })
        } else {
            None
        };

        Ok(Self { params, config: header.config, train_state })
    }

    pub fn save(&self, path: &Path) -> Result<[u8; 32]> {
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(digest_bytes(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, [u8; 32])> {
        let bytes = std::fs::read(path)?;
        let ckpt = Self::from_bytes(&bytes)?;
        Ok((ckpt, digest_bytes(&bytes)))
    }

    /// Digest identifying this exact checkpoint.
    pub fn digest(&self) -> Result<[u8; 32]> {
        Ok(digest_bytes(&self.to_bytes()?))
    }
}

pub fn digest_bytes(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&out);
    digest
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
