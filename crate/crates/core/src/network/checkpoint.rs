//! Binary checkpoint container: magic, little-endian header length, JSON
//! header, then every tensor as raw little-endian `f64` in visit order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::DdsNetwork;
use super::params::ParamGroup;
use super::profile::NetworkConfig;
use crate::error::{DdsError, Result};

const MAGIC: &[u8; 8] = b"DDSCKPT\0";
const FORMAT: &str = "dds-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: NetworkConfig,
    iteration: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: DdsNetwork,
    /// Training iterations completed when the checkpoint was written.
    pub iteration: u64,
}

impl Checkpoint {
    pub fn new(network: DdsNetwork, iteration: u64) -> Self {
        Self { network, iteration }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        self.network.params.visit(&mut |name, group, values| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                group,
                len: values.len(),
            });
            payload.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        });
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.network.config.clone(),
            iteration: self.iteration,
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| DdsError::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(DdsError::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let payload = &body[header_len..];
        let expected: usize = header.tensors.iter().map(|t| t.len).sum();
        if payload.len() != expected * 8 {
            return Err(DdsError::Checkpoint(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                expected * 8
            )));
        }

        let mut network = DdsNetwork::init(header.config.clone(), 0)?;
        let mut entries = header.tensors.iter();
        let mut offset = 0;
        let mut error: Option<DdsError> = None;
        network.params.visit_mut(&mut |name, group, values| {
            if error.is_some() {
                return;
            }
            match entries.next() {
                Some(e) if e.name == name && e.group == group && e.len == values.len() => {
                    for (v, chunk) in values.iter_mut().zip(payload[offset..offset + 8 * e.len].chunks_exact(8)) {
                        *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                    }
                    offset += 8 * e.len;
                }
                Some(e) => {
                    error = Some(DdsError::Checkpoint(format!(
                        "tensor {} ({}) does not match layer {name} ({})",
                        e.name,
                        e.len,
                        values.len()
                    )))
                }
                None => error = Some(DdsError::Checkpoint(format!("missing tensor {name}"))),
            }
        });
        if let Some(e) = error {
            return Err(e);
        }
        if entries.next().is_some() {
            return Err(bad("checkpoint has extra tensors"));
        }
        Ok(Self {
            network,
            iteration: header.iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| DdsError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| DdsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DdsError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
