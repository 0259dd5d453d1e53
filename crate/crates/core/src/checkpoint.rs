//! Single-file checkpoint: magic, version, a JSON header with the tensor
//! table, then the tensors as concatenated little-endian `f32`.
//!
//! ```text
//! b"CRWDCKPT" | u32 version | u32 header_len | header JSON | payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Arch, ModelMeta, ModelState};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CRWDCKPT";
pub const VERSION: u32 = 1;
/// Refuse headers larger than this; real ones are a few kilobytes.
const MAX_HEADER: usize = 1 << 24;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// In elements from the start of the payload.
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    kind: String,
    config: AdamConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch_id: Arch,
    meta: ModelMeta,
    step: u64,
    config_hash: String,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState<f32>,
    /// Training step at which the checkpoint was taken.
    pub step: u64,
    pub config_hash: String,
    pub optimizer: Option<Adam<f32>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.state.validate()?;
        let mut named: Vec<(String, &Tensor<f32>)> =
            self.state.params.iter().map(|(k, t)| (format!("{PARAM}{k}"), t)).collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, map) in [(ADAM_M, &opt.m), (ADAM_V, &opt.v)] {
                for (k, t) in map {
                    if !self.state.params.contains_key(k) {
                        return Err(bad(format!("optimizer moment for unknown parameter {k}")));
                    }
                    named.push((format!("{prefix}{k}"), t));
                }
            }
        }
        let mut offset = 0;
        let tensors = named
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len(),
                };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            arch_id: self.state.arch,
            meta: self.state.meta(),
            step: self.step,
            config_hash: self.config_hash.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                kind: "adam".into(),
                config: o.config,
                step: o.step,
            }),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        if hlen > MAX_HEADER || 16 + hlen > bytes.len() {
            return Err(bad(format!("header length {hlen} exceeds file")));
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;
        if header.meta != header.arch_id.meta() {
            return Err(bad("meta disagrees with architecture"));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let total = payload.len() / 4;
        let mut expected_offset = 0usize;
        let (mut params, mut m, mut v) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        for e in header.tensors {
            let n = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad(format!("{}: shape overflows", e.name)))?;
            if n != e.len || e.offset != expected_offset || e.len > total - e.offset.min(total) {
                return Err(bad(format!("{}: inconsistent tensor table entry", e.name)));
            }
            expected_offset += e.len;
            let data: Vec<f32> = payload[e.offset * 4..(e.offset + e.len) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(&e.shape, data)?;
            let (map, key) = if let Some(k) = e.name.strip_prefix(PARAM) {
                (&mut params, k)
            } else if let Some(k) = e.name.strip_prefix(ADAM_M) {
                (&mut m, k)
            } else if let Some(k) = e.name.strip_prefix(ADAM_V) {
                (&mut v, k)
            } else {
                return Err(bad(format!("unknown tensor kind {:?}", e.name)));
            };
            if map.insert(key.to_string(), t).is_some() {
                return Err(bad(format!("duplicate tensor {:?}", e.name)));
            }
        }
        if expected_offset != total {
            return Err(bad(format!("payload holds {total} values, table covers {expected_offset}")));
        }
        let state = ModelState {
            arch: header.arch_id,
            params,
        };
        state.validate().map_err(|e| bad(e.to_string()))?;
        let optimizer = match header.optimizer {
            None => {
                if !m.is_empty() || !v.is_empty() {
                    return Err(bad("optimizer moments without optimizer header"));
                }
                None
            }
            Some(o) => {
                if o.kind != "adam" {
                    return Err(bad(format!("unknown optimizer {:?}", o.kind)));
                }
                for (k, t) in m.iter().chain(&v) {
                    match state.params.get(k) {
                        Some(p) if p.shape() == t.shape() => {}
                        _ => return Err(bad(format!("optimizer moment {k} does not match a parameter"))),
                    }
                }
                Some(Adam {
                    config: o.config,
                    step: o.step,
                    m,
                    v,
                })
            }
        };
        Ok(Checkpoint {
            state,
            step: header.step,
            config_hash: header.config_hash,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
