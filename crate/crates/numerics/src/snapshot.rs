//! Parameter snapshot files.
//!
//! Layout: the 8-byte magic `RRXSNAP1`, a little-endian `u32` header length,
//! a JSON header `{format_version, dtype, tensors: [{name, shape}], meta}`,
//! then every tensor's values as little-endian floats in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NumericsError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"RRXSNAP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub dtype: Dtype,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub tensors: Vec<Tensor>,
}

impl Snapshot {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }
}

pub fn encode(named: &[(String, &Tensor)], meta: serde_json::Value, dtype: Dtype) -> Result<Vec<u8>> {
    let header = SnapshotHeader {
        format_version: FORMAT_VERSION,
        dtype,
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let values: usize = named.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(12 + header_bytes.len() + values * dtype.width());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in named {
        for &v in t.data() {
            match dtype {
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 12 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(NumericsError::Format("missing snapshot magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| NumericsError::Format("truncated header".into()))?;
    let header: SnapshotHeader = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(NumericsError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let w = header.dtype.width();
    let mut cursor = 12 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = bytes
            .get(cursor..cursor + n * w)
            .ok_or_else(|| NumericsError::Format(format!("truncated data for `{}`", e.name)))?;
        let data = raw
            .chunks_exact(w)
            .map(|c| match header.dtype {
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            })
            .collect();
        tensors.push(Tensor::new(e.shape.clone(), data)?);
        cursor += n * w;
    }
    if cursor != bytes.len() {
        return Err(NumericsError::Format("trailing bytes after tensor data".into()));
    }
    Ok(Snapshot { header, tensors })
}

const MOMENT_M: &str = "opt.m.";
const MOMENT_V: &str = "opt.v.";

/// Serializes a store, optionally with its optimizer moments and step counter.
pub fn encode_store(
    store: &ParameterStore,
    mut meta: serde_json::Value,
    dtype: Dtype,
    with_optimizer: bool,
) -> Result<Vec<u8>> {
    let mut owned: Vec<(String, Tensor)> = Vec::new();
    if with_optimizer {
        for id in store.ids() {
            let shape = store.value(id).shape().to_vec();
            let st = store.state(id);
            owned.push((format!("{MOMENT_M}{}", store.name(id)), Tensor::new(shape.clone(), st.m.clone())?));
            owned.push((format!("{MOMENT_V}{}", store.name(id)), Tensor::new(shape, st.v.clone())?));
        }
        if let serde_json::Value::Object(map) = &mut meta {
            map.insert("optimizer_step".into(), store.step.into());
        }
    }
    let mut named: Vec<(String, &Tensor)> = store
        .ids()
        .map(|id| (store.name(id).to_string(), store.value(id)))
        .collect();
    named.extend(owned.iter().map(|(n, t)| (n.clone(), t)));
    encode(&named, meta, dtype)
}

/// Restores values (and optimizer state when present) into a store with the same layout.
pub fn restore_store(store: &mut ParameterStore, snap: &Snapshot) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let t = snap
            .get(&name)
            .ok_or_else(|| NumericsError::Format(format!("snapshot lacks `{name}`")))?;
        if t.shape() != store.value(id).shape() {
            return Err(NumericsError::Shape {
                op: "restore_store",
                left: store.value(id).shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        store.set_values(id, t.data())?;
        if let (Some(m), Some(v)) = (snap.get(&format!("{MOMENT_M}{name}")), snap.get(&format!("{MOMENT_V}{name}"))) {
            let st = store.state_mut(id);
            st.m = m.data().to_vec();
            st.v = v.data().to_vec();
        }
    }
    if let Some(step) = snap.header.meta.get("optimizer_step").and_then(|v| v.as_u64()) {
        store.step = step;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Snapshot> {
    decode(&fs::read(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
