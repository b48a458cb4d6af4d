//! Checkpoints: a JSON manifest naming each tensor with its shape and byte
//! offset, plus one flat blob of little-endian `f64` values in row-major
//! order.
//!
//! ```text
//! <dir>/manifest.json   {"format": "...", "blob": "params.bin", "config": {...},
//!                        "params": [{"name", "shape", "offset", "trainable"}, ...]}
//! <dir>/params.bin      concatenated tensors, 8 bytes per value
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const FORMAT: &str = "crossing-intent-checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub config: serde_json::Value,
    pub params: Vec<ManifestEntry>,
}

pub fn encode(params: &ModelParams, config: serde_json::Value) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(params.len());
    for e in params.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            offset: blob.len() as u64,
            trainable: e.trainable,
        });
        for v in e.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        blob: BLOB_FILE.to_string(),
        config,
        params: entries,
    };
    (manifest, blob)
}

pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<ModelParams> {
    let ctx = Path::new(BLOB_FILE);
    if manifest.format != FORMAT {
        return Err(Error::parse(ctx, format!("unknown checkpoint format {:?}", manifest.format)));
    }
    let mut params = ModelParams::new();
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        let bytes = blob.get(start..end).ok_or_else(|| {
            Error::parse(ctx, format!("tensor {} overruns the blob ({end} > {})", e.name, blob.len()))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.add(e.name.clone(), Tensor::new(&e.shape, data)?, e.trainable);
    }
    Ok(params)
}

pub fn save(dir: &Path, params: &ModelParams, config: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = encode(params, config);
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(dir, e.to_string()))?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn load(dir: &Path) -> Result<(ModelParams, serde_json::Value)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = crate::io::read_to_string(&mpath)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.to_string()))?;
    let bpath = dir.join(&manifest.blob);
    let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    Ok((decode(&manifest, &blob)?, manifest.config))
}
