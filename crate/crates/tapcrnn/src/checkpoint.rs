//! Checkpoint files: a magic line, a pretty-printed JSON header, a
//! separator line, then every parameter block as little-endian `f64`.
//!
//! ```text
//! tapcrnn-checkpoint 1
//! { "version": 1, "config": {..}, "stft": {..}, "norm": {..},
//!   "record": {..}, "dataset_manifest": "..", "sample_rate": 16000,
//!   "blocks": [ { "name": "conv0.weight", "shape": [1, 3, 1, 4], "offset": 0 }, .. ] }
//! --- blocks ---
//! <raw block data, offsets in bytes from here>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tapcrnn_core::autodiff::Array;
use tapcrnn_core::dsp::{NormStats, StftConfig};
use tapcrnn_core::models::{Checkpoint, ModelConfig, ModelParams, TrainingRecord, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const MAGIC: &str = "tapcrnn-checkpoint";
const SEPARATOR: &[u8] = b"\n--- blocks ---\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

/// Where the parameters came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Dataset manifest the parameters were trained on.
    pub dataset_manifest: Option<PathBuf>,
    /// Sample rate of the training audio; inputs at another rate are refused.
    pub sample_rate: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    pub stft: StftConfig,
    pub norm: NormStats,
    pub record: TrainingRecord,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub blocks: Vec<BlockEntry>,
}

pub fn encode(ck: &Checkpoint, provenance: &Provenance) -> Vec<u8> {
    let mut blocks = Vec::with_capacity(ck.params.names().len());
    let mut data = Vec::new();
    for (name, a) in ck.params.iter() {
        blocks.push(BlockEntry { name: name.to_string(), shape: a.shape().to_vec(), offset: data.len() });
        for v in a.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: ck.version,
        config: ck.config.clone(),
        stft: ck.stft,
        norm: ck.norm.clone(),
        record: ck.record.clone(),
        provenance: provenance.clone(),
        blocks,
    };
    let mut out = format!("{MAGIC} {}\n", ck.version).into_bytes();
    out.extend(serde_json::to_vec_pretty(&header).expect("header types serialize"));
    out.extend_from_slice(SEPARATOR);
    out.extend(data);
    out
}

pub fn save(ck: &Checkpoint, provenance: &Provenance, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ck, provenance))
}

/// Parse a checkpoint. Nothing is returned unless every block is present,
/// finite and shaped as the header's config requires.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Checkpoint, Header)> {
    let bad = |detail: String| Error::format(path, detail);
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("not a checkpoint".into()))?;
    let first = std::str::from_utf8(&bytes[..newline]).map_err(|_| bad("not a checkpoint".into()))?;
    let version = match first.split_once(' ') {
        Some((MAGIC, v)) => v.parse::<u32>().map_err(|_| bad(format!("bad version `{v}`")))?,
        _ => return Err(bad("not a checkpoint".into())),
    };
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")));
    }
    let rest = &bytes[newline + 1..];
    let sep = rest
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| bad("corrupt checkpoint: missing block section".into()))?;
    let header: Header =
        serde_json::from_slice(&rest[..sep]).map_err(|e| bad(format!("corrupt checkpoint header: {e}")))?;
    if header.version != version {
        return Err(bad(format!("header version {} disagrees with file version {version}", header.version)));
    }
    let data = &rest[sep + SEPARATOR.len()..];
    let mut named = Vec::with_capacity(header.blocks.len());
    let mut expected_offset = 0;
    for b in &header.blocks {
        let corrupt = |detail: &str| bad(format!("corrupt block `{}`: {detail}", b.name));
        let n: usize = b.shape.iter().product();
        if b.offset != expected_offset {
            return Err(corrupt("offset out of sequence"));
        }
        let end = b.offset + 8 * n;
        if end > data.len() {
            return Err(corrupt("data truncated"));
        }
        let values = data[b.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let array = Array::new(b.shape.clone(), values).map_err(|e| corrupt(&e.to_string()))?;
        named.push((b.name.clone(), array));
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(bad(format!("corrupt checkpoint: {} trailing bytes", data.len() - expected_offset)));
    }
    let params = ModelParams::from_blocks(&header.config, named)?;
    let ck = Checkpoint::new(header.config.clone(), header.stft, header.norm.clone(), params, header.record.clone())?;
    Ok((ck, header))
}

pub fn load(path: &Path) -> Result<(Checkpoint, Header)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
