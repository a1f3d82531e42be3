//! Dataset manifests (which mixtures exist) and run manifests (how an
//! artifact was produced).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_text, write_atomic};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One mixture: `clean + g·noise` at `snr_db`, with the noise offset drawn
/// from `mix_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub noise_type: String,
    pub snr_db: f64,
    pub split: Split,
    pub mix_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&read_text(path)?)
            .map_err(|e| Error::format(path, format!("bad dataset manifest: {e}")))?;
        if m.version != DATASET_VERSION {
            return Err(Error::format(path, format!("dataset manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_json(self))
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

/// Noise type of a noise file: its stem without a trailing `_<digits>`.
pub fn noise_type_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.rsplit_once('_') {
        Some((head, tail)) if !head.is_empty() && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => {
            head.to_string()
        }
        _ => stem,
    }
}

/// Comma-separated dB values, e.g. `-5,0,5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SnrList(pub Vec<f64>);

impl FromStr for SnrList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|tok| {
                let t = tok.trim();
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Usage(format!("invalid SNR `{t}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SnrList(values))
    }
}

impl TryFrom<String> for SnrList {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SnrList> for String {
    fn from(l: SnrList) -> String {
        l.to_string()
    }
}

impl fmt::Display for SnrList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// How an artifact was produced. Replaying `command` with `config` from
/// `cwd` reproduces every listed artifact bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub cwd: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_s: f64,
}

impl RunManifest {
    /// Sibling path for an artifact: `<artifact>.run.json`.
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".run.json");
        PathBuf::from(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, format!("bad run manifest: {e}")))
    }

    /// Write one copy next to every artifact.
    pub fn write_siblings(&self) -> Result<()> {
        let bytes = to_json(self);
        for a in &self.artifacts {
            let abs = if a.is_absolute() { a.clone() } else { self.cwd.join(a) };
            write_atomic(&Self::path_for(&abs), &bytes)?;
        }
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("manifest types serialize");
    v.push(b'\n');
    v
}
