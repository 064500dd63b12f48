//! Checkpoints: a JSON manifest plus a raw little-endian f64 parameter blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PairClassifier};
use crate::train::{EpochRecord, OptimConfig};

pub const FORMAT: &str = "fuzzy-attn-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of a serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryDigest {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_pr_auc: Option<f64>,
    pub best_val_accuracy: f64,
    /// SHA-256 of the JSON-lines history.
    pub sha256: String,
}

impl HistoryDigest {
    pub fn new(history: &[EpochRecord], best_epoch: usize) -> Result<Self> {
        let best = history
            .get(best_epoch)
            .ok_or_else(|| Error::Contract(format!("best epoch {best_epoch} not in history")))?;
        Ok(Self {
            epochs: history.len(),
            best_epoch,
            best_val_pr_auc: best.val.pr_auc,
            best_val_accuracy: best.val.accuracy,
            sha256: sha256_hex(history_jsonl(history)?.as_bytes()),
        })
    }
}

/// One JSON record per line.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: Option<OptimConfig>,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
    pub decay_exempt: Vec<String>,
    pub n_values: usize,
    pub blob_sha256: String,
    pub history: Option<HistoryDigest>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(
        model: &PairClassifier,
        seed: u64,
        optim: Option<&OptimConfig>,
        history: Option<HistoryDigest>,
    ) -> Result<Self> {
        let mut params = Vec::with_capacity(model.store.len());
        let mut offset = 0;
        for (_, p) in model.store.iter() {
            params.push(ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                decay: p.decay,
                offset,
            });
            offset += p.value.numel();
        }
        let values = model.store.flatten();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            config_hash: config_hash(&model.config)?,
            model: model.config.clone(),
            optim: optim.cloned(),
            decay_exempt: params.iter().filter(|p| !p.decay).map(|p| p.name.clone()).collect(),
            params,
            n_values: values.len(),
            blob_sha256: sha256_hex(&blob_bytes(&values)),
            history,
        };
        Ok(Self { manifest, values })
    }

    pub fn blob(&self) -> Vec<u8> {
        blob_bytes(&self.values)
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.manifest)? + "\n")
    }

    /// Writes `manifest.json` and `params.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(BLOB_FILE), self.blob())?;
        fs::write(dir.join(MANIFEST_FILE), self.manifest_json()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let blob = fs::read(dir.join(BLOB_FILE))?;
        Self::from_parts(manifest, &blob)
    }

    /// Validates the manifest against the blob.
    pub fn from_parts(manifest: Manifest, blob: &[u8]) -> Result<Self> {
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        if config_hash(&manifest.model)? != manifest.config_hash {
            return Err(Error::Format("checkpoint config hash mismatch".into()));
        }
        let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if expected != manifest.n_values || blob.len() != expected * 8 {
            return Err(Error::Format(format!(
                "parameter blob holds {} bytes, inventory needs {}",
                blob.len(),
                expected * 8
            )));
        }
        if sha256_hex(blob) != manifest.blob_sha256 {
            return Err(Error::Format("parameter blob checksum mismatch".into()));
        }
        let values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { manifest, values })
    }

    /// Rebuilds the model and loads the stored values.
    pub fn to_model(&self) -> Result<PairClassifier> {
        let mut model = PairClassifier::new(self.manifest.model.clone(), self.manifest.seed)?;
        let inventory: Vec<(&str, &[usize], bool)> = model
            .store
            .iter()
            .map(|(_, p)| (p.name.as_str(), p.value.shape(), p.decay))
            .collect();
        let stored: Vec<(&str, &[usize], bool)> = self
            .manifest
            .params
            .iter()
            .map(|p| (p.name.as_str(), p.shape.as_slice(), p.decay))
            .collect();
        if inventory != stored {
            return Err(Error::Format(
                "parameter inventory does not match the configured architecture".into(),
            ));
        }
        model.store.load_flat(&self.values)?;
        Ok(model)
    }
}

fn blob_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
