//! Checkpoint directories: `manifest.json` describing every tensor plus
//! `params.bin`, the tensors concatenated in manifest order as little-endian
//! 64-bit floats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochMetrics, Stage};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::{self, AdapterStackSpec, ModelConfig, ParamStore, Tensor, Vocab};

pub const CHECKPOINT_FORMAT: &str = "latin-polarity-checkpoint/1";
const DTYPE: &str = "f64-le";
const MANIFEST: &str = "manifest.json";
const PAYLOAD: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub config: ModelConfig,
    /// Stages applied so far, oldest first.
    pub history: Vec<Stage>,
    pub epoch: usize,
    pub stack: AdapterStackSpec,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub metrics: Vec<EpochMetrics>,
}

/// A model with its vocabulary and training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub history: Vec<Stage>,
    /// Epoch retained by the last stage (0 for an untrained model).
    pub epoch: usize,
    /// Adapter stack the model was last trained with and predicts with.
    pub stack: AdapterStackSpec,
    pub metrics: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn fresh(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match vocabulary of {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let params = ParamStore::init(&config)?;
        Ok(Checkpoint {
            config,
            vocab,
            params,
            history: Vec::new(),
            epoch: 0,
            stack: AdapterStackSpec::none(),
            metrics: Vec::new(),
        })
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            dtype: DTYPE.to_string(),
            config: self.config.clone(),
            history: self.history.clone(),
            epoch: self.epoch,
            stack: self.stack.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape.clone(),
                })
                .collect(),
            metrics: self.metrics.clone(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text, self.config.max_len)
    }

    pub fn predict(&self, text: &str) -> Result<Label> {
        Ok(model::classify(&self.params, &self.config, &self.stack, &self.encode(text))?.label())
    }

    pub fn predict_all<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Label>> {
        texts.iter().map(|t| self.predict(t.as_ref())).collect()
    }
}

fn payload(params: &ParamStore) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.num_params() * 8);
    for (_, t) in params.iter() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = serde_json::to_string_pretty(&checkpoint.manifest())?;
    manifest.push('\n');
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PAYLOAD);
    fs::write(&ppath, payload(&checkpoint.params)).map_err(|e| Error::io(&ppath, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST);
    let raw = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&raw)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?} / dtype {:?}",
            manifest.format, manifest.dtype
        )));
    }
    let ppath = dir.join(PAYLOAD);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "params.bin holds {} bytes but the manifest describes {expected}",
            bytes.len()
        )));
    }

    let mut tensors = BTreeMap::new();
    let mut offset = 0;
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        if tensors
            .insert(
                entry.name.clone(),
                Tensor {
                    shape: entry.shape.clone(),
                    data,
                },
            )
            .is_some()
        {
            return Err(Error::Checkpoint(format!(
                "duplicate tensor {}",
                entry.name
            )));
        }
    }
    let params = ParamStore::from_tensors(&manifest.config, tensors)?;
    let vocab = Vocab::from_tokens(manifest.vocab)
        .ok_or_else(|| Error::Checkpoint("vocabulary is missing its special tokens".into()))?;
    if vocab.len() != manifest.config.vocab_size {
        return Err(Error::Checkpoint(
            "vocabulary size does not match the model config".into(),
        ));
    }
    Ok(Checkpoint {
        config: manifest.config,
        vocab,
        params,
        history: manifest.history,
        epoch: manifest.epoch,
        stack: manifest.stack,
        metrics: manifest.metrics,
    })
}
