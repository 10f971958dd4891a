use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub adapter_dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            max_len: 64,
            adapter_dim: 8,
            vocab_size: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("adapter_dim", self.adapter_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.adapter_dim >= self.d_model {
            return Err(Error::Config(
                "model.adapter_dim must be smaller than d_model".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKey {
    Language,
    Task,
}

impl AdapterKey {
    pub const ALL: [AdapterKey; 2] = [AdapterKey::Language, AdapterKey::Task];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKey::Language => "language",
            AdapterKey::Task => "task",
        }
    }
}

impl fmt::Display for AdapterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "language" => Ok(AdapterKey::Language),
            "task" => Ok(AdapterKey::Task),
            other => Err(Error::invalid(format!("unknown adapter {other:?}"))),
        }
    }
}

/// Adapters applied, in order, at every insertion point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdapterStackSpec(pub Vec<AdapterKey>);

impl AdapterStackSpec {
    pub fn none() -> Self {
        AdapterStackSpec(Vec::new())
    }

    pub fn of(keys: &[AdapterKey]) -> Self {
        AdapterStackSpec(keys.to_vec())
    }

    pub fn keys(&self) -> &[AdapterKey] {
        &self.0
    }
}

/// Insertion point within an encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Attention,
    Ffn,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::Attention => "attention",
            Site::Ffn => "ffn",
        }
    }
}

/// Canonical parameter names.
pub mod names {
    use super::{AdapterKey, Site};

    pub const TOKEN_EMBEDDING: &str = "embeddings.token";
    pub const POSITION_EMBEDDING: &str = "embeddings.position";
    pub const MLM_WEIGHT: &str = "mlm_head.weight";
    pub const MLM_BIAS: &str = "mlm_head.bias";
    pub const CLS_WEIGHT: &str = "cls_head.weight";
    pub const CLS_BIAS: &str = "cls_head.bias";

    pub fn layer(l: usize, part: &str) -> String {
        format!("encoder.{l}.{part}")
    }

    pub fn adapter(key: AdapterKey, l: usize, site: Site, part: &str) -> String {
        format!("adapter.{}.{l}.{}.{part}", key.as_str(), site.as_str())
    }

    pub fn adapter_prefix(key: AdapterKey) -> String {
        format!("adapter.{}.", key.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot,
    Uniform,
    Zeros,
    Ones,
}

/// Half-width of the uniform initializer for adapter down-projections.
pub const INIT_RANGE: f64 = 0.05;

/// Glorot half-width `sqrt(6 / (fan_in + fan_out))` for a 2-d weight.
pub fn glorot_range(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

/// All named tensors of the model plus the set currently allowed to train.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    pub trainable: BTreeSet<String>,
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let mut out: Vec<(String, Vec<usize>, Init)> = vec![
        (
            names::TOKEN_EMBEDDING.into(),
            vec![config.vocab_size, d],
            Init::Glorot,
        ),
        (
            names::POSITION_EMBEDDING.into(),
            vec![config.max_len, d],
            Init::Glorot,
        ),
    ];
    for l in 0..config.layers {
        for proj in ["query", "key", "value", "output"] {
            out.push((
                names::layer(l, &format!("attention.{proj}.weight")),
                vec![d, d],
                Init::Glorot,
            ));
            out.push((
                names::layer(l, &format!("attention.{proj}.bias")),
                vec![d],
                Init::Zeros,
            ));
        }
        out.push((
            names::layer(l, "ffn.up.weight"),
            vec![d, config.d_ff],
            Init::Glorot,
        ));
        out.push((
            names::layer(l, "ffn.up.bias"),
            vec![config.d_ff],
            Init::Zeros,
        ));
        out.push((
            names::layer(l, "ffn.down.weight"),
            vec![config.d_ff, d],
            Init::Glorot,
        ));
        out.push((names::layer(l, "ffn.down.bias"), vec![d], Init::Zeros));
        for norm in ["attention_norm", "ffn_norm"] {
            out.push((
                names::layer(l, &format!("{norm}.gamma")),
                vec![d],
                Init::Ones,
            ));
            out.push((
                names::layer(l, &format!("{norm}.beta")),
                vec![d],
                Init::Zeros,
            ));
        }
        for key in AdapterKey::ALL {
            for site in [Site::Attention, Site::Ffn] {
                let a = config.adapter_dim;
                out.push((
                    names::adapter(key, l, site, "down.weight"),
                    vec![d, a],
                    Init::Uniform,
                ));
                out.push((
                    names::adapter(key, l, site, "down.bias"),
                    vec![a],
                    Init::Zeros,
                ));
                out.push((
                    names::adapter(key, l, site, "up.weight"),
                    vec![a, d],
                    Init::Zeros,
                ));
                out.push((
                    names::adapter(key, l, site, "up.bias"),
                    vec![d],
                    Init::Zeros,
                ));
            }
        }
    }
    out.push((
        names::MLM_WEIGHT.into(),
        vec![d, config.vocab_size],
        Init::Glorot,
    ));
    out.push((names::MLM_BIAS.into(), vec![config.vocab_size], Init::Zeros));
    out.push((names::CLS_WEIGHT.into(), vec![4, d], Init::Glorot));
    out.push((names::CLS_BIAS.into(), vec![4], Init::Zeros));
    out
}

impl ParamStore {
    /// Seeded initialization; every tensor draws from its own named stream.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::filled(&shape, 1.0),
                    Init::Glorot | Init::Uniform => {
                        let range = match init {
                            Init::Glorot => glorot_range(&shape),
                            _ => INIT_RANGE,
                        };
                        let mut r = rng::stream(config.seed, &format!("init/{name}"));
                        let n = shape.iter().product();
                        Tensor {
                            shape,
                            data: (0..n).map(|_| r.gen_range(-range..range)).collect(),
                        }
                    }
                };
                (name, t)
            })
            .collect();
        Ok(ParamStore {
            tensors,
            trainable: BTreeSet::new(),
        })
    }

    /// Assemble from loaded tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let expected = layout(config);
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                Some(t) if &t.shape == shape && t.data.len() == shape.iter().product::<usize>() => {
                }
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        t.shape
                    )));
                }
                None => return Err(Error::Shape(format!("missing tensor {name}"))),
            }
        }
        Ok(ParamStore {
            tensors,
            trainable: BTreeSet::new(),
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn data(&self, name: &str) -> &[f64] {
        &self.get(name).data
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn with_trainable(mut self, trainable: BTreeSet<String>) -> Self {
        self.trainable = trainable;
        self
    }

    /// Borrowed view of one adapter.
    pub fn adapter(
        &self,
        key: AdapterKey,
        layer: usize,
        site: Site,
        adapter_dim: usize,
    ) -> AdapterRef<'_> {
        AdapterRef {
            down_weight: self.data(&names::adapter(key, layer, site, "down.weight")),
            down_bias: self.data(&names::adapter(key, layer, site, "down.bias")),
            up_weight: self.data(&names::adapter(key, layer, site, "up.weight")),
            up_bias: self.data(&names::adapter(key, layer, site, "up.bias")),
            dim: adapter_dim,
        }
    }
}

/// Bottleneck adapter weights: `down_weight` is `d_model×dim`, `up_weight`
/// is `dim×d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub down_weight: Vec<f64>,
    pub down_bias: Vec<f64>,
    pub up_weight: Vec<f64>,
    pub up_bias: Vec<f64>,
    pub d_model: usize,
    pub dim: usize,
}

impl AdapterParams {
    /// Identity at initialization: the up-projection and both biases are zero.
    pub fn init<R: Rng>(d_model: usize, dim: usize, rng: &mut R) -> Self {
        AdapterParams {
            down_weight: (0..d_model * dim)
                .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
                .collect(),
            down_bias: vec![0.0; dim],
            up_weight: vec![0.0; dim * d_model],
            up_bias: vec![0.0; d_model],
            d_model,
            dim,
        }
    }

    pub fn as_ref(&self) -> AdapterRef<'_> {
        AdapterRef {
            down_weight: &self.down_weight,
            down_bias: &self.down_bias,
            up_weight: &self.up_weight,
            up_bias: &self.up_bias,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterRef<'a> {
    pub down_weight: &'a [f64],
    pub down_bias: &'a [f64],
    pub up_weight: &'a [f64],
    pub up_bias: &'a [f64],
    pub dim: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_reproducible_and_identity_adapters() {
        let cfg = ModelConfig {
            vocab_size: 10,
            ..Default::default()
        };
        let a = ParamStore::init(&cfg).unwrap();
        let b = ParamStore::init(&cfg).unwrap();
        assert_eq!(a, b);
        for key in AdapterKey::ALL {
            let up = a.data(&names::adapter(key, 0, Site::Ffn, "up.weight"));
            assert!(up.iter().all(|&v| v == 0.0));
            let down = a.data(&names::adapter(key, 1, Site::Attention, "down.weight"));
            assert!(down.iter().all(|v| v.abs() < INIT_RANGE) && down.iter().any(|&v| v != 0.0));
        }
        assert_eq!(a.get(names::CLS_WEIGHT).shape, [4, 32]);
        let other = ParamStore::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            heads: 5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            adapter_dim: 32,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            layers: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn from_tensors_rejects_bad_shapes() {
        let cfg = ModelConfig {
            vocab_size: 6,
            ..Default::default()
        };
        let p = ParamStore::init(&cfg).unwrap();
        let mut tensors: BTreeMap<String, Tensor> =
            p.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        assert!(ParamStore::from_tensors(&cfg, tensors.clone()).is_ok());
        tensors.insert(names::CLS_BIAS.into(), Tensor::zeros(&[5]));
        assert!(matches!(
            ParamStore::from_tensors(&cfg, tensors),
            Err(Error::Shape(_))
        ));
    }
}
