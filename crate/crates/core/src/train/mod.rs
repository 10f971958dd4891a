//! Staged adapter training: a language adapter trained with masked language
//! modeling, a task adapter trained on a binary sentiment source, and target
//! fine-tuning of the task adapter stacked on the language adapter.

mod ablation;
mod checkpoint;
mod optimizer;
mod pipeline;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationRow, AblationTable, Condition};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, CHECKPOINT_FORMAT,
};
pub use optimizer::AdamW;
pub use pipeline::{
    finetune_stack, prepare_model, run_finetune_stage, run_language_stage, run_pipeline,
    run_task_stage, write_metrics_csv, PipelineConfig, PipelineInputs, PipelineOutcome,
};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{self, names, AdapterKey, AdapterStackSpec, Batch, ModelConfig, ParamStore};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Language,
    TaskCrosslingual,
    TargetFinetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Language => "language",
            Stage::TaskCrosslingual => "task_crosslingual",
            Stage::TargetFinetune => "target_finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    Last,
    BestVal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub checkpoint_policy: CheckpointPolicy,
    pub seed: u64,
    /// Masking rate, used by the language stage only.
    pub mask_prob: f64,
}

impl StageConfig {
    pub fn default_for(stage: Stage) -> Self {
        let (epochs, learning_rate, checkpoint_policy) = match stage {
            Stage::Language => (10, 1e-4, CheckpointPolicy::Last),
            Stage::TaskCrosslingual => (5, 5e-4, CheckpointPolicy::Last),
            Stage::TargetFinetune => (50, 5e-4, CheckpointPolicy::BestVal),
        };
        StageConfig {
            stage,
            epochs,
            learning_rate,
            batch_size: 8,
            checkpoint_policy,
            seed: 0,
            mask_prob: model::MASK_PROB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "stage {}: epochs, batch_size and learning_rate must be positive",
                self.stage
            )));
        }
        Ok(())
    }
}

/// Tensors updated by each stage; everything else stays frozen.
pub fn trainable_mask<'a>(
    stage: Stage,
    param_names: impl IntoIterator<Item = &'a str>,
) -> BTreeSet<String> {
    let (adapter, head) = match stage {
        Stage::Language => (names::adapter_prefix(AdapterKey::Language), "mlm_head."),
        Stage::TaskCrosslingual | Stage::TargetFinetune => {
            (names::adapter_prefix(AdapterKey::Task), "cls_head.")
        }
    };
    param_names
        .into_iter()
        .filter(|n| n.starts_with(&adapter) || n.starts_with(head))
        .map(str::to_string)
        .collect()
}

/// Token-id sequences for the language stage, or labeled sequences for the
/// classification stages.
#[derive(Debug, Clone, PartialEq)]
pub enum StageData {
    Corpus(Vec<Vec<usize>>),
    Labeled(Vec<(Vec<usize>, Label)>),
}

impl StageData {
    fn len(&self) -> usize {
        match self {
            StageData::Corpus(c) => c.len(),
            StageData::Labeled(l) => l.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValScores {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Scores the model after every epoch.
pub trait Validator {
    fn validate(&mut self, params: &ParamStore, epoch: usize) -> Result<ValScores>;
}

/// Micro/macro F1 on a labeled validation set.
pub struct GoldValidator<'a> {
    pub config: &'a ModelConfig,
    pub stack: &'a AdapterStackSpec,
    pub examples: &'a [(Vec<usize>, Label)],
}

impl Validator for GoldValidator<'_> {
    fn validate(&mut self, params: &ParamStore, _epoch: usize) -> Result<ValScores> {
        let (golds, preds) = predict_labeled(params, self.config, self.stack, self.examples)?;
        let (report, _) = eval::evaluate(&golds, &preds)?;
        Ok(ValScores {
            micro_f1: report.micro_f1,
            macro_f1: report.macro_f1,
        })
    }
}

pub(crate) fn predict_labeled(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    examples: &[(Vec<usize>, Label)],
) -> Result<(Vec<Label>, Vec<Label>)> {
    let mut golds = Vec::with_capacity(examples.len());
    let mut preds = Vec::with_capacity(examples.len());
    for (ids, gold) in examples {
        golds.push(*gold);
        preds.push(model::classify(params, config, stack, ids)?.label());
    }
    Ok((golds, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub val_micro_f1: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    /// Parameters of the retained epoch.
    pub params: ParamStore,
    /// 1-based epoch whose parameters were retained.
    pub selected_epoch: usize,
    pub log: Vec<EpochMetrics>,
}

/// 1-based index of the highest score; ties keep the earliest epoch.
pub fn best_epoch(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i + 1, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Train the tensors in `trainable` with AdamW, shuffling with a fixed
/// per-stage stream, and retain either the last or the best-validation epoch.
pub fn train_stage(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    data: &StageData,
    stage_config: &StageConfig,
    trainable: &BTreeSet<String>,
    mut validator: Option<&mut dyn Validator>,
) -> Result<StageOutcome> {
    stage_config.validate()?;
    let stage = stage_config.stage;
    match (stage, data) {
        (Stage::Language, StageData::Corpus(_)) => {}
        (Stage::TaskCrosslingual | Stage::TargetFinetune, StageData::Labeled(_)) => {}
        _ => {
            return Err(Error::invalid(format!(
                "wrong kind of training data for stage {stage}"
            )))
        }
    }
    let data = match data {
        // sequences of [CLS] alone have nothing to mask
        StageData::Corpus(c) => {
            StageData::Corpus(c.iter().filter(|s| s.len() > 1).cloned().collect())
        }
        other => other.clone(),
    };
    if data.len() == 0 {
        return Err(Error::invalid(format!(
            "no training data for stage {stage}"
        )));
    }
    if stage_config.checkpoint_policy == CheckpointPolicy::BestVal && validator.is_none() {
        return Err(Error::invalid(format!(
            "stage {stage} selects on validation but no validation set was given"
        )));
    }

    let mut current = params.clone().with_trainable(trainable.clone());
    let mut optimizer = AdamW::new(stage_config.learning_rate);
    let mut shuffle_rng = rng::stream(stage_config.seed, &format!("{stage}/shuffle"));
    let mut mask_rng = rng::stream(stage_config.seed, &format!("{stage}/mask"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(stage_config.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 1..=stage_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(stage_config.batch_size) {
            let (loss, grads) = match &data {
                StageData::Corpus(seqs) => {
                    let picked: Vec<Vec<usize>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
                    let masked = model::mask_batch(
                        &picked,
                        config.vocab_size,
                        stage_config.mask_prob,
                        &mut mask_rng,
                    );
                    model::gradients(&current, config, stack, Batch::Mlm(&masked))?
                }
                StageData::Labeled(examples) => {
                    let picked: Vec<(Vec<usize>, Label)> =
                        chunk.iter().map(|&i| examples[i].clone()).collect();
                    model::gradients(&current, config, stack, Batch::Classify(&picked))?
                }
            };
            optimizer.step(&mut current, &grads);
            loss_sum += loss;
            batches += 1;
        }

        let scores = match validator.as_deref_mut() {
            Some(v) => Some(v.validate(&current, epoch)?),
            None => None,
        };
        log.push(EpochMetrics {
            stage,
            epoch,
            loss: loss_sum / batches as f64,
            val_micro_f1: scores.map(|s| s.micro_f1),
            val_macro_f1: scores.map(|s| s.macro_f1),
        });
        if stage_config.checkpoint_policy == CheckpointPolicy::BestVal {
            let score = scores.expect("validator checked above").macro_f1;
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((epoch, score, current.clone()));
            }
        }
    }

    let (selected_epoch, params) = match best {
        Some((epoch, _, p)) => (epoch, p),
        None => (stage_config.epochs, current),
    };
    Ok(StageOutcome {
        params: params.with_trainable(BTreeSet::new()),
        selected_epoch,
        log,
    })
}
