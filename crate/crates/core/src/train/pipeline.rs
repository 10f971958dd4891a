use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    train_stage, trainable_mask, Checkpoint, EpochMetrics, GoldValidator, Stage, StageConfig,
    StageData,
};
use crate::corpus::{AnnotatedExample, Label};
use crate::error::{Error, Result};
use crate::model::{build_vocab, AdapterKey, AdapterStackSpec, ModelConfig};

/// Everything the three stages read.
#[derive(Debug, Clone, Default)]
pub struct PipelineInputs {
    pub latin_corpus: Vec<String>,
    pub english: Vec<AnnotatedExample>,
    pub latin_dataset: Vec<AnnotatedExample>,
    pub gold_val: Vec<AnnotatedExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub min_count: usize,
    pub language: StageConfig,
    pub task: StageConfig,
    pub finetune: StageConfig,
    pub run_language: bool,
    pub run_task: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::default(),
            min_count: 1,
            language: StageConfig::default_for(Stage::Language),
            task: StageConfig::default_for(Stage::TaskCrosslingual),
            finetune: StageConfig::default_for(Stage::TargetFinetune),
            run_language: true,
            run_task: true,
        }
    }
}

impl PipelineConfig {
    /// Use `seed` for initialization and for every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.language.seed = seed;
        self.task.seed = seed;
        self.finetune.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// One checkpoint per executed stage, in execution order.
    pub stages: Vec<(Stage, Checkpoint)>,
}

impl PipelineOutcome {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        &self.stages.last().expect("fine-tuning always runs").1
    }
}

/// Fresh model whose vocabulary covers every training text of the pipeline,
/// so all ablation conditions share one vocabulary.
pub fn prepare_model(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<Checkpoint> {
    let texts: Vec<&str> = inputs
        .latin_corpus
        .iter()
        .map(String::as_str)
        .chain(inputs.english.iter().map(|e| e.text.as_str()))
        .chain(inputs.latin_dataset.iter().map(|e| e.text.as_str()))
        .collect();
    let vocab = build_vocab(&texts, config.min_count);
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    };
    Checkpoint::fresh(model, vocab)
}

fn labeled(ck: &Checkpoint, examples: &[AnnotatedExample]) -> Vec<(Vec<usize>, Label)> {
    examples
        .iter()
        .map(|e| (ck.encode(&e.text), e.label))
        .collect()
}

fn advance(
    ck: &Checkpoint,
    stage: Stage,
    stack: AdapterStackSpec,
    outcome: super::StageOutcome,
) -> Checkpoint {
    let mut history = ck.history.clone();
    history.push(stage);
    let mut metrics = ck.metrics.clone();
    metrics.extend(outcome.log);
    Checkpoint {
        config: ck.config.clone(),
        vocab: ck.vocab.clone(),
        params: outcome.params,
        history,
        epoch: outcome.selected_epoch,
        stack,
        metrics,
    }
}

/// Masked-language-model training of the language adapter and MLM head.
pub fn run_language_stage(
    ck: &Checkpoint,
    corpus: &[String],
    sc: &StageConfig,
) -> Result<Checkpoint> {
    let data = StageData::Corpus(corpus.iter().map(|t| ck.encode(t)).collect());
    let stack = AdapterStackSpec::of(&[AdapterKey::Language]);
    let mask = trainable_mask(Stage::Language, ck.params.names());
    let sc = StageConfig {
        stage: Stage::Language,
        ..sc.clone()
    };
    let out = train_stage(&ck.params, &ck.config, &stack, &data, &sc, &mask, None)?;
    Ok(advance(ck, Stage::Language, stack, out))
}

/// Classification training of the task adapter and head on the auxiliary
/// binary-labeled source, without the language adapter.
pub fn run_task_stage(
    ck: &Checkpoint,
    examples: &[AnnotatedExample],
    sc: &StageConfig,
) -> Result<Checkpoint> {
    let data = StageData::Labeled(labeled(ck, examples));
    let stack = AdapterStackSpec::of(&[AdapterKey::Task]);
    let mask = trainable_mask(Stage::TaskCrosslingual, ck.params.names());
    let sc = StageConfig {
        stage: Stage::TaskCrosslingual,
        ..sc.clone()
    };
    let out = train_stage(&ck.params, &ck.config, &stack, &data, &sc, &mask, None)?;
    Ok(advance(ck, Stage::TaskCrosslingual, stack, out))
}

/// The task adapter goes on top of the language adapter once the latter
/// has been trained.
pub fn finetune_stack(history: &[Stage]) -> AdapterStackSpec {
    if history.contains(&Stage::Language) {
        AdapterStackSpec::of(&[AdapterKey::Language, AdapterKey::Task])
    } else {
        AdapterStackSpec::of(&[AdapterKey::Task])
    }
}

/// Target-language fine-tuning of the task adapter and head, validated on
/// `gold_val` after every epoch.
pub fn run_finetune_stage(
    ck: &Checkpoint,
    dataset: &[AnnotatedExample],
    gold_val: &[AnnotatedExample],
    sc: &StageConfig,
) -> Result<Checkpoint> {
    let data = StageData::Labeled(labeled(ck, dataset));
    let stack = finetune_stack(&ck.history);
    let mask = trainable_mask(Stage::TargetFinetune, ck.params.names());
    let sc = StageConfig {
        stage: Stage::TargetFinetune,
        ..sc.clone()
    };
    let val = labeled(ck, gold_val);
    let mut validator = GoldValidator {
        config: &ck.config,
        stack: &stack,
        examples: &val,
    };
    let validator: Option<&mut dyn super::Validator> = if val.is_empty() {
        None
    } else {
        Some(&mut validator)
    };
    let out = train_stage(&ck.params, &ck.config, &stack, &data, &sc, &mask, validator)?;
    Ok(advance(ck, Stage::TargetFinetune, stack, out))
}

/// Run the enabled stages in order from a fresh model.
pub fn run_pipeline(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut ck = prepare_model(inputs, config)?;
    let mut stages = Vec::with_capacity(3);
    if config.run_language {
        ck = run_language_stage(&ck, &inputs.latin_corpus, &config.language)?;
        stages.push((Stage::Language, ck.clone()));
    }
    if config.run_task {
        ck = run_task_stage(&ck, &inputs.english, &config.task)?;
        stages.push((Stage::TaskCrosslingual, ck.clone()));
    }
    ck = run_finetune_stage(
        &ck,
        &inputs.latin_dataset,
        &inputs.gold_val,
        &config.finetune,
    )?;
    stages.push((Stage::TargetFinetune, ck));
    Ok(PipelineOutcome { stages })
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut s = String::from("stage,epoch,loss,val_micro_f1,val_macro_f1\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{}",
            m.stage,
            m.epoch,
            m.loss,
            opt(m.val_micro_f1),
            opt(m.val_macro_f1)
        );
    }
    s
}

pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(metrics)).map_err(|e| Error::io(path, e))
}
