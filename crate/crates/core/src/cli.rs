//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data and configuration
//! errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::corpus::{self, AnnotatedExample, Label};
use crate::error::{Error, Result};
use crate::eval::{self, Format, Render};
use crate::heuristic::{self, HeuristicConfig, LabelStats};
use crate::lexicon;
use crate::llm::{self, Backend, Budget, ClientConfig, HttpBackend, PromptTemplate, ReplayBackend};
use crate::model::ModelConfig;
use crate::train::{
    self, load_checkpoint, save_checkpoint, Checkpoint, CheckpointPolicy, PipelineConfig,
    PipelineInputs, Stage, StageConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "latin-polarity",
    version,
    about = "Emotion polarity annotation and classification for Latin"
)]
struct Cli {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => Format::Text,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Replay,
    Http,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Labeled Latin training data (JSONL dataset or text/label TSV).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label treebank sentences with the lexicon rules.
    AnnotateHeuristic {
        #[arg(long)]
        treebank: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the label counts here.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Label sentences with a chat-completion model.
    AnnotateLlm {
        /// Treebank directory or plain-text file with one sentence per line.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Gold TSV supplying one example per label.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "replay")]
        backend: BackendArg,
        /// Recorded responses for the replay backend.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Annotate a seeded random sample of this many sentences.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        cap: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the language adapter on the Latin corpus.
    TrainLang(TrainArgs),
    /// Train the task adapter on the English data.
    TrainTask {
        /// Checkpoint to continue from; a fresh model otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune the task adapter on labeled Latin data.
    Finetune {
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run all training stages and save each stage's checkpoint.
    Pipeline {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        skip_language: bool,
        #[arg(long)]
        skip_task: bool,
    },
    /// Label the first column of a TSV with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Contrast two prediction files on the sentences where they disagree.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Compare transfer conditions for one or more label sources.
    Ablate {
        /// Training data as NAME=PATH, or PATH named by its file stem. Repeatable.
        #[arg(long, required = true)]
        dataset: Vec<String>,
        #[arg(long)]
        test: PathBuf,
        /// Write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Count labels in a dataset.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: u64,
    paths: PathsSection,
    heuristic: HeuristicConfig,
    llm: LlmSection,
    model: ModelSection,
    stages: StagesSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PathsSection {
    treebank: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    latin_corpus: Option<PathBuf>,
    english: Option<PathBuf>,
    gold: Option<PathBuf>,
    replay: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LlmSection {
    model_name: String,
    task_description: String,
    cap: f64,
    price_in_per_1k: f64,
    price_out_per_1k: f64,
    sample: Option<usize>,
    #[serde(flatten)]
    client: ClientConfig,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            model_name: "gpt-4".into(),
            task_description: llm::DEFAULT_TASK_DESCRIPTION.into(),
            cap: 15.0,
            price_in_per_1k: 0.03,
            price_out_per_1k: 0.06,
            sample: None,
            client: ClientConfig::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    layers: usize,
    d_model: usize,
    heads: usize,
    d_ff: usize,
    max_len: usize,
    adapter_dim: usize,
    min_count: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            layers: m.layers,
            d_model: m.d_model,
            heads: m.heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            adapter_dim: m.adapter_dim,
            min_count: 1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StagesSection {
    language: StageSection,
    task: StageSection,
    finetune: StageSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StageSection {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    checkpoint_policy: Option<CheckpointPolicy>,
    mask_prob: Option<f64>,
}

impl StageSection {
    fn apply(&self, stage: Stage, seed: u64) -> StageConfig {
        let d = StageConfig::default_for(stage);
        StageConfig {
            stage,
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            checkpoint_policy: self.checkpoint_policy.unwrap_or(d.checkpoint_policy),
            seed,
            mask_prob: self.mask_prob.unwrap_or(d.mask_prob),
        }
    }
}

/// Fully resolved settings for one invocation.
struct Settings {
    seed: u64,
    paths: PathsSection,
    heuristic: HeuristicConfig,
    llm: LlmSection,
    pipeline: PipelineConfig,
}

fn resolve(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn load_settings(config: Option<&Path>, seed: Option<u64>) -> Result<Settings> {
    let file: FileConfig = match config {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&raw)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => FileConfig::default(),
    };
    let base = config
        .and_then(Path::parent)
        .unwrap_or(Path::new(""))
        .to_path_buf();
    let p = file.paths;
    let paths = PathsSection {
        treebank: resolve(&base, p.treebank),
        lexicon: resolve(&base, p.lexicon),
        latin_corpus: resolve(&base, p.latin_corpus),
        english: resolve(&base, p.english),
        gold: resolve(&base, p.gold),
        replay: resolve(&base, p.replay),
    };
    let seed = seed.unwrap_or(file.seed);
    file.heuristic.validate()?;
    let m = &file.model;
    let model = ModelConfig {
        layers: m.layers,
        d_model: m.d_model,
        heads: m.heads,
        d_ff: m.d_ff,
        max_len: m.max_len,
        adapter_dim: m.adapter_dim,
        seed,
        ..ModelConfig::default()
    };
    let pipeline = PipelineConfig {
        model,
        min_count: m.min_count,
        language: file.stages.language.apply(Stage::Language, seed),
        task: file.stages.task.apply(Stage::TaskCrosslingual, seed),
        finetune: file.stages.finetune.apply(Stage::TargetFinetune, seed),
        run_language: true,
        run_task: true,
    };
    for sc in [&pipeline.language, &pipeline.task, &pipeline.finetune] {
        sc.validate()?;
    }
    Ok(Settings {
        seed,
        paths,
        heuristic: file.heuristic,
        llm: file.llm,
        pipeline,
    })
}

/// Flag value if given, else the configured one; errors name the missing key.
fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = flag
        .or_else(|| configured.clone())
        .ok_or_else(|| Error::Config(format!("no {key} path given (flag or [paths].{key})")))?;
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    Ok(path)
}

fn load_examples(path: &Path) -> Result<Vec<AnnotatedExample>> {
    if path.extension().is_some_and(|e| e == "tsv") {
        corpus::load_labeled_tsv(path)
    } else {
        corpus::read_dataset(path)
    }
}

/// First column of each row, skipping a `text` header.
fn load_texts(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(i, l)| {
            !l.trim().is_empty() && !(*i == 0 && (*l == "text" || l.starts_with("text\t")))
        })
        .map(|(_, l)| l.split('\t').next().unwrap_or_default().to_string())
        .collect())
}

fn labels_of(examples: &[AnnotatedExample]) -> Vec<Label> {
    examples.iter().map(|e| e.label).collect()
}

/// Gold labels aligned with `preds` row by row, checking the texts match.
fn aligned_golds(
    preds: &[AnnotatedExample],
    gold: &[AnnotatedExample],
    pred_name: &Path,
) -> Result<Vec<Label>> {
    if preds.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} has {} rows but the gold file has {}",
            pred_name.display(),
            preds.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(gold).enumerate() {
        if p.text != g.text {
            return Err(Error::invalid(format!(
                "{} row {}: text {:?} does not match gold {:?}",
                pred_name.display(),
                i + 1,
                p.text,
                g.text
            )));
        }
    }
    Ok(labels_of(gold))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn save_stage(ck: &Checkpoint, dir: &Path) -> Result<()> {
    save_checkpoint(ck, dir)?;
    train::write_metrics_csv(&ck.metrics, &dir.join("metrics.csv"))
}

fn pipeline_inputs(s: &Settings, dataset: Option<PathBuf>) -> Result<PipelineInputs> {
    let corpus_path = pick(None, &s.paths.latin_corpus, "latin_corpus")?;
    let english = pick(None, &s.paths.english, "english")?;
    let gold = pick(None, &s.paths.gold, "gold")?;
    let dataset = match dataset {
        Some(p) => pick(Some(p), &None, "dataset")?,
        None => return Err(Error::Config("--dataset is required".into())),
    };
    Ok(PipelineInputs {
        latin_corpus: corpus::load_text_corpus(&corpus_path)?,
        english: corpus::load_labeled_tsv(&english)?,
        latin_dataset: load_examples(&dataset)?,
        gold_val: corpus::load_labeled_tsv(&gold)?,
    })
}

/// Continue from `init` when given, else start from a fresh model whose
/// vocabulary covers all pipeline inputs.
fn start_from(init: Option<PathBuf>, inputs: &PipelineInputs, s: &Settings) -> Result<Checkpoint> {
    match init {
        Some(dir) => load_checkpoint(&dir),
        None => train::prepare_model(inputs, &s.pipeline),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let s = load_settings(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::AnnotateHeuristic {
            treebank,
            lexicon,
            out,
            stats,
            format,
        } => {
            let treebank = pick(treebank, &s.paths.treebank, "treebank")?;
            let lexicon = pick(lexicon, &s.paths.lexicon, "lexicon")?;
            let sentences = corpus::load_treebank_dir(&treebank)?;
            let lex = lexicon::load_lexicon(&lexicon)?;
            let (examples, label_stats) =
                heuristic::annotate_corpus(&sentences, &lex, &s.heuristic);
            corpus::write_dataset(&examples, &out)?;
            let rendered = label_stats.render(format.into());
            match stats {
                Some(path) => write_file(&path, &rendered)?,
                None => print!("{rendered}"),
            }
        }
        Command::AnnotateLlm {
            input,
            gold,
            backend,
            replay,
            sample,
            cap,
            out,
        } => {
            let input = pick(input, &s.paths.treebank, "treebank")?;
            let gold = pick(gold, &s.paths.gold, "gold")?;
            let sentences: Vec<String> = if input.is_dir() {
                corpus::load_treebank_dir(&input)?
                    .into_iter()
                    .map(|x| x.text)
                    .collect()
            } else {
                corpus::load_text_corpus(&input)?
            };
            let sentences = match sample.or(s.llm.sample) {
                Some(n) => llm::sample_sentences(&sentences, n, s.seed),
                None => sentences,
            };
            let shots = llm::few_shots_from_gold(&corpus::load_labeled_tsv(&gold)?)?;
            let template = PromptTemplate::new(&s.llm.task_description, &shots, &s.llm.model_name)?;
            let backend: Box<dyn Backend> = match backend {
                BackendArg::Replay => Box::new(ReplayBackend::load(&pick(
                    replay,
                    &s.paths.replay,
                    "replay",
                )?)?),
                BackendArg::Http => Box::new(HttpBackend::new(&s.llm.client)?),
            };
            let budget = Budget::new(
                cap.unwrap_or(s.llm.cap),
                s.llm.price_in_per_1k,
                s.llm.price_out_per_1k,
            )?;
            let outcome = llm::annotate_batch(
                &sentences,
                &template,
                backend.as_ref(),
                budget,
                &s.llm.client,
            )?;
            corpus::write_dataset(&outcome.examples, &out)?;
            println!(
                "annotated {}, rejected {}, skipped for budget {}, spent {} of {}",
                outcome.examples.len(),
                outcome.rejected,
                outcome.skipped_for_budget,
                eval::fmt4(outcome.budget.spent),
                eval::fmt4(outcome.budget.cap)
            );
        }
        Command::TrainLang(args) => {
            let inputs = pipeline_inputs(&s, args.dataset)?;
            let ck = train::prepare_model(&inputs, &s.pipeline)?;
            let ck = train::run_language_stage(&ck, &inputs.latin_corpus, &s.pipeline.language)?;
            save_stage(&ck, &args.out)?;
        }
        Command::TrainTask { init, train: args } => {
            let inputs = pipeline_inputs(&s, args.dataset)?;
            let ck = start_from(init, &inputs, &s)?;
            let ck = train::run_task_stage(&ck, &inputs.english, &s.pipeline.task)?;
            save_stage(&ck, &args.out)?;
        }
        Command::Finetune { init, train: args } => {
            let inputs = pipeline_inputs(&s, args.dataset)?;
            let ck = start_from(init, &inputs, &s)?;
            let ck = train::run_finetune_stage(
                &ck,
                &inputs.latin_dataset,
                &inputs.gold_val,
                &s.pipeline.finetune,
            )?;
            save_stage(&ck, &args.out)?;
        }
        Command::Pipeline {
            train: args,
            skip_language,
            skip_task,
        } => {
            let inputs = pipeline_inputs(&s, args.dataset)?;
            let cfg = PipelineConfig {
                run_language: !skip_language,
                run_task: !skip_task,
                ..s.pipeline.clone()
            };
            let outcome = train::run_pipeline(&inputs, &cfg)?;
            for (stage, ck) in &outcome.stages {
                save_stage(ck, &args.out.join(stage.as_str()))?;
            }
            train::write_metrics_csv(
                &outcome.final_checkpoint().metrics,
                &args.out.join("metrics.csv"),
            )?;
        }
        Command::Predict {
            checkpoint,
            input,
            out,
        } => {
            let input = pick(Some(input), &None, "input")?;
            let ck = load_checkpoint(&checkpoint)?;
            let texts = load_texts(&input)?;
            let labels = ck.predict_all(&texts)?;
            corpus::write_labeled_tsv(texts.iter().map(String::as_str).zip(labels), &out)?;
        }
        Command::Evaluate { pred, gold, format } => {
            let gold = pick(gold, &s.paths.gold, "gold")?;
            let preds = corpus::load_labeled_tsv(&pred)?;
            let golds = aligned_golds(&preds, &corpus::load_labeled_tsv(&gold)?, &pred)?;
            let (report, cm) = eval::evaluate(&golds, &labels_of(&preds))?;
            let format = Format::from(format);
            print!("{}", report.render(format));
            if format == Format::Text {
                println!();
            }
            print!("{}", cm.render(format));
        }
        Command::Compare { a, b, gold, format } => {
            let gold = corpus::load_labeled_tsv(&pick(gold, &s.paths.gold, "gold")?)?;
            let pa = corpus::load_labeled_tsv(&a)?;
            let pb = corpus::load_labeled_tsv(&b)?;
            let golds = aligned_golds(&pa, &gold, &a)?;
            aligned_golds(&pb, &gold, &b)?;
            let report = eval::disagreement_report(&labels_of(&pa), &labels_of(&pb), &golds)?;
            print!("{}", report.render(format.into()));
        }
        Command::Ablate {
            dataset,
            test,
            out,
            format,
        } => {
            let test = load_examples(&pick(Some(test), &None, "test")?)?;
            let mut table = train::AblationTable::default();
            for spec in dataset {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(&spec);
                        let stem = p
                            .file_stem()
                            .map(|x| x.to_string_lossy().into_owned())
                            .unwrap_or(spec);
                        (stem, p)
                    }
                };
                let inputs = pipeline_inputs(&s, Some(path))?;
                table
                    .rows
                    .extend(train::run_ablation(&inputs, &test, &s.pipeline, &name)?.rows);
            }
            if let Some(path) = out {
                write_file(&path, &table.render(Format::Csv))?;
            }
            print!("{}", table.render(format.into()));
        }
        Command::Stats { dataset, format } => {
            let examples = load_examples(&pick(Some(dataset), &None, "dataset")?)?;
            print!(
                "{}",
                LabelStats::from_labels(labels_of(&examples)).render(format.into())
            );
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
