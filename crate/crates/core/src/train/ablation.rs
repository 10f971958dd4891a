use std::fmt;
use std::fmt::Write as _;

use super::pipeline::{run_pipeline, PipelineConfig, PipelineInputs};
use crate::corpus::{AnnotatedExample, Label};
use crate::error::Result;
use crate::eval::{self, fmt4, Format, Render};

/// Which transfer stages precede fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    NoTransfer,
    Language,
    Task,
    Both,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::NoTransfer,
        Condition::Language,
        Condition::Task,
        Condition::Both,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoTransfer => "no transfer",
            Condition::Language => "+language",
            Condition::Task => "+task",
            Condition::Both => "+both",
        }
    }

    fn stages(self) -> (bool, bool) {
        match self {
            Condition::NoTransfer => (false, false),
            Condition::Language => (true, false),
            Condition::Task => (false, true),
            Condition::Both => (true, true),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label_source: String,
    pub condition: Condition,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn split(examples: &[AnnotatedExample]) -> (Vec<&str>, Vec<Label>) {
    examples.iter().map(|e| (e.text.as_str(), e.label)).unzip()
}

/// Train all four conditions from the same seeds and score each on the test
/// set (micro and macro F1) and the validation set (macro F1).
pub fn run_ablation(
    inputs: &PipelineInputs,
    test_set: &[AnnotatedExample],
    config: &PipelineConfig,
    label_source: &str,
) -> Result<AblationTable> {
    let (test_texts, test_golds) = split(test_set);
    let (val_texts, val_golds) = split(&inputs.gold_val);
    let mut rows = Vec::with_capacity(4);
    for condition in Condition::ALL {
        let (run_language, run_task) = condition.stages();
        let cfg = PipelineConfig {
            run_language,
            run_task,
            ..config.clone()
        };
        let outcome = run_pipeline(inputs, &cfg)?;
        let model = outcome.final_checkpoint();
        let (test_report, _) = eval::evaluate(&test_golds, &model.predict_all(&test_texts)?)?;
        let (val_report, _) = eval::evaluate(&val_golds, &model.predict_all(&val_texts)?)?;
        rows.push(AblationRow {
            label_source: label_source.to_string(),
            condition,
            micro_f1: test_report.micro_f1,
            macro_f1: test_report.macro_f1,
            val_f1: val_report.macro_f1,
        });
    }
    Ok(AblationTable { rows })
}

impl Render for AblationTable {
    fn render(&self, format: Format) -> String {
        let mut s = String::new();
        match format {
            Format::Csv => {
                s.push_str("label_source,condition,micro_f1,macro_f1,val_f1\n");
                for r in &self.rows {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        r.label_source,
                        r.condition,
                        fmt4(r.micro_f1),
                        fmt4(r.macro_f1),
                        fmt4(r.val_f1)
                    );
                }
            }
            Format::Text => {
                let _ = writeln!(
                    s,
                    "{:<14}{:<14}{:>10}{:>10}{:>10}",
                    "labels", "condition", "micro_f1", "macro_f1", "val_f1"
                );
                for r in &self.rows {
                    let _ = writeln!(
                        s,
                        "{:<14}{:<14}{:>10}{:>10}{:>10}",
                        r.label_source,
                        r.condition.as_str(),
                        fmt4(r.micro_f1),
                        fmt4(r.macro_f1),
                        fmt4(r.val_f1)
                    );
                }
            }
        }
        s
    }
}
