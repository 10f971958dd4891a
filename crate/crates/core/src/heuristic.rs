//! Lexicon-driven weak labeling.
//!
//! A sentence is kept only if it contains a lexicon lemma tagged with one of
//! the filter parts of speech (nouns and adjectives by default). Kept
//! sentences are labeled from the scores of *all* their lexicon matches,
//! applying these rules in order:
//!
//! 1. every matched score is exactly zero: `neutral`;
//! 2. the mean lies in the closed band `[mixed_low, mixed_high]`: `mixed`;
//! 3. the mean is above `mixed_high`: `positive`;
//! 4. otherwise (below `mixed_low`): `negative`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Label, Provenance, Sentence};
use crate::error::{Error, Result};
use crate::lexicon::{match_sentence, LexiconMatch, PolarityLexicon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub mixed_low: f64,
    pub mixed_high: f64,
    pub filter_pos: BTreeSet<String>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            mixed_low: -0.1,
            mixed_high: 0.1,
            filter_pos: ["NOUN", "ADJ"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| x > -1.0 && x < 1.0;
        if !(self.mixed_low < self.mixed_high
            && in_range(self.mixed_low)
            && in_range(self.mixed_high))
        {
            return Err(Error::Config(format!(
                "mixed band [{}, {}] must satisfy -1 < low < high < 1",
                self.mixed_low, self.mixed_high
            )));
        }
        Ok(())
    }
}

/// Per-label counts in canonical label order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelStats {
    pub counts: BTreeMap<Label, usize>,
    pub total: usize,
}

impl LabelStats {
    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut stats = LabelStats {
            counts: Label::ALL.iter().map(|&l| (l, 0)).collect(),
            total: 0,
        };
        for l in labels {
            *stats.counts.entry(l).or_insert(0) += 1;
            stats.total += 1;
        }
        stats
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }
}

impl fmt::Display for LabelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>8}", "label", "count")?;
        for l in Label::ALL {
            writeln!(f, "{:<10}{:>8}", l.as_str(), self.count(l))?;
        }
        writeln!(f, "{:<10}{:>8}", "total", self.total)
    }
}

pub fn passes_filter(
    sentence: &Sentence,
    lexicon: &PolarityLexicon,
    config: &HeuristicConfig,
) -> bool {
    sentence.tokens.iter().any(|t| {
        config.filter_pos.contains(&t.upos) && t.lemma != "_" && lexicon.contains(&t.lemma)
    })
}

pub fn mean_polarity(matches: &[LexiconMatch]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::invalid("mean polarity of an empty match list"));
    }
    Ok(matches.iter().map(|m| m.score).sum::<f64>() / matches.len() as f64)
}

/// Apply the labeling rules to pre-computed match scores. `scores` must be
/// non-empty.
pub fn label_scores(scores: &[f64], config: &HeuristicConfig) -> (Label, f64) {
    debug_assert!(!scores.is_empty());
    if scores.iter().all(|&s| s == 0.0) {
        return (Label::Neutral, 0.0);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let label = if mean >= config.mixed_low && mean <= config.mixed_high {
        Label::Mixed
    } else if mean > config.mixed_high {
        Label::Positive
    } else {
        Label::Negative
    };
    (label, mean)
}

/// `None` when the sentence does not pass the part-of-speech filter.
pub fn label_sentence(
    sentence: &Sentence,
    lexicon: &PolarityLexicon,
    config: &HeuristicConfig,
) -> Option<(Label, f64)> {
    if !passes_filter(sentence, lexicon, config) {
        return None;
    }
    let scores: Vec<f64> = match_sentence(sentence, lexicon)
        .iter()
        .map(|m| m.score)
        .collect();
    Some(label_scores(&scores, config))
}

pub fn annotate_corpus(
    sentences: &[Sentence],
    lexicon: &PolarityLexicon,
    config: &HeuristicConfig,
) -> (Vec<AnnotatedExample>, LabelStats) {
    let examples: Vec<AnnotatedExample> = sentences
        .iter()
        .filter_map(|s| {
            label_sentence(s, lexicon, config).map(|(label, mean)| AnnotatedExample {
                text: s.text.clone(),
                label,
                provenance: Provenance::Heuristic,
                explanation: None,
                mean_score: Some(mean),
            })
        })
        .collect();
    let stats = LabelStats::from_labels(examples.iter().map(|e| e.label));
    (examples, stats)
}
