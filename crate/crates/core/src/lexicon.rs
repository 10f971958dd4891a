//! Polarity lexicon loading and lemma matching.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Lemma to prior polarity score in [-1, 1]. Lemmas are stored lowercased.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolarityLexicon {
    entries: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconMatch {
    pub token_index: usize,
    pub lemma: String,
    pub upos: String,
    pub score: f64,
}

impl PolarityLexicon {
    /// Build from `(lemma, score)` pairs; duplicates are averaged.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (lemma, score) in entries {
            check_score(score).map_err(Error::invalid)?;
            let slot = acc.entry(lemma.as_ref().to_lowercase()).or_insert((0.0, 0));
            slot.0 += score;
            slot.1 += 1;
        }
        Ok(PolarityLexicon {
            entries: acc
                .into_iter()
                .map(|(k, (sum, n))| (k, sum / n as f64))
                .collect(),
        })
    }

    pub fn get(&self, lemma: &str) -> Option<f64> {
        self.entries.get(&lemma.to_lowercase()).copied()
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.get(lemma).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn check_score(score: f64) -> std::result::Result<(), String> {
    if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
        return Err(format!("score {score} outside [-1, 1]"));
    }
    Ok(())
}

/// Load a `lemma<TAB>score` file. An optional header whose score column does
/// not parse is accepted on the first line only.
pub fn load_lexicon(path: &Path) -> Result<PolarityLexicon> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(&raw, &path.display().to_string())
}

pub(crate) fn parse_lexicon(raw: &str, source_name: &str) -> Result<PolarityLexicon> {
    let mut pairs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::parse(
                source_name,
                i + 1,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        if i == 0 && cols[0] == "lemma" && cols[1] == "score" {
            continue;
        }
        let score: f64 = cols[1].trim().parse().map_err(|_| {
            Error::parse(source_name, i + 1, format!("invalid score {:?}", cols[1]))
        })?;
        check_score(score).map_err(|m| Error::parse(source_name, i + 1, m))?;
        pairs.push((cols[0].trim().to_string(), score));
    }
    PolarityLexicon::from_entries(pairs)
}

/// Tokens whose lemma is in the lexicon, in token order. UPOS is ignored here.
pub fn match_sentence(sentence: &Sentence, lexicon: &PolarityLexicon) -> Vec<LexiconMatch> {
    sentence
        .tokens
        .iter()
        .filter(|t| t.lemma != "_")
        .filter_map(|t| {
            lexicon.get(&t.lemma).map(|score| LexiconMatch {
                token_index: t.index,
                lemma: t.lemma.to_lowercase(),
                upos: t.upos.clone(),
                score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn sentence(tokens: &[(&str, &str)]) -> Sentence {
        Sentence {
            sent_id: "s".into(),
            text: String::new(),
            tokens: tokens
                .iter()
                .enumerate()
                .map(|(i, (lemma, upos))| Token {
                    index: i + 1,
                    form: lemma.to_string(),
                    lemma: lemma.to_string(),
                    upos: upos.to_string(),
                    misc: String::new(),
                })
                .collect(),
            source: "t".into(),
        }
    }

    #[test]
    fn loads_entries() {
        let lex = parse_lexicon("malus\t-1.0\nbonus\t1.0\n", "t").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.get("bonus"), Some(1.0));
        assert_eq!(lex.get("Malus"), Some(-1.0));
    }

    #[test]
    fn duplicates_are_averaged() {
        let lex = parse_lexicon("lemma\tscore\ngaudium\t0.5\nGaudium\t1.0\n", "t").unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.get("gaudium"), Some(0.75));
    }

    #[test]
    fn bad_scores_name_the_line() {
        let err = parse_lexicon("malus\t-1\nbonus\tgood\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_lexicon("bonus\t1.5\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(parse_lexicon("x\tNaN\n", "t").is_err());
    }

    #[test]
    fn matching() {
        let lex = PolarityLexicon::from_entries([("bonus", 1.0)]).unwrap();
        let m = match_sentence(&sentence(&[("bonus", "ADJ"), ("est", "AUX")]), &lex);
        assert_eq!(m.len(), 1);
        assert_eq!(
            (m[0].lemma.as_str(), m[0].score, m[0].token_index),
            ("bonus", 1.0, 1)
        );

        assert!(match_sentence(&sentence(&[("via", "NOUN")]), &lex).is_empty());

        let lex = PolarityLexicon::from_entries([("malus", -1.0)]).unwrap();
        let m = match_sentence(&sentence(&[("malus", "ADJ"), ("malus", "NOUN")]), &lex);
        assert_eq!(m.iter().map(|m| m.score).collect::<Vec<_>>(), [-1.0, -1.0]);
    }

    #[test]
    fn underscore_lemma_never_matches() {
        let lex = PolarityLexicon::from_entries([("_", 0.5)]).unwrap();
        assert!(match_sentence(&sentence(&[("_", "NOUN")]), &lex).is_empty());
    }
}
