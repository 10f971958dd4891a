//! Corpus ingestion: CoNLL-U treebanks, plain-text corpora, labeled TSV
//! files and the JSON-lines dataset format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emotion polarity label. The declaration order is the canonical report
/// order used by every table and matrix in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
    Mixed,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Positive,
        Label::Negative,
        Label::Neutral,
        Label::Mixed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
            Label::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            "mixed" => Ok(Label::Mixed),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Heuristic,
    Llm,
    Gold,
    Model,
}

/// One syntactic word of a CoNLL-U sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// Columns 5 to 10 (XPOS through MISC), tab-joined and otherwise untouched.
    pub misc: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub sent_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub text: String,
    pub label: Label,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
}

impl AnnotatedExample {
    pub fn gold(text: impl Into<String>, label: Label) -> Self {
        AnnotatedExample {
            text: text.into(),
            label,
            provenance: Provenance::Gold,
            explanation: None,
            mean_score: None,
        }
    }
}

/// Parse CoNLL-U text. Multiword-token ranges (`1-2`) and empty nodes
/// (`1.1`) are skipped.
pub fn parse_conllu(raw: &str) -> Result<Vec<Sentence>> {
    parse_conllu_named(raw, "<input>", "")
}

fn parse_conllu_named(raw: &str, source_name: &str, source: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut block = SentenceBuilder::default();

    for (i, line) in raw.split('\n').enumerate() {
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);

        if line.trim().is_empty() {
            if let Some(s) = block.finish(sentences.len() + 1, source) {
                if !seen_ids.insert(s.sent_id.clone()) {
                    return Err(Error::parse(
                        source_name,
                        block.start_line,
                        format!("duplicate sent_id {:?}", s.sent_id),
                    ));
                }
                sentences.push(s);
            }
            block = SentenceBuilder::default();
            continue;
        }
        if block.start_line == 0 {
            block.start_line = lineno;
        }

        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "sent_id" => block.sent_id = Some(value.trim().to_string()),
                    "text" => block.text = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize =
            id.parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
                Error::parse(source_name, lineno, format!("invalid token id {id:?}"))
            })?;
        if let Some(prev) = block.tokens.last() {
            if index <= prev.index {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("token id {index} does not follow {}", prev.index),
                ));
            }
        }
        if cols[1].is_empty() || cols[2].is_empty() {
            return Err(Error::parse(source_name, lineno, "empty FORM or LEMMA"));
        }
        block.tokens.push(Token {
            index,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            misc: cols[4..].join("\t"),
        });
    }
    if let Some(s) = block.finish(sentences.len() + 1, source) {
        if !seen_ids.insert(s.sent_id.clone()) {
            return Err(Error::parse(
                source_name,
                block.start_line,
                format!("duplicate sent_id {:?}", s.sent_id),
            ));
        }
        sentences.push(s);
    }
    Ok(sentences)
}

#[derive(Default)]
struct SentenceBuilder {
    start_line: usize,
    sent_id: Option<String>,
    text: Option<String>,
    tokens: Vec<Token>,
}

impl SentenceBuilder {
    fn finish(&mut self, ordinal: usize, source: &str) -> Option<Sentence> {
        if self.tokens.is_empty() {
            return None;
        }
        let tokens = std::mem::take(&mut self.tokens);
        let text = self.text.take().unwrap_or_else(|| {
            tokens
                .iter()
                .map(|t| t.form.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        });
        Some(Sentence {
            sent_id: self.sent_id.take().unwrap_or_else(|| ordinal.to_string()),
            text,
            tokens,
            source: source.to_string(),
        })
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load every `.conllu` file in `dir`, in lexicographic file-name order.
/// Each sentence's `source` is the file stem.
pub fn load_treebank_dir(dir: &Path) -> Result<Vec<Sentence>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|ext| ext == "conllu") {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .conllu files in {}",
            dir.display()
        )));
    }
    files.sort();

    let mut sentences = Vec::new();
    for path in files {
        let raw = read_to_string(&path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        sentences.extend(parse_conllu_named(
            &raw,
            &path.display().to_string(),
            &stem,
        )?);
    }
    Ok(sentences)
}

/// Non-empty trimmed lines of a plain-text corpus.
pub fn load_text_corpus(path: &Path) -> Result<Vec<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Load `text<TAB>label` lines as gold examples. A leading `text\tlabel`
/// header and blank lines are ignored.
pub fn load_labeled_tsv(path: &Path) -> Result<Vec<AnnotatedExample>> {
    parse_labeled_tsv(&read_to_string(path)?, &path.display().to_string())
}

pub(crate) fn parse_labeled_tsv(raw: &str, source_name: &str) -> Result<Vec<AnnotatedExample>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || (i == 0 && line == "text\tlabel") {
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
        let label = cols[1]
            .trim()
            .parse::<Label>()
            .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        out.push(AnnotatedExample::gold(cols[0], label));
    }
    Ok(out)
}

/// Write `text<TAB>label` lines with a header, as used for predictions.
pub fn write_labeled_tsv<'a>(
    rows: impl IntoIterator<Item = (&'a str, Label)>,
    path: &Path,
) -> Result<()> {
    let mut buf = String::from("text\tlabel\n");
    for (text, label) in rows {
        buf.push_str(text);
        buf.push('\t');
        buf.push_str(label.as_str());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(examples: &[AnnotatedExample], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex)?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let raw = read_to_string(path)?;
    let name = path.display().to_string();
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(name.as_str(), i + 1, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, form: &str, lemma: &str, upos: &str) -> String {
        format!("{id}\t{form}\t{lemma}\t{upos}\t_\t_\t0\troot\t_\t_")
    }

    #[test]
    fn empty_input_has_no_sentences() {
        assert!(parse_conllu("").unwrap().is_empty());
    }

    #[test]
    fn two_token_sentence() {
        let raw = format!(
            "{}\n{}\n\n",
            row("1", "Gallia", "Gallia", "NOUN"),
            row("2", "est", "sum", "AUX")
        );
        let s = parse_conllu(&raw).unwrap();
        assert_eq!(s.len(), 1);
        let upos: Vec<_> = s[0].tokens.iter().map(|t| t.upos.as_str()).collect();
        assert_eq!(upos, ["NOUN", "AUX"]);
        assert_eq!(s[0].text, "Gallia est");
        assert_eq!(s[0].sent_id, "1");
        assert_eq!(s[0].tokens[0].misc, "_\t_\t0\troot\t_\t_");
    }

    #[test]
    fn multiword_range_is_skipped() {
        let raw = format!(
            "{}\n{}\n{}\n",
            row("1-2", "del", "_", "_"),
            row("1", "de", "de", "ADP"),
            row("2", "el", "el", "DET")
        );
        let s = parse_conllu(&raw).unwrap();
        let ids: Vec<_> = s[0].tokens.iter().map(|t| t.index).collect();
        assert_eq!(ids, [1, 2]);
    }

    #[test]
    fn bad_column_count_names_line() {
        let raw = format!("# sent_id = a\n{}\n1\tonly\n", row("1", "x", "x", "X"));
        match parse_conllu(&raw) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_integer_id_is_an_error() {
        let raw = row("x", "a", "a", "X");
        assert!(matches!(
            parse_conllu(&raw),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn non_increasing_ids_are_rejected() {
        let raw = format!("{}\n{}\n", row("2", "a", "a", "X"), row("1", "b", "b", "X"));
        assert!(matches!(
            parse_conllu(&raw),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn tsv_labels() {
        let ex =
            parse_labeled_tsv("text\tlabel\nMentior?\tmixed\nbonus est\tpositive\n", "t").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].label, Label::Mixed);
        assert_eq!(ex[0].text, "Mentior?");
        assert_eq!(ex[1].label, Label::Positive);
        assert!(ex.iter().all(|e| e.provenance == Provenance::Gold));
    }

    #[test]
    fn tsv_unknown_label_names_line() {
        let err = parse_labeled_tsv("a\tpositive\nb\thappy\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_labeled_tsv("a\tpositive\textra\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn label_spelling_is_canonical() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(
                serde_json::to_string(&l).unwrap(),
                format!("\"{}\"", l.as_str())
            );
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
    }
}
