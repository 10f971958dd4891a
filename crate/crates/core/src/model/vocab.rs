use std::collections::{BTreeMap, HashMap};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const MASK: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]"];

/// Lowercase, split on whitespace, and emit each punctuation character as
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Rebuild from an id-ordered token list (as stored in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return None;
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS]` followed by the token ids of `text`, truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        std::iter::once(CLS)
            .chain(tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)))
            .take(max_len)
            .collect()
    }
}

/// Specials first, then tokens seen at least `min_count` times ordered by
/// descending count and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens).expect("specials are fixed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("Mentior?"), ["mentior", "?"]);
        assert_eq!(tokenize("  Bonus, est.  "), ["bonus", ",", "est", "."]);
    }

    #[test]
    fn empty_corpus_is_specials_only() {
        let v = build_vocab::<&str>(&[], 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("[MASK]"), Some(MASK));
    }

    #[test]
    fn ordering_and_min_count() {
        let v = build_vocab(&["a a b"], 1);
        assert_eq!((v.id("a"), v.id("b")), (Some(4), Some(5)));
        let v = build_vocab(&["a a b"], 2);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn encode_prepends_cls_and_truncates() {
        let v = build_vocab(&["bonus est"], 1);
        assert_eq!(
            v.encode("Bonus ignotum", 8),
            [CLS, v.id("bonus").unwrap(), UNK]
        );
        assert_eq!(v.encode("bonus est bonus", 2).len(), 2);
    }

    #[test]
    fn from_tokens_checks_specials() {
        assert!(Vocab::from_tokens(vec!["x".into()]).is_none());
        let v = build_vocab(&["a b"], 1);
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()), Some(v));
    }
}
