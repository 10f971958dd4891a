use std::thread;
use std::time::Duration;

use latin_polarity::corpus::{self, AnnotatedExample, Label, Provenance, Sentence, Token};
use latin_polarity::eval;
use latin_polarity::lexicon::{match_sentence, PolarityLexicon};
use latin_polarity::llm::{
    annotate_batch, Backend, BackendError, Budget, ClientConfig, PromptPayload, PromptTemplate,
};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    (0usize..4).prop_map(|i| Label::from_index(i).unwrap())
}

fn example() -> impl Strategy<Value = AnnotatedExample> {
    (
        "[a-zA-Z .,;:'\"\\\\äæœ]{0,24}",
        label(),
        prop_oneof![
            Just(Provenance::Heuristic),
            Just(Provenance::Llm),
            Just(Provenance::Gold),
            Just(Provenance::Model)
        ],
        proptest::option::of("[a-z ]{0,12}"),
        proptest::option::of(-1.0f64..=1.0),
    )
        .prop_map(
            |(text, label, provenance, explanation, mean_score)| AnnotatedExample {
                text,
                label,
                provenance,
                explanation,
                mean_score,
            },
        )
}

const LEMMAS: [&str; 6] = ["bonus", "malus", "laetus", "tristis", "domus", "esse"];

fn sentence() -> impl Strategy<Value = Sentence> {
    proptest::collection::vec(0usize..LEMMAS.len(), 0..10).prop_map(|picks| Sentence {
        sent_id: "s".into(),
        text: String::new(),
        tokens: picks
            .iter()
            .enumerate()
            .map(|(i, &p)| Token {
                index: i + 1,
                form: LEMMAS[p].into(),
                lemma: LEMMAS[p].into(),
                upos: "NOUN".into(),
                misc: "_\t_\t_\t_\t_\t_".into(),
            })
            .collect(),
        source: "t".into(),
    })
}

fn lexicon() -> impl Strategy<Value = PolarityLexicon> {
    proptest::collection::btree_map(0usize..LEMMAS.len(), -1.0f64..=1.0, 0..LEMMAS.len()).prop_map(
        |m| PolarityLexicon::from_entries(m.into_iter().map(|(k, v)| (LEMMAS[k], v))).unwrap(),
    )
}

proptest! {
    #[test]
    fn dataset_round_trip(examples in proptest::collection::vec(example(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        corpus::write_dataset(&examples, &path).unwrap();
        prop_assert_eq!(corpus::read_dataset(&path).unwrap(), examples);
    }

    #[test]
    fn conllu_indices_are_plain_and_increasing(ranges in proptest::collection::vec(any::<bool>(), 1..8)) {
        // every word may be preceded by a multiword range and followed by an empty node
        let mut raw = String::from("# sent_id = p\n");
        for (i, &extra) in ranges.iter().enumerate() {
            let id = i + 1;
            if extra {
                raw.push_str(&format!("{id}-{id}\tx\t_\t_\t_\t_\t_\t_\t_\t_\n"));
            }
            raw.push_str(&format!("{id}\tw{id}\tw\tNOUN\t_\t_\t0\troot\t_\t_\n"));
            if extra {
                raw.push_str(&format!("{id}.1\te\te\tNOUN\t_\t_\t_\t_\t_\t_\n"));
            }
        }
        let sents = corpus::parse_conllu(&raw).unwrap();
        prop_assert_eq!(sents.len(), 1);
        let idx: Vec<usize> = sents[0].tokens.iter().map(|t| t.index).collect();
        prop_assert_eq!(idx, (1..=ranges.len()).collect::<Vec<_>>());
    }

    #[test]
    fn matching_draws_only_lexicon_scores(s in sentence(), lex in lexicon()) {
        let m = match_sentence(&s, &lex);
        prop_assert!(m.len() <= s.tokens.len());
        prop_assert!(m.windows(2).all(|w| w[0].token_index < w[1].token_index));
        for hit in &m {
            prop_assert_eq!(Some(hit.score), lex.get(&hit.lemma));
        }
        prop_assert_eq!(match_sentence(&s, &lex), m);
    }

    #[test]
    fn confusion_metrics_are_consistent(pairs in proptest::collection::vec((label(), label()), 1..40)) {
        let (golds, preds): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
        let (report, cm) = eval::evaluate(&golds, &preds).unwrap();
        prop_assert_eq!(cm.total(), golds.len());
        let accuracy = golds.iter().zip(&preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64;
        prop_assert!((report.micro_f1 - accuracy).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&report.macro_f1));
        for prf in report.per_class {
            prop_assert!([prf.precision, prf.recall, prf.f1].iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}

/// Answers by sentence suffix and finishes in a scrambled order.
struct Scripted;

impl Backend for Scripted {
    fn send(&self, payload: &PromptPayload) -> Result<String, BackendError> {
        let t = &payload.target_text;
        let n: u64 = t
            .trim_start_matches(|c: char| !c.is_ascii_digit())
            .parse()
            .unwrap();
        thread::sleep(Duration::from_micros((n * 7919) % 500));
        match n % 5 {
            0 => Err(BackendError::Fatal("refused".into())),
            1 => Ok("label: joyful\nexplanation: off list".into()),
            _ => Ok(format!(
                "label: {}\nexplanation: item {n}",
                Label::from_index(n as usize % 4).unwrap()
            )),
        }
    }
}

fn template() -> PromptTemplate {
    let shots: Vec<(String, Label)> = Label::ALL
        .iter()
        .map(|&l| (format!("shot {l}"), l))
        .collect();
    PromptTemplate::new("classify", &shots, "m").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_accounting_and_order(n in 0usize..30, cap in 0.0f64..0.5, in_flight in 1usize..6) {
        let sentences: Vec<String> = (0..n).map(|i| format!("sententia {i}")).collect();
        let config = ClientConfig {
            max_in_flight: in_flight,
            max_retries: 0,
            ..ClientConfig::default()
        };
        let budget = Budget::new(cap, 0.03, 0.06).unwrap();
        let out = annotate_batch(&sentences, &template(), &Scripted, budget, &config).unwrap();
        prop_assert_eq!(out.examples.len() + out.rejected + out.skipped_for_budget, n);
        prop_assert!(out.budget.spent <= cap);
        prop_assert!(out.budget.spent >= 0.0);
        let positions: Vec<usize> = out
            .examples
            .iter()
            .map(|e| sentences.iter().position(|s| *s == e.text).unwrap())
            .collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        // skipped sentences form a suffix of the input
        prop_assert!(positions.iter().all(|&p| p < n - out.skipped_for_budget));
    }
}
