//! Few-shot annotation through a chat-completion model.

mod backend;

use std::fmt::Write as _;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use backend::{Backend, BackendError, HttpBackend, ReplayBackend};

use crate::corpus::{AnnotatedExample, Label, Provenance};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TASK_DESCRIPTION: &str = "You will read a sentence written in Latin. \
Decide which emotion polarity it expresses: positive, negative, neutral (no emotion) \
or mixed (positive and negative at once). Annotated examples follow.";

/// A rendered request for a single target sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPayload {
    pub task_description: String,
    /// One example per label, in `Label::ALL` order.
    pub few_shots: Vec<(String, Label)>,
    pub target_text: String,
    pub model_name: String,
}

impl PromptPayload {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}\n", self.task_description.trim());
        for (text, label) in &self.few_shots {
            let _ = writeln!(s, "sentence: {text}\nlabel: {label}\n");
        }
        let _ = writeln!(s, "sentence: {}\n", self.target_text);
        s.push_str(
            "Answer with exactly two lines:\n\
             label: <positive, negative, neutral or mixed>\n\
             explanation: <a short justification>\n",
        );
        s
    }

    /// Whitespace-separated pieces of the rendered prompt.
    pub fn input_tokens(&self) -> usize {
        self.render().split_whitespace().count()
    }
}

/// Order `few_shots` by label, rejecting a missing or repeated label.
fn order_shots(few_shots: &[(String, Label)]) -> Result<Vec<(String, Label)>> {
    let mut slots: [Option<&String>; 4] = [None; 4];
    for (text, label) in few_shots {
        if slots[label.index()].replace(text).is_some() {
            return Err(Error::invalid(format!(
                "few-shot examples repeat label {label}"
            )));
        }
    }
    Label::ALL
        .iter()
        .map(|&l| match slots[l.index()] {
            Some(t) => Ok((t.clone(), l)),
            None => Err(Error::invalid(format!("few-shot examples lack label {l}"))),
        })
        .collect()
}

pub fn build_prompt(
    target_text: &str,
    few_shots: &[(String, Label)],
    task_description: &str,
    model_name: &str,
) -> Result<PromptPayload> {
    Ok(PromptPayload {
        task_description: task_description.to_string(),
        few_shots: order_shots(few_shots)?,
        target_text: target_text.to_string(),
        model_name: model_name.to_string(),
    })
}

/// The parts of a prompt shared by every sentence in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task_description: String,
    pub few_shots: Vec<(String, Label)>,
    pub model_name: String,
}

impl PromptTemplate {
    pub fn new(
        task_description: &str,
        few_shots: &[(String, Label)],
        model_name: &str,
    ) -> Result<Self> {
        Ok(PromptTemplate {
            task_description: task_description.to_string(),
            few_shots: order_shots(few_shots)?,
            model_name: model_name.to_string(),
        })
    }

    pub fn payload(&self, target_text: &str) -> PromptPayload {
        PromptPayload {
            task_description: self.task_description.clone(),
            few_shots: self.few_shots.clone(),
            target_text: target_text.to_string(),
            model_name: self.model_name.clone(),
        }
    }
}

/// First gold example of each label.
pub fn few_shots_from_gold(gold: &[AnnotatedExample]) -> Result<Vec<(String, Label)>> {
    let mut shots = Vec::with_capacity(4);
    for label in Label::ALL {
        let ex = gold.iter().find(|e| e.label == label).ok_or_else(|| {
            Error::invalid(format!("gold annotations contain no {label} example"))
        })?;
        shots.push((ex.text.clone(), label));
    }
    Ok(shots)
}

/// `n` sentences drawn without replacement, kept in their original order.
pub fn sample_sentences(texts: &[String], n: usize, seed: u64) -> Vec<String> {
    if n >= texts.len() {
        return texts.to_vec();
    }
    let mut r = rng::stream(seed, "llm/sample");
    let mut picked = index::sample(&mut r, texts.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| texts[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmVerdict {
    pub raw: String,
    /// `None` when the response carries no valid label.
    pub label: Option<Label>,
    pub explanation: Option<String>,
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let head = line.get(..key.len())?;
    head.eq_ignore_ascii_case(key).then(|| &line[key.len()..])
}

pub fn parse_response(raw: &str) -> LlmVerdict {
    let mut label = None;
    let mut seen_label = false;
    let mut explanation = None;
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if !seen_label {
            if let Some(v) = strip_key(line, "label:") {
                seen_label = true;
                label = v.trim().to_ascii_lowercase().parse().ok();
                continue;
            }
        }
        if let Some(v) = strip_key(line, "explanation:") {
            let rest: Vec<&str> = std::iter::once(v).chain(lines.by_ref()).collect();
            let text = rest.join("\n").trim().to_string();
            explanation = (!text.is_empty()).then_some(text);
            break;
        }
    }
    LlmVerdict {
        raw: raw.to_string(),
        label,
        explanation,
    }
}

pub fn estimate_cost(
    payload: &PromptPayload,
    response_tokens: usize,
    price_in_per_1k: f64,
    price_out_per_1k: f64,
) -> f64 {
    token_cost(
        payload.input_tokens(),
        response_tokens,
        price_in_per_1k,
        price_out_per_1k,
    )
}

fn token_cost(input: usize, output: usize, price_in: f64, price_out: f64) -> f64 {
    input as f64 / 1000.0 * price_in + output as f64 / 1000.0 * price_out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub cap: f64,
    pub price_in_per_1k: f64,
    pub price_out_per_1k: f64,
    #[serde(default)]
    pub spent: f64,
}

impl Budget {
    pub fn new(cap: f64, price_in_per_1k: f64, price_out_per_1k: f64) -> Result<Self> {
        if !(cap >= 0.0 && price_in_per_1k >= 0.0 && price_out_per_1k >= 0.0) {
            return Err(Error::Config(
                "budget cap and prices must be non-negative".into(),
            ));
        }
        Ok(Budget {
            cap,
            price_in_per_1k,
            price_out_per_1k,
            spent: 0.0,
        })
    }

    pub fn remaining(&self) -> f64 {
        self.cap - self.spent
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint_url: String,
    pub api_key_env_var: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Output tokens assumed per response when reserving budget; also sent
    /// as the completion length limit.
    pub response_token_estimate: usize,
    pub timeout_secs: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            max_in_flight: 4,
            max_retries: 3,
            backoff_base_ms: 1000,
            response_token_estimate: 128,
            timeout_secs: 60,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub examples: Vec<AnnotatedExample>,
    /// Invalid labels plus requests abandoned after retries.
    pub rejected: usize,
    /// Sentences never sent because the budget would have been exceeded.
    pub skipped_for_budget: usize,
    pub budget: Budget,
}

struct Dispatch {
    next: usize,
    reserved: f64,
    stopped: bool,
}

struct Settled {
    index: usize,
    verdict: Option<LlmVerdict>,
    cost: f64,
}

fn send_with_retries(
    backend: &dyn Backend,
    payload: &PromptPayload,
    config: &ClientConfig,
) -> Option<String> {
    let mut attempt = 0;
    loop {
        match backend.send(payload) {
            Ok(raw) => return Some(raw),
            Err(BackendError::Fatal(_)) => return None,
            Err(BackendError::Throttled(_) | BackendError::Transport(_))
                if attempt < config.max_retries =>
            {
                thread::sleep(config.backoff(attempt));
                attempt += 1;
            }
            Err(_) => return None,
        }
    }
}

/// Annotate `sentences` in order until done or until the next request's
/// estimated cost no longer fits the budget.
///
/// Each request reserves its full estimate before dispatch and is charged
/// its input cost plus its output cost capped at the estimate, so the final
/// spend never exceeds the reservations.
pub fn annotate_batch(
    sentences: &[String],
    template: &PromptTemplate,
    backend: &dyn Backend,
    budget: Budget,
    config: &ClientConfig,
) -> Result<BatchOutcome> {
    config.validate()?;
    if budget.spent > budget.cap {
        return Err(Error::invalid("budget already exceeds its cap"));
    }
    let dispatch = Mutex::new(Dispatch {
        next: 0,
        reserved: 0.0,
        stopped: false,
    });
    let settled = Mutex::new(Vec::with_capacity(sentences.len()));
    let workers = config.max_in_flight.min(sentences.len().max(1));
    let est_out = config.response_token_estimate;
    let (p_in, p_out) = (budget.price_in_per_1k, budget.price_out_per_1k);

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let (i, payload) = {
                    let mut d = dispatch.lock().expect("dispatch lock");
                    if d.stopped || d.next >= sentences.len() {
                        return;
                    }
                    let payload = template.payload(&sentences[d.next]);
                    let est = estimate_cost(&payload, est_out, p_in, p_out);
                    if budget.spent + d.reserved + est > budget.cap {
                        d.stopped = true;
                        return;
                    }
                    d.reserved += est;
                    d.next += 1;
                    (d.next - 1, payload)
                };
                let result = match send_with_retries(backend, &payload, config) {
                    Some(raw) => {
                        let out = raw.split_whitespace().count().min(est_out);
                        let cost = token_cost(payload.input_tokens(), out, p_in, p_out);
                        Settled {
                            index: i,
                            verdict: Some(parse_response(&raw)),
                            cost,
                        }
                    }
                    None => Settled {
                        index: i,
                        verdict: None,
                        cost: 0.0,
                    },
                };
                settled.lock().expect("settled lock").push(result);
            });
        }
    });

    let mut settled = settled.into_inner().expect("settled lock");
    settled.sort_by_key(|r| r.index);
    let dispatched = settled.len();
    let mut budget = budget;
    let mut examples = Vec::new();
    let mut rejected = 0;
    for r in settled {
        budget.spent += r.cost;
        match r.verdict {
            Some(LlmVerdict {
                label: Some(label),
                explanation,
                ..
            }) => examples.push(AnnotatedExample {
                text: sentences[r.index].clone(),
                label,
                provenance: Provenance::Llm,
                explanation,
                mean_score: None,
            }),
            _ => rejected += 1,
        }
    }
    Ok(BatchOutcome {
        examples,
        rejected,
        skipped_for_budget: sentences.len() - dispatched,
        budget,
    })
}
