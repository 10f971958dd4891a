//! Miniature transformer encoder with stackable bottleneck adapters, a
//! masked-language-model head and a four-way classification head. All
//! arithmetic is 64-bit and deterministic.

mod encoder;
pub mod linalg;
mod params;
mod vocab;

use rand::Rng;

pub use encoder::{
    adapter_activation_pattern, adapter_forward, ce_loss, classify, encode, gradients, loss, Batch,
    Classification, Grads, MaskedExample,
};
pub use params::{
    names, AdapterKey, AdapterParams, AdapterRef, AdapterStackSpec, ModelConfig, ParamStore, Site,
    Tensor, INIT_RANGE,
};
pub use vocab::{build_vocab, tokenize, Vocab, CLS, MASK, PAD, SPECIALS, UNK};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Default masking rate for the language-adapter objective.
pub const MASK_PROB: f64 = 0.15;

/// Select positions after `[CLS]` with probability `mask_prob` (at least one
/// per sequence of two or more tokens) and corrupt them: 80% become
/// `[MASK]`, 10% a random non-special token, 10% are left unchanged.
pub fn mask_tokens<R: Rng>(
    ids: &[usize],
    vocab_size: usize,
    mask_prob: f64,
    rng: &mut R,
) -> MaskedExample {
    let mut input = ids.to_vec();
    let mut selected: Vec<usize> = (1..ids.len())
        .filter(|_| rng.gen::<f64>() < mask_prob)
        .collect();
    if selected.is_empty() && ids.len() > 1 {
        selected.push(rng.gen_range(1..ids.len()));
    }
    let mut targets = Vec::with_capacity(selected.len());
    for pos in selected {
        targets.push((pos, ids[pos]));
        let r: f64 = rng.gen();
        if r < 0.8 {
            input[pos] = MASK;
        } else if r < 0.9 {
            input[pos] = if vocab_size > SPECIALS.len() {
                rng.gen_range(SPECIALS.len()..vocab_size)
            } else {
                MASK
            };
        }
    }
    MaskedExample { input, targets }
}

pub fn mask_batch<R: Rng>(
    batch: &[Vec<usize>],
    vocab_size: usize,
    mask_prob: f64,
    rng: &mut R,
) -> Vec<MaskedExample> {
    batch
        .iter()
        .map(|ids| mask_tokens(ids, vocab_size, mask_prob, rng))
        .collect()
}

/// Mean masked-token cross-entropy over a freshly corrupted batch.
pub fn mlm_loss<R: Rng>(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    batch: &[Vec<usize>],
    mask_prob: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::invalid(format!(
            "mask probability {mask_prob} outside (0, 1)"
        )));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let masked = mask_batch(batch, config.vocab_size, mask_prob, rng);
    loss(params, config, stack, Batch::Mlm(&masked))
}

/// Decode independent positive/negative probabilities into one label: both
/// low is neutral, both high is mixed, otherwise the one above threshold.
pub fn decode_dual(p_pos: f64, p_neg: f64, threshold: f64) -> Label {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    match (p_pos >= threshold, p_neg >= threshold) {
        (true, true) => Label::Mixed,
        (false, false) => Label::Neutral,
        (true, false) => Label::Positive,
        (false, true) => Label::Negative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn dual_decoder_quadrants() {
        assert_eq!(decode_dual(0.9, 0.9, 0.5), Label::Mixed);
        assert_eq!(decode_dual(0.1, 0.1, 0.5), Label::Neutral);
        assert_eq!(decode_dual(0.9, 0.2, 0.5), Label::Positive);
        assert_eq!(decode_dual(0.2, 0.9, 0.5), Label::Negative);
        assert_eq!(decode_dual(0.5, 0.49, 0.5), Label::Positive);
    }

    #[test]
    fn masking_selects_at_least_one_and_never_cls() {
        let mut r = rng::stream(0, "mask");
        for _ in 0..200 {
            let ex = mask_tokens(&[CLS, 4, 5, 6], 10, 0.15, &mut r);
            assert!(!ex.targets.is_empty());
            assert!(ex.targets.iter().all(|&(p, _)| p >= 1));
            assert_eq!(ex.input[0], CLS);
        }
        assert!(mask_tokens(&[CLS], 10, 0.15, &mut r).targets.is_empty());
    }

    #[test]
    fn corruption_mix_is_roughly_80_10_10() {
        let mut r = rng::stream(1, "mix");
        let ids: Vec<usize> = std::iter::once(CLS)
            .chain(std::iter::repeat(4).take(63))
            .collect();
        let (mut masked, mut kept, mut total) = (0, 0, 0);
        for _ in 0..300 {
            let ex = mask_tokens(&ids, 1000, 0.15, &mut r);
            for &(p, orig) in &ex.targets {
                total += 1;
                if ex.input[p] == MASK {
                    masked += 1;
                } else if ex.input[p] == orig {
                    kept += 1;
                }
            }
        }
        let frac = |c: usize| c as f64 / total as f64;
        assert!((frac(masked) - 0.8).abs() < 0.03, "{}", frac(masked));
        assert!((frac(kept) - 0.1).abs() < 0.03, "{}", frac(kept));
    }

    #[test]
    fn mlm_loss_is_positive_and_reproducible() {
        let cfg = ModelConfig {
            vocab_size: 20,
            ..Default::default()
        };
        let p = ParamStore::init(&cfg).unwrap();
        let batch = vec![vec![CLS, 4, 5, 6, 7], vec![CLS, 8, 9]];
        let stack = AdapterStackSpec::of(&[AdapterKey::Language]);
        let a = mlm_loss(
            &p,
            &cfg,
            &stack,
            &batch,
            MASK_PROB,
            &mut rng::stream(5, "m"),
        )
        .unwrap();
        let b = mlm_loss(
            &p,
            &cfg,
            &stack,
            &batch,
            MASK_PROB,
            &mut rng::stream(5, "m"),
        )
        .unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(mlm_loss(&p, &cfg, &stack, &[], MASK_PROB, &mut rng::stream(5, "m")).is_err());
        assert!(mlm_loss(&p, &cfg, &stack, &batch, 1.0, &mut rng::stream(5, "m")).is_err());
    }
}
