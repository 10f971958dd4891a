//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use latin_polarity::model::{
    adapter_activation_pattern, gradients, loss, AdapterStackSpec, Batch, ModelConfig, ParamStore,
};
use latin_polarity::rng;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const COORDS_PER_TENSOR: usize = 3;

/// Every tensor trainable, and the zero-initialized adapter up-projections
/// and biases moved off zero so every path carries gradient.
pub fn generic_point(config: &ModelConfig) -> ParamStore {
    let mut p = ParamStore::init(config).unwrap();
    let mut r = rng::stream(99, "jitter");
    for (name, t) in p.iter_mut() {
        if name.starts_with("adapter.") || name.ends_with("bias") || name.ends_with("beta") {
            t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
        }
        if name.ends_with("gamma") {
            t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.2..0.2));
        }
    }
    let all = p.names().map(str::to_string).collect();
    p.with_trainable(all)
}

pub struct Outcome {
    pub worst: f64,
    pub checked: usize,
    pub groups: usize,
    pub kink_redraws: usize,
}

pub fn check(
    config: &ModelConfig,
    params: &ParamStore,
    stack: &AdapterStackSpec,
    batch: Batch,
    inputs: &[Vec<usize>],
    tag: &str,
) -> Outcome {
    let pattern = |p: &ParamStore| -> Vec<Vec<bool>> {
        inputs
            .iter()
            .map(|ids| adapter_activation_pattern(p, config, stack, ids).unwrap())
            .collect()
    };
    let base_pattern = pattern(params);
    let (_, grads) = gradients(params, config, stack, batch).unwrap();
    let mut r = rng::stream(0, tag);
    let mut out = Outcome {
        worst: 0.0,
        checked: 0,
        groups: 0,
        kink_redraws: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name).numel();
        // tensors off the loss path (e.g. the MLM head under classification) are never touched
        let g = grads.get(name);
        out.groups += usize::from(g.is_some());
        let mut done = 0;
        while done < COORDS_PER_TENSOR {
            let i = r.gen_range(0..n);
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data[i] += STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data[i] -= STEP;
            if pattern(&plus) != base_pattern || pattern(&minus) != base_pattern {
                out.kink_redraws += 1;
                assert!(out.kink_redraws < 50, "too many kink crossings");
                continue;
            }
            let fd = (loss(&plus, config, stack, batch).unwrap()
                - loss(&minus, config, stack, batch).unwrap())
                / (2.0 * STEP);
            let analytic = g.map_or(0.0, |t| t.data[i]);
            let rel = ((analytic - fd) / fd.abs().max(1e-8)).abs();
            if rel >= TOL {
                eprintln!("{tag} {name}[{i}]: analytic {analytic:e} fd {fd:e} rel {rel:e}");
            }
            out.worst = out.worst.max(rel);
            out.checked += 1;
            done += 1;
        }
    }
    out
}

pub fn fd_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        seed: 0,
        ..Default::default()
    }
}
