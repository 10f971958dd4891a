use std::collections::BTreeMap;

use crate::model::{Grads, ParamStore};

/// Adam with decoupled weight decay (set to zero here) and bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(learning_rate: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Update every tensor that has a gradient. Tensors without one are not
    /// touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p.data[i] -= self.learning_rate * (update + self.weight_decay * p.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gradients, AdapterStackSpec, Batch, ModelConfig, CLS};
    use crate::Label;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let cfg = ModelConfig {
            vocab_size: 8,
            ..Default::default()
        };
        let p = ParamStore::init(&cfg)
            .unwrap()
            .with_trainable(["cls_head.bias".to_string()].into());
        let batch = [(vec![CLS, 4], Label::Positive)];
        let (_, g) =
            gradients(&p, &cfg, &AdapterStackSpec::none(), Batch::Classify(&batch)).unwrap();
        let mut q = p.clone();
        AdamW::new(0.01).step(&mut q, &g);
        for (a, b) in p.data("cls_head.bias").iter().zip(q.data("cls_head.bias")) {
            assert!(((a - b).abs() - 0.01).abs() < 1e-6);
        }
        assert_eq!(p.data("cls_head.weight"), q.data("cls_head.weight"));
    }
}
