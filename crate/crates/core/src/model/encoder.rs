//! Forward and reverse passes of the encoder, its adapters and both heads.
//!
//! Each layer is post-norm: `LN(x + Attn(x))`, the adapter stack, then
//! `LN(s + FFN(s))` and the adapter stack again. Gradients are derived by
//! hand for every block and are only materialized for trainable tensors.

use std::collections::BTreeMap;

use super::linalg::{
    add_assign, add_col_sums, add_matmul_at, add_row_bias, dot, log_sum_exp, matmul, matmul_bt,
    softmax_in_place,
};
use super::params::{
    names, AdapterParams, AdapterRef, AdapterStackSpec, ModelConfig, ParamStore, Site, Tensor,
};
use super::vocab::CLS;
use crate::corpus::Label;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Gradients keyed by parameter name. Frozen tensors never appear.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    tensors: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .values()
            .map(Tensor::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

struct Sink<'a> {
    params: &'a ParamStore,
    grads: &'a mut Grads,
}

impl Sink<'_> {
    fn slot(&mut self, name: &str) -> Option<&mut [f64]> {
        if !self.params.trainable.contains(name) {
            return None;
        }
        let shape = &self.params.get(name).shape;
        Some(
            &mut self
                .grads
                .tensors
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(shape))
                .data,
        )
    }
}

fn linear(x: &[f64], n: usize, w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let mut y = matmul(x, w, n, din, dout);
    add_row_bias(&mut y, b);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    sink: &mut Sink,
    x: &[f64],
    dy: &[f64],
    n: usize,
    weight: &str,
    bias: &str,
    din: usize,
    dout: usize,
) -> Vec<f64> {
    if let Some(g) = sink.slot(weight) {
        add_matmul_at(g, x, dy, n, din, dout);
    }
    if let Some(g) = sink.slot(bias) {
        add_col_sums(g, dy, dout);
    }
    matmul_bt(dy, sink.params.data(weight), n, dout, din)
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormCache) {
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * inv;
            xhat.push(h);
            y.push(gamma[j] * h + beta[j]);
        }
    }
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    sink: &mut Sink,
    dy: &[f64],
    cache: &NormCache,
    d: usize,
    gamma: &str,
    beta: &str,
) -> Vec<f64> {
    if let Some(g) = sink.slot(gamma) {
        for (dyr, xr) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for j in 0..d {
                g[j] += dyr[j] * xr[j];
            }
        }
    }
    if let Some(g) = sink.slot(beta) {
        add_col_sums(g, dy, d);
    }
    let gamma = sink.params.data(gamma);
    let mut dx = Vec::with_capacity(dy.len());
    for ((dyr, xr), &inv) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(&cache.inv_std)
    {
        let dxhat: Vec<f64> = dyr.iter().zip(gamma).map(|(a, g)| a * g).collect();
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xr) / d as f64;
        for j in 0..d {
            dx.push(inv * (dxhat[j] - mean_d - xr[j] * mean_dx));
        }
    }
    dx
}

struct AdapterCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

fn adapter_rows(x: &[f64], n: usize, d: usize, a: AdapterRef) -> (Vec<f64>, AdapterCache) {
    let pre = linear(x, n, a.down_weight, a.down_bias, d, a.dim);
    let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mut y = linear(&act, n, a.up_weight, a.up_bias, a.dim, d);
    add_assign(&mut y, x);
    (
        y,
        AdapterCache {
            input: x.to_vec(),
            pre,
            act,
        },
    )
}

/// Residual bottleneck adapter on a single vector:
/// `x + relu(x·W_down + b_down)·W_up + b_up`.
pub fn adapter_forward(x: &[f64], a: &AdapterParams) -> Result<Vec<f64>> {
    let (d, k) = (a.d_model, a.dim);
    if x.len() != d
        || a.down_weight.len() != d * k
        || a.down_bias.len() != k
        || a.up_weight.len() != k * d
        || a.up_bias.len() != d
    {
        return Err(Error::Shape(format!(
            "adapter d_model={d} dim={k} applied to a vector of length {}",
            x.len()
        )));
    }
    Ok(adapter_rows(x, 1, d, a.as_ref()).0)
}

struct AttentionCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × n × n
    probs: Vec<f64>,
    context: Vec<f64>,
}

struct FfnCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct LayerCache {
    attention: AttentionCache,
    norm1: NormCache,
    adapters1: Vec<AdapterCache>,
    ffn: FfnCache,
    norm2: NormCache,
    adapters2: Vec<AdapterCache>,
}

struct Forward {
    ids: Vec<usize>,
    hidden: Vec<f64>,
    layers: Vec<LayerCache>,
}

struct Encoder<'a> {
    params: &'a ParamStore,
    config: &'a ModelConfig,
    stack: &'a AdapterStackSpec,
}

impl Encoder<'_> {
    fn w(&self, l: usize, part: &str) -> &[f64] {
        self.params.data(&names::layer(l, part))
    }

    fn check(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "input of length {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn attention(&self, l: usize, x: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = linear(
            x,
            n,
            self.w(l, "attention.query.weight"),
            self.w(l, "attention.query.bias"),
            d,
            d,
        );
        let k = linear(
            x,
            n,
            self.w(l, "attention.key.weight"),
            self.w(l, "attention.key.bias"),
            d,
            d,
        );
        let v = linear(
            x,
            n,
            self.w(l, "attention.value.weight"),
            self.w(l, "attention.value.bias"),
            d,
            d,
        );

        let mut probs = vec![0.0; heads * n * n];
        let mut context = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + off..i * d + off + dh];
                for (j, p) in row.iter_mut().enumerate() {
                    *p = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_in_place(row);
                let ctx = &mut context[i * d + off..i * d + off + dh];
                for (j, &p) in row.iter().enumerate() {
                    for (c, &vv) in ctx.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *c += p * vv;
                    }
                }
            }
        }
        let out = linear(
            &context,
            n,
            self.w(l, "attention.output.weight"),
            self.w(l, "attention.output.bias"),
            d,
            d,
        );
        (
            out,
            AttentionCache {
                input: x.to_vec(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    fn attention_backward(
        &self,
        sink: &mut Sink,
        l: usize,
        dout: &[f64],
        c: &AttentionCache,
        n: usize,
    ) -> Vec<f64> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let name = |p: &str| names::layer(l, p);

        let dctx = linear_backward(
            sink,
            &c.context,
            dout,
            n,
            &name("attention.output.weight"),
            &name("attention.output.bias"),
            d,
            d,
        );
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let probs = &c.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + dh];
                for j in 0..n {
                    da[j] = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                    for (g, &x) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                        *g += probs[j] * x;
                    }
                }
                let weighted = dot(probs, &da);
                for j in 0..n {
                    let ds = probs[j] * (da[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * c.k[j * d + off + t];
                        dk[j * d + off + t] += ds * c.q[i * d + off + t];
                    }
                }
            }
        }
        let mut dx = linear_backward(
            sink,
            &c.input,
            &dq,
            n,
            &name("attention.query.weight"),
            &name("attention.query.bias"),
            d,
            d,
        );
        add_assign(
            &mut dx,
            &linear_backward(
                sink,
                &c.input,
                &dk,
                n,
                &name("attention.key.weight"),
                &name("attention.key.bias"),
                d,
                d,
            ),
        );
        add_assign(
            &mut dx,
            &linear_backward(
                sink,
                &c.input,
                &dv,
                n,
                &name("attention.value.weight"),
                &name("attention.value.bias"),
                d,
                d,
            ),
        );
        dx
    }

    fn ffn(&self, l: usize, x: &[f64], n: usize) -> (Vec<f64>, FfnCache) {
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let pre = linear(
            x,
            n,
            self.w(l, "ffn.up.weight"),
            self.w(l, "ffn.up.bias"),
            d,
            f,
        );
        let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let out = linear(
            &act,
            n,
            self.w(l, "ffn.down.weight"),
            self.w(l, "ffn.down.bias"),
            f,
            d,
        );
        (
            out,
            FfnCache {
                input: x.to_vec(),
                pre,
                act,
            },
        )
    }

    fn ffn_backward(
        &self,
        sink: &mut Sink,
        l: usize,
        dout: &[f64],
        c: &FfnCache,
        n: usize,
    ) -> Vec<f64> {
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let name = |p: &str| names::layer(l, p);
        let mut dact = linear_backward(
            sink,
            &c.act,
            dout,
            n,
            &name("ffn.down.weight"),
            &name("ffn.down.bias"),
            f,
            d,
        );
        for (g, &p) in dact.iter_mut().zip(&c.pre) {
            *g *= gelu_grad(p);
        }
        linear_backward(
            sink,
            &c.input,
            &dact,
            n,
            &name("ffn.up.weight"),
            &name("ffn.up.bias"),
            d,
            f,
        )
    }

    fn adapters(
        &self,
        l: usize,
        site: Site,
        mut x: Vec<f64>,
        n: usize,
    ) -> (Vec<f64>, Vec<AdapterCache>) {
        let mut caches = Vec::with_capacity(self.stack.keys().len());
        for &key in self.stack.keys() {
            let a = self.params.adapter(key, l, site, self.config.adapter_dim);
            let (y, c) = adapter_rows(&x, n, self.config.d_model, a);
            caches.push(c);
            x = y;
        }
        (x, caches)
    }

    fn adapters_backward(
        &self,
        sink: &mut Sink,
        l: usize,
        site: Site,
        mut dy: Vec<f64>,
        caches: &[AdapterCache],
        n: usize,
    ) -> Vec<f64> {
        let d = self.config.d_model;
        let k = self.config.adapter_dim;
        for (&key, c) in self.stack.keys().iter().zip(caches).rev() {
            let name = |p: &str| names::adapter(key, l, site, p);
            let mut dact = linear_backward(
                sink,
                &c.act,
                &dy,
                n,
                &name("up.weight"),
                &name("up.bias"),
                k,
                d,
            );
            for (g, &p) in dact.iter_mut().zip(&c.pre) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let dx = linear_backward(
                sink,
                &c.input,
                &dact,
                n,
                &name("down.weight"),
                &name("down.bias"),
                d,
                k,
            );
            add_assign(&mut dy, &dx);
        }
        dy
    }

    fn forward(&self, ids: &[usize]) -> Result<Forward> {
        self.check(ids)?;
        let d = self.config.d_model;
        let n = ids.len();
        let tok = self.params.data(names::TOKEN_EMBEDDING);
        let pos = self.params.data(names::POSITION_EMBEDDING);
        let mut h = Vec::with_capacity(n * d);
        for (i, &id) in ids.iter().enumerate() {
            h.extend(
                tok[id * d..(id + 1) * d]
                    .iter()
                    .zip(&pos[i * d..(i + 1) * d])
                    .map(|(a, b)| a + b),
            );
        }

        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (a, attention) = self.attention(l, &h, n);
            let mut u1 = h;
            add_assign(&mut u1, &a);
            let (r1, norm1) = layer_norm(
                &u1,
                d,
                self.w(l, "attention_norm.gamma"),
                self.w(l, "attention_norm.beta"),
            );
            let (s, adapters1) = self.adapters(l, Site::Attention, r1, n);
            let (f, ffn) = self.ffn(l, &s, n);
            let mut u2 = s;
            add_assign(&mut u2, &f);
            let (r2, norm2) = layer_norm(
                &u2,
                d,
                self.w(l, "ffn_norm.gamma"),
                self.w(l, "ffn_norm.beta"),
            );
            let (out, adapters2) = self.adapters(l, Site::Ffn, r2, n);
            layers.push(LayerCache {
                attention,
                norm1,
                adapters1,
                ffn,
                norm2,
                adapters2,
            });
            h = out;
        }
        Ok(Forward {
            ids: ids.to_vec(),
            hidden: h,
            layers,
        })
    }

    fn backward(&self, sink: &mut Sink, fwd: &Forward, dhidden: Vec<f64>) {
        let d = self.config.d_model;
        let n = fwd.ids.len();
        let mut dh = dhidden;
        for (l, c) in fwd.layers.iter().enumerate().rev() {
            let dr2 = self.adapters_backward(sink, l, Site::Ffn, dh, &c.adapters2, n);
            let du2 = layer_norm_backward(
                sink,
                &dr2,
                &c.norm2,
                d,
                &names::layer(l, "ffn_norm.gamma"),
                &names::layer(l, "ffn_norm.beta"),
            );
            let mut ds = self.ffn_backward(sink, l, &du2, &c.ffn, n);
            add_assign(&mut ds, &du2);
            let dr1 = self.adapters_backward(sink, l, Site::Attention, ds, &c.adapters1, n);
            let du1 = layer_norm_backward(
                sink,
                &dr1,
                &c.norm1,
                d,
                &names::layer(l, "attention_norm.gamma"),
                &names::layer(l, "attention_norm.beta"),
            );
            let mut dx = self.attention_backward(sink, l, &du1, &c.attention, n);
            add_assign(&mut dx, &du1);
            dh = dx;
        }
        if let Some(g) = sink.slot(names::TOKEN_EMBEDDING) {
            for (i, &id) in fwd.ids.iter().enumerate() {
                add_assign(&mut g[id * d..(id + 1) * d], &dh[i * d..(i + 1) * d]);
            }
        }
        if let Some(g) = sink.slot(names::POSITION_EMBEDDING) {
            add_assign(&mut g[..n * d], &dh);
        }
    }
}

/// Final hidden states, `len × d_model` row-major.
pub fn encode(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    ids: &[usize],
) -> Result<Vec<f64>> {
    Ok(Encoder {
        params,
        config,
        stack,
    }
    .forward(ids)?
    .hidden)
}

/// On/off state of every adapter ReLU unit, in forward order. Two parameter
/// settings with equal patterns lie in the same smooth region of the loss.
pub fn adapter_activation_pattern(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    ids: &[usize],
) -> Result<Vec<bool>> {
    let fwd = Encoder {
        params,
        config,
        stack,
    }
    .forward(ids)?;
    Ok(fwd
        .layers
        .iter()
        .flat_map(|l| l.adapters1.iter().chain(&l.adapters2))
        .flat_map(|c| c.pre.iter().map(|&z| z > 0.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub logits: [f64; 4],
    pub probs: [f64; 4],
}

impl Classification {
    /// Most probable label; ties go to the earlier label.
    pub fn label(&self) -> Label {
        let mut best = 0;
        for i in 1..4 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Label::from_index(best).expect("four classes")
    }
}

fn cls_logits(params: &ParamStore, config: &ModelConfig, hidden: &[f64]) -> [f64; 4] {
    let d = config.d_model;
    let w = params.data(names::CLS_WEIGHT);
    let b = params.data(names::CLS_BIAS);
    let h0 = &hidden[..d];
    std::array::from_fn(|c| dot(h0, &w[c * d..(c + 1) * d]) + b[c])
}

fn check_cls(ids: &[usize]) -> Result<()> {
    if ids.first() != Some(&CLS) {
        return Err(Error::invalid("classifier input must begin with [CLS]"));
    }
    Ok(())
}

pub fn classify(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    ids: &[usize],
) -> Result<Classification> {
    check_cls(ids)?;
    let hidden = encode(params, config, stack, ids)?;
    let logits = cls_logits(params, config, &hidden);
    let mut probs = logits;
    softmax_in_place(&mut probs);
    Ok(Classification { logits, probs })
}

/// `-log softmax(logits)[gold]` over all four classes.
pub fn ce_loss(logits: &[f64; 4], gold: Label) -> f64 {
    log_sum_exp(logits) - logits[gold.index()]
}

/// A corrupted sequence with the positions to predict and their original ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub input: Vec<usize>,
    pub targets: Vec<(usize, usize)>,
}

/// One training batch for either objective.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Classify(&'a [(Vec<usize>, Label)]),
    Mlm(&'a [MaskedExample]),
}

impl Batch<'_> {
    fn is_empty(&self) -> bool {
        match self {
            Batch::Classify(b) => b.is_empty(),
            Batch::Mlm(b) => b.iter().all(|e| e.targets.is_empty()),
        }
    }
}

fn run(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    batch: Batch,
    grads: Option<&mut Grads>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let enc = Encoder {
        params,
        config,
        stack,
    };
    let d = config.d_model;
    let mut scratch = Grads::default();
    let want = grads.is_some() && !params.trainable.is_empty();
    let mut sink = Sink {
        params,
        grads: &mut scratch,
    };
    let mut total = 0.0;
    let count;

    match batch {
        Batch::Classify(examples) => {
            count = examples.len();
            for (ids, gold) in examples {
                check_cls(ids)?;
                let fwd = enc.forward(ids)?;
                let logits = cls_logits(params, config, &fwd.hidden);
                total += ce_loss(&logits, *gold);
                if !want {
                    continue;
                }
                let mut dlogits = logits;
                softmax_in_place(&mut dlogits);
                dlogits[gold.index()] -= 1.0;
                if let Some(g) = sink.slot(names::CLS_WEIGHT) {
                    for c in 0..4 {
                        for j in 0..d {
                            g[c * d + j] += dlogits[c] * fwd.hidden[j];
                        }
                    }
                }
                if let Some(g) = sink.slot(names::CLS_BIAS) {
                    add_assign(g, &dlogits);
                }
                let w = params.data(names::CLS_WEIGHT);
                let mut dh = vec![0.0; fwd.hidden.len()];
                for c in 0..4 {
                    for j in 0..d {
                        dh[j] += dlogits[c] * w[c * d + j];
                    }
                }
                enc.backward(&mut sink, &fwd, dh);
            }
        }
        Batch::Mlm(examples) => {
            count = examples.iter().map(|e| e.targets.len()).sum();
            let v = config.vocab_size;
            let w = params.data(names::MLM_WEIGHT);
            let b = params.data(names::MLM_BIAS);
            for ex in examples.iter().filter(|e| !e.targets.is_empty()) {
                let fwd = enc.forward(&ex.input)?;
                let mut dh = vec![0.0; fwd.hidden.len()];
                for &(pos, target) in &ex.targets {
                    if pos >= ex.input.len() || target >= v {
                        return Err(Error::invalid(format!(
                            "masked target ({pos}, {target}) out of range"
                        )));
                    }
                    let h = &fwd.hidden[pos * d..(pos + 1) * d];
                    let mut logits = matmul(h, w, 1, d, v);
                    add_assign(&mut logits, b);
                    total += log_sum_exp(&logits) - logits[target];
                    if !want {
                        continue;
                    }
                    softmax_in_place(&mut logits);
                    logits[target] -= 1.0;
                    if let Some(g) = sink.slot(names::MLM_WEIGHT) {
                        add_matmul_at(g, h, &logits, 1, d, v);
                    }
                    if let Some(g) = sink.slot(names::MLM_BIAS) {
                        add_assign(g, &logits);
                    }
                    add_assign(
                        &mut dh[pos * d..(pos + 1) * d],
                        &matmul_bt(&logits, w, 1, v, d),
                    );
                }
                if want {
                    enc.backward(&mut sink, &fwd, dh);
                }
            }
        }
    }

    let inv = 1.0 / count as f64;
    if let Some(out) = grads {
        scratch.scale(inv);
        *out = scratch;
    }
    Ok(total * inv)
}

/// Mean loss of the batch.
pub fn loss(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    batch: Batch,
) -> Result<f64> {
    run(params, config, stack, batch, None)
}

/// Mean loss and its exact gradient with respect to every trainable tensor.
pub fn gradients(
    params: &ParamStore,
    config: &ModelConfig,
    stack: &AdapterStackSpec,
    batch: Batch,
) -> Result<(f64, Grads)> {
    let mut grads = Grads::default();
    let loss = run(params, config, stack, batch, Some(&mut grads))?;
    Ok((loss, grads))
}
