//! Two-layer convolutional network over 24 × 60 tactile windows.
//!
//! ```text
//! input 1×24×60
//!  conv 8@3×5 (same) → ReLU → maxpool 2×2      8×12×30
//!  conv 16@3×5 (same) → ReLU → maxpool 2×2    16×6×15
//!  flatten 1440 → dense 64 → ReLU → dense 12 → softmax
//! ```
//!
//! All parameters live in one flat vector so the optimizer, checkpoints and
//! gradient checks can treat the model uniformly.

use std::hash::{Hash, Hasher};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassifierError, Scalar};
use crate::par;
use crate::sensing::{TactileWindow, NUM_CLASSES, WINDOW_LEN, WINDOW_STEPS};
use crate::skin::CHANNELS;

pub const IN_H: usize = CHANNELS;
pub const IN_W: usize = WINDOW_STEPS;
pub const K_H: usize = 3;
pub const K_W: usize = 5;
const PAD_H: usize = K_H / 2;
const PAD_W: usize = K_W / 2;
pub const C1: usize = 8;
pub const C2: usize = 16;
pub const H1: usize = IN_H / 2;
pub const W1: usize = IN_W / 2;
pub const H2: usize = H1 / 2;
pub const W2: usize = W1 / 2;
pub const FLAT: usize = C2 * H2 * W2;
pub const HIDDEN: usize = 64;

/// Named parameter blocks in storage order.
pub const LAYERS: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[C1, 1, K_H, K_W]),
    ("conv1.bias", &[C1]),
    ("conv2.weight", &[C2, C1, K_H, K_W]),
    ("conv2.bias", &[C2]),
    ("fc1.weight", &[HIDDEN, FLAT]),
    ("fc1.bias", &[HIDDEN]),
    ("fc2.weight", &[NUM_CLASSES, HIDDEN]),
    ("fc2.bias", &[NUM_CLASSES]),
];

pub fn layer_ranges() -> Vec<Range<usize>> {
    let mut start = 0;
    LAYERS
        .iter()
        .map(|(_, dims)| {
            let n: usize = dims.iter().product();
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

pub const PARAM_COUNT: usize = C1 * K_H * K_W + C1 + C2 * C1 * K_H * K_W + C2 + HIDDEN * FLAT + HIDDEN + NUM_CLASSES * HIDDEN + NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<F> {
    pub params: Vec<F>,
    /// Multiplier applied to raw µT inputs.
    pub input_scale: F,
}

struct Slices<'a, F> {
    conv1_w: &'a [F],
    conv1_b: &'a [F],
    conv2_w: &'a [F],
    conv2_b: &'a [F],
    fc1_w: &'a [F],
    fc1_b: &'a [F],
    fc2_w: &'a [F],
    fc2_b: &'a [F],
}

fn split<F>(p: &[F]) -> Slices<'_, F> {
    let r = layer_ranges();
    Slices {
        conv1_w: &p[r[0].clone()],
        conv1_b: &p[r[1].clone()],
        conv2_w: &p[r[2].clone()],
        conv2_b: &p[r[3].clone()],
        fc1_w: &p[r[4].clone()],
        fc1_b: &p[r[5].clone()],
        fc2_w: &p[r[6].clone()],
        fc2_b: &p[r[7].clone()],
    }
}

/// Intermediate activations kept for backpropagation.
pub(crate) struct Cache<F> {
    input: Vec<F>,
    conv1: Vec<F>,
    pool1: Vec<F>,
    pool1_idx: Vec<u32>,
    conv2: Vec<F>,
    pool2: Vec<F>,
    pool2_idx: Vec<u32>,
    hidden: Vec<F>,
    pub(crate) probs: Vec<F>,
}

impl<F: Scalar> CnnModel<F> {
    pub fn zeros() -> Self {
        Self { params: vec![F::zero(); PARAM_COUNT], input_scale: F::one() }
    }

    /// He-normal weights, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![F::zero(); PARAM_COUNT];
        let fan_in = [K_H * K_W, 0, C1 * K_H * K_W, 0, FLAT, 0, HIDDEN, 0];
        for (r, fan) in layer_ranges().into_iter().zip(fan_in) {
            if fan == 0 {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("finite std");
            for p in &mut params[r] {
                *p = F::from_f64(normal.sample(&mut rng));
            }
        }
        Self { params, input_scale: F::one() }
    }

    pub fn cast<G: Scalar>(&self) -> CnnModel<G> {
        CnnModel {
            params: self.params.iter().map(|p| G::from_f64(p.to_f64_lossy())).collect(),
            input_scale: G::from_f64(self.input_scale.to_f64_lossy()),
        }
    }

    pub fn layer(&self, name: &str) -> Option<&[F]> {
        let idx = LAYERS.iter().position(|(n, _)| *n == name)?;
        Some(&self.params[layer_ranges()[idx].clone()])
    }

    pub(crate) fn forward_cached(&self, window: &[f32]) -> Cache<F> {
        let s = split(&self.params);
        let input: Vec<F> = window.iter().map(|v| F::from_f32(*v) * self.input_scale).collect();
        let mut conv1 = conv_forward(&input, 1, IN_H, IN_W, s.conv1_w, s.conv1_b, C1);
        relu(&mut conv1);
        let (pool1, pool1_idx) = maxpool(&conv1, C1, IN_H, IN_W);
        let mut conv2 = conv_forward(&pool1, C1, H1, W1, s.conv2_w, s.conv2_b, C2);
        relu(&mut conv2);
        let (pool2, pool2_idx) = maxpool(&conv2, C2, H1, W1);
        let mut hidden = dense_forward(&pool2, s.fc1_w, s.fc1_b, HIDDEN);
        relu(&mut hidden);
        let logits = dense_forward(&hidden, s.fc2_w, s.fc2_b, NUM_CLASSES);
        let probs = softmax(&logits);
        Cache { input, conv1, pool1, pool1_idx, conv2, pool2, pool2_idx, hidden, probs }
    }

    /// Class probabilities for one window.
    pub fn predict_raw(&self, window: &[f32]) -> Result<Vec<F>, ClassifierError> {
        if window.len() != WINDOW_LEN {
            return Err(ClassifierError::ShapeMismatch { expected: WINDOW_LEN, got: window.len() });
        }
        Ok(self.forward_cached(window).probs)
    }

    /// Penultimate (64-unit) activations, used as embedding features.
    pub fn features(&self, window: &[f32]) -> Vec<F> {
        self.forward_cached(window).hidden
    }

    /// Loss, analytic gradient (added into `grad`) for one sample.
    pub(crate) fn accumulate_gradient(&self, window: &[f32], label: usize, grad: &mut [F]) -> F {
        let cache = self.forward_cached(window);
        let s = split(&self.params);
        let r = layer_ranges();
        let loss = -(cache.probs[label].max(F::min_positive_value())).ln();

        let mut d_logits = cache.probs.clone();
        d_logits[label] = d_logits[label] - F::one();

        let (g_conv1_w, rest) = grad.split_at_mut(r[1].start);
        let (g_conv1_b, rest) = rest.split_at_mut(r[2].start - r[1].start);
        let (g_conv2_w, rest) = rest.split_at_mut(r[3].start - r[2].start);
        let (g_conv2_b, rest) = rest.split_at_mut(r[4].start - r[3].start);
        let (g_fc1_w, rest) = rest.split_at_mut(r[5].start - r[4].start);
        let (g_fc1_b, rest) = rest.split_at_mut(r[6].start - r[5].start);
        let (g_fc2_w, g_fc2_b) = rest.split_at_mut(r[7].start - r[6].start);

        let mut d_hidden = dense_backward(&cache.hidden, &d_logits, s.fc2_w, g_fc2_w, g_fc2_b);
        relu_backward(&cache.hidden, &mut d_hidden);
        let d_pool2 = dense_backward(&cache.pool2, &d_hidden, s.fc1_w, g_fc1_w, g_fc1_b);
        let mut d_conv2 = unpool(&d_pool2, &cache.pool2_idx, C2 * H1 * W1);
        relu_backward(&cache.conv2, &mut d_conv2);
        let d_pool1 = conv_backward(&cache.pool1, C1, H1, W1, s.conv2_w, &d_conv2, C2, g_conv2_w, g_conv2_b, true);
        let mut d_conv1 = unpool(&d_pool1, &cache.pool1_idx, C1 * IN_H * IN_W);
        relu_backward(&cache.conv1, &mut d_conv1);
        conv_backward(&cache.input, 1, IN_H, IN_W, s.conv1_w, &d_conv1, C1, g_conv1_w, g_conv1_b, false);
        loss
    }

    /// Summed loss and summed gradient over a batch.
    pub fn batch_gradient(&self, batch: &[&TactileWindow]) -> Result<(F, Vec<F>), ClassifierError> {
        const CHUNK: usize = 4;
        for w in batch {
            check_window(w)?;
        }
        let chunks: Vec<&[&TactileWindow]> = batch.chunks(CHUNK).collect();
        let partial = par::map_slice(&chunks, |chunk| {
            let mut g = vec![F::zero(); PARAM_COUNT];
            let mut loss = F::zero();
            for w in chunk.iter() {
                loss = loss + self.accumulate_gradient(&w.data, w.label.expect("checked") as usize, &mut g);
            }
            (loss, g)
        });
        let mut total = vec![F::zero(); PARAM_COUNT];
        let mut loss = F::zero();
        for (l, g) in partial {
            loss = loss + l;
            for (t, v) in total.iter_mut().zip(&g) {
                *t = *t + *v;
            }
        }
        Ok((loss, total))
    }

    /// Hash of every ReLU on/off state and pooling argmax; changes when a
    /// perturbation crosses a non-differentiable point.
    pub(crate) fn activation_signature(&self, window: &[f32]) -> u64 {
        let c = self.forward_cached(window);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in c.conv1.iter().chain(&c.conv2).chain(&c.hidden) {
            (*v > F::zero()).hash(&mut h);
        }
        c.pool1_idx.hash(&mut h);
        c.pool2_idx.hash(&mut h);
        h.finish()
    }

    pub(crate) fn loss(&self, window: &[f32], label: usize) -> F {
        let p = self.forward_cached(window).probs;
        -(p[label].max(F::min_positive_value())).ln()
    }
}

pub(crate) fn check_window(w: &TactileWindow) -> Result<(), ClassifierError> {
    if w.data.len() != WINDOW_LEN {
        return Err(ClassifierError::ShapeMismatch { expected: WINDOW_LEN, got: w.data.len() });
    }
    match w.label {
        Some(l) if (l as usize) < NUM_CLASSES => Ok(()),
        Some(l) => Err(ClassifierError::LabelOutOfRange(l)),
        None => Err(ClassifierError::Unlabeled),
    }
}

fn relu<F: Scalar>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

fn relu_backward<F: Scalar>(activated: &[F], grad: &mut [F]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= F::zero() {
            *g = F::zero();
        }
    }
}

pub(crate) fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
    let exps: Vec<F> = logits.iter().map(|v| (*v - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |s, v| s + *v);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Same-padded stride-1 convolution. Layout `[channel][row][col]`, weights
/// `[out][in][ky][kx]`.
fn conv_forward<F: Scalar>(input: &[F], in_c: usize, h: usize, w: usize, weight: &[F], bias: &[F], out_c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); out_c * h * w];
    for o in 0..out_c {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..K_H {
                for kx in 0..K_W {
                    let wt = weight[((o * in_c + i) * K_H + ky) * K_W + kx];
                    let (x0, x1) = col_range(kx, w);
                    for y in row_range(ky, h) {
                        let sy = y + ky - PAD_H;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - PAD_W..sy * w + x1 + kx - PAD_W];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d = *d + wt * *v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Scalar>(
    input: &[F],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[F],
    d_out: &[F],
    out_c: usize,
    g_weight: &mut [F],
    g_bias: &mut [F],
    want_input_grad: bool,
) -> Vec<F> {
    let mut d_in = if want_input_grad { vec![F::zero(); in_c * h * w] } else { Vec::new() };
    for o in 0..out_c {
        let dplane = &d_out[o * h * w..(o + 1) * h * w];
        g_bias[o] = dplane.iter().fold(g_bias[o], |s, v| s + *v);
        for i in 0..in_c {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..K_H {
                for kx in 0..K_W {
                    let widx = ((o * in_c + i) * K_H + ky) * K_W + kx;
                    let (x0, x1) = col_range(kx, w);
                    let mut acc = F::zero();
                    for y in row_range(ky, h) {
                        let sy = y + ky - PAD_H;
                        let d = &dplane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - PAD_W..sy * w + x1 + kx - PAD_W];
                        for (a, b) in d.iter().zip(s) {
                            acc = acc + *a * *b;
                        }
                    }
                    g_weight[widx] = g_weight[widx] + acc;
                    if want_input_grad {
                        let wt = weight[widx];
                        for y in row_range(ky, h) {
                            let sy = y + ky - PAD_H;
                            let d = &dplane[y * w + x0..y * w + x1];
                            let dst = &mut d_in[i * h * w + sy * w + x0 + kx - PAD_W..i * h * w + sy * w + x1 + kx - PAD_W];
                            for (t, v) in dst.iter_mut().zip(d) {
                                *t = *t + wt * *v;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Output rows whose source row `y + ky - PAD_H` is in bounds.
fn row_range(ky: usize, h: usize) -> Range<usize> {
    PAD_H.saturating_sub(ky)..(h + PAD_H - ky).min(h)
}

fn col_range(kx: usize, w: usize) -> (usize, usize) {
    (PAD_W.saturating_sub(kx), (w + PAD_W - kx).min(w))
}

fn maxpool<F: Scalar>(input: &[F], c: usize, h: usize, w: usize) -> (Vec<F>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = ch * h * w + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                    if input[k] > input[best] {
                        best = k;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

fn unpool<F: Scalar>(d_out: &[F], idx: &[u32], len: usize) -> Vec<F> {
    let mut d = vec![F::zero(); len];
    for (g, &k) in d_out.iter().zip(idx) {
        d[k as usize] = d[k as usize] + *g;
    }
    d
}

/// `out = W x + b` with `W` stored row-major `[out][in]`.
pub(crate) fn dense_forward<F: Scalar>(x: &[F], w: &[F], b: &[F], out_n: usize) -> Vec<F> {
    let n = x.len();
    (0..out_n)
        .map(|o| w[o * n..(o + 1) * n].iter().zip(x).fold(b[o], |s, (a, v)| s + *a * *v))
        .collect()
}

/// Accumulates `dW += d xᵀ`, `db += d`; returns `Wᵀ d`.
pub(crate) fn dense_backward<F: Scalar>(x: &[F], d: &[F], w: &[F], g_w: &mut [F], g_b: &mut [F]) -> Vec<F> {
    let n = x.len();
    let mut dx = vec![F::zero(); n];
    for (o, &dv) in d.iter().enumerate() {
        g_b[o] = g_b[o] + dv;
        if dv == F::zero() {
            continue;
        }
        let row = &w[o * n..(o + 1) * n];
        for ((g, xv), (dxv, wv)) in g_w[o * n..(o + 1) * n].iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
            *g = *g + dv * *xv;
            *dxv = *dxv + dv * *wv;
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global L2 bound on the batch-mean gradient; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, batch_size: 32, epochs: 10, seed: 42, max_grad_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub train_acc: Vec<f64>,
    /// Epoch mean of the per-batch mean cross-entropy.
    pub train_loss: Vec<f64>,
    pub test_acc: Vec<Option<f64>>,
}

impl TrainHistory {
    /// JSON-lines records `{epoch, train_acc, test_acc, loss}`, 1-based epochs.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, ((acc, loss), test)) in self.train_acc.iter().zip(&self.train_loss).zip(&self.test_acc).enumerate() {
            let rec = serde_json::json!({ "epoch": i + 1, "train_acc": acc, "test_acc": test, "loss": loss });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// 1 / standard deviation of every training value.
fn input_scale_for(train: &[TactileWindow]) -> f64 {
    let n = (train.len() * WINDOW_LEN) as f64;
    let mean = train.iter().flat_map(|w| &w.data).map(|v| *v as f64).sum::<f64>() / n;
    let var = train.iter().flat_map(|w| &w.data).map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}

/// Mini-batch SGD with momentum on mean cross-entropy. Deterministic given
/// `config.seed`; parallel gradient chunks are reduced in a fixed order.
pub fn train(
    train_set: &[TactileWindow],
    test_set: Option<&[TactileWindow]>,
    config: &TrainConfig,
) -> Result<(CnnModel<f32>, TrainHistory), ClassifierError> {
    train_with_callback(train_set, test_set, config, |_, _| {})
}

pub fn train_with_callback(
    train_set: &[TactileWindow],
    test_set: Option<&[TactileWindow]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainHistory),
) -> Result<(CnnModel<f32>, TrainHistory), ClassifierError> {
    if train_set.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(ClassifierError::InvalidConfig(format!(
            "learning rate {} must be > 0 and batch size {} ≥ 1",
            config.learning_rate, config.batch_size
        )));
    }
    if config.max_grad_norm.is_some_and(|c| !(c > 0.0)) {
        return Err(ClassifierError::InvalidConfig("max_grad_norm must be > 0".into()));
    }
    for w in train_set {
        check_window(w)?;
    }
    let mut model = CnnModel::<f32>::init(config.seed);
    model.input_scale = input_scale_for(train_set) as f32;
    let mut velocity = vec![0.0f32; PARAM_COUNT];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = TrainHistory::default();
    let lr = config.learning_rate as f32;
    let mu = config.momentum as f32;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&TactileWindow> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = model.batch_gradient(&batch)?;
            let mean_scale = 1.0 / batch.len() as f32;
            let norm = grad.iter().map(|g| (*g as f64 * mean_scale as f64).powi(2)).sum::<f64>().sqrt();
            let scale = match config.max_grad_norm {
                Some(clip) if norm > clip => mean_scale * (clip / norm) as f32,
                _ => mean_scale,
            };
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mu * *v - lr * *g * scale;
                *p += *v;
            }
            loss_sum += (loss * mean_scale) as f64;
            batches += 1;
        }
        history.train_loss.push(loss_sum / batches as f64);
        history.train_acc.push(accuracy(&model, train_set));
        history.test_acc.push(test_set.filter(|t| !t.is_empty()).map(|t| accuracy(&model, t)));
        on_epoch(epoch + 1, &history);
    }
    Ok((model, history))
}

fn accuracy<F: Scalar>(model: &CnnModel<F>, set: &[TactileWindow]) -> f64 {
    let hits = par::map_slice(set, |w| {
        let p = model.forward_cached(&w.data).probs;
        (argmax(&p) == w.label.map(|l| l as usize).unwrap_or(usize::MAX)) as usize
    });
    hits.iter().sum::<usize>() as f64 / set.len() as f64
}

pub fn argmax<F: PartialOrd + Copy>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Random index subset, used by tests and gradient checks.
pub(crate) fn sample_indices(range: Range<usize>, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = range.len();
    if count >= n {
        return range.collect();
    }
    rand::seq::index::sample(rng, n, count).into_iter().map(|i| range.start + i).collect()
}
