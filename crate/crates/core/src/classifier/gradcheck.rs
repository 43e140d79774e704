//! Central-difference verification of the hand-written backward pass.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cnn::{self, CnnModel};
use super::ClassifierError;
use crate::sensing::{TactileWindow, NUM_CLASSES};

/// Something with a flat parameter vector, a scalar loss and its gradient.
pub trait Differentiable {
    fn params_mut(&mut self) -> &mut [f64];
    /// Parameter groups; the checked subset draws from every group.
    fn groups(&self) -> Vec<Range<usize>>;
    fn loss(&self, x: &[f32], label: usize) -> f64;
    fn gradient(&self, x: &[f32], label: usize) -> Vec<f64>;
    /// Changes whenever the evaluation crosses a ReLU or max-pool kink.
    fn signature(&self, x: &[f32]) -> u64;
}

impl Differentiable for CnnModel<f64> {
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn groups(&self) -> Vec<Range<usize>> {
        cnn::layer_ranges()
    }
    fn loss(&self, x: &[f32], label: usize) -> f64 {
        CnnModel::loss(self, x, label)
    }
    fn gradient(&self, x: &[f32], label: usize) -> Vec<f64> {
        let mut g = vec![0.0; cnn::PARAM_COUNT];
        self.accumulate_gradient(x, label, &mut g);
        g
    }
    fn signature(&self, x: &[f32]) -> u64 {
        self.activation_signature(x)
    }
}

/// Dense-only network `in → hidden (ReLU) → 12`, used to check the dense
/// layers in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl DenseHead {
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = hidden * inputs + hidden + NUM_CLASSES * hidden + NUM_CLASSES;
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).unwrap();
        let params = (0..n).map(|_| normal.sample(&mut rng)).collect();
        Self { inputs, hidden, params }
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.hidden * self.inputs;
        let b = a + self.hidden;
        let c = b + NUM_CLASSES * self.hidden;
        [a, b, c, c + NUM_CLASSES]
    }

    fn forward(&self, x: &[f32]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [a, b, c, d] = self.offsets();
        let x: Vec<f64> = x.iter().map(|v| *v as f64).collect();
        let mut h = cnn::dense_forward(&x, &self.params[..a], &self.params[a..b], self.hidden);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = cnn::dense_forward(&h, &self.params[b..c], &self.params[c..d], NUM_CLASSES);
        (x, h, cnn::softmax(&logits))
    }
}

impl Differentiable for DenseHead {
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn groups(&self) -> Vec<Range<usize>> {
        let [a, b, c, d] = self.offsets();
        vec![0..a, a..b, b..c, c..d]
    }
    fn loss(&self, x: &[f32], label: usize) -> f64 {
        -self.forward(x).2[label].ln()
    }
    fn gradient(&self, x: &[f32], label: usize) -> Vec<f64> {
        let [a, b, c, _] = self.offsets();
        let (xin, h, mut d) = self.forward(x);
        d[label] -= 1.0;
        let mut g = vec![0.0; self.params.len()];
        let (g1, rest) = g.split_at_mut(a);
        let (g1b, rest) = rest.split_at_mut(b - a);
        let (g2, g2b) = rest.split_at_mut(c - b);
        let mut dh = cnn::dense_backward(&h, &d, &self.params[b..c], g2, g2b);
        for (dv, hv) in dh.iter_mut().zip(&h) {
            if *hv <= 0.0 {
                *dv = 0.0;
            }
        }
        cnn::dense_backward(&xin, &dh, &self.params[..a], g1, g1b);
        g
    }
    fn signature(&self, x: &[f32]) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.forward(x).1 {
            (v > 0.0).hash(&mut h);
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose ±ε evaluations straddled a kink.
    pub skipped: usize,
    /// Checked parameters per group.
    pub per_group: Vec<usize>,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic gradients of the summed loss over `samples` with
/// central differences on `count` parameters spread evenly over the groups.
pub fn grad_check<M: Differentiable>(
    model: &mut M,
    samples: &[TactileWindow],
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport, ClassifierError> {
    if samples.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    if !(epsilon > 0.0) {
        return Err(ClassifierError::InvalidConfig(format!("epsilon {epsilon} must be > 0")));
    }
    let labels: Vec<usize> = samples
        .iter()
        .map(|w| w.label.map(|l| l as usize).ok_or(ClassifierError::Unlabeled))
        .collect::<Result<_, _>>()?;
    let total_loss = |m: &M| samples.iter().zip(&labels).map(|(w, &l)| m.loss(&w.data, l)).sum::<f64>();
    let signatures = |m: &M| samples.iter().map(|w| m.signature(&w.data)).collect::<Vec<_>>();

    let mut analytic = vec![0.0; 0];
    for (w, &l) in samples.iter().zip(&labels) {
        let g = model.gradient(&w.data, l);
        if analytic.is_empty() {
            analytic = g;
        } else {
            analytic.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = model.groups();
    let quota = allocate(&groups, count);
    let base_sig = signatures(model);
    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, skipped: 0, per_group: Vec::new() };
    for (g, q) in groups.into_iter().zip(quota) {
        let mut n = 0;
        for i in cnn::sample_indices(g, q, &mut rng) {
            let orig = model.params_mut()[i];
            model.params_mut()[i] = orig + epsilon;
            let (lp, sp) = (total_loss(model), signatures(model));
            model.params_mut()[i] = orig - epsilon;
            let (lm, sm) = (total_loss(model), signatures(model));
            model.params_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            report.max_relative_error = report.max_relative_error.max(relative_error(analytic[i], numeric));
            n += 1;
        }
        report.checked += n;
        report.per_group.push(n);
    }
    Ok(report)
}

/// Splits `count` across groups as evenly as their sizes allow.
fn allocate(groups: &[Range<usize>], count: usize) -> Vec<usize> {
    let mut quota = vec![0; groups.len()];
    let mut left = count.min(groups.iter().map(|g| g.len()).sum());
    while left > 0 {
        for (q, g) in quota.iter_mut().zip(groups) {
            if left > 0 && *q < g.len() {
                *q += 1;
                left -= 1;
            }
        }
    }
    quota
}
