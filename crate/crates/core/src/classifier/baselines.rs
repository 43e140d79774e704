//! Non-convolutional baselines on flattened windows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{self, argmax, check_window};
use super::ClassifierError;
use crate::par;
use crate::sensing::{TactileWindow, NUM_CLASSES, WINDOW_LEN};

fn check_sets(train: &[TactileWindow], test: &[TactileWindow]) -> Result<(), ClassifierError> {
    if train.is_empty() || test.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    train.iter().chain(test).try_for_each(check_window)
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// k-nearest-neighbour vote under Euclidean distance. Every training point
/// at or within the k-th smallest distance votes, so exact ties are never
/// broken by input order; equal vote counts go to the lowest class id.
pub fn knn_predict(train: &[TactileWindow], query: &[f32], k: usize) -> usize {
    let mut d: Vec<(f64, u8)> = train.iter().map(|w| (sq_dist(&w.data, query), w.label.unwrap_or(0))).collect();
    let k = k.min(d.len());
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let radius = kth.0;
    let mut votes = [0usize; NUM_CLASSES];
    for (dist, label) in &d {
        if *dist <= radius {
            votes[*label as usize] += 1;
        }
    }
    argmax(&votes)
}

pub fn knn_baseline(train: &[TactileWindow], test: &[TactileWindow], k: usize) -> Result<f64, ClassifierError> {
    check_sets(train, test)?;
    if k == 0 {
        return Err(ClassifierError::InvalidConfig("k must be ≥ 1".into()));
    }
    let hits = par::map_slice(test, |w| (knn_predict(train, &w.data, k) == w.label.unwrap() as usize) as usize);
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 30, batch_size: 32, l2: 1e-4, seed: 42 }
    }
}

/// Multinomial logistic regression on per-feature standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// `[class][feature]` followed by one bias per class.
    pub weights: Vec<f64>,
}

impl LogisticModel {
    fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (*v as f64 - m) * s).collect()
    }

    pub fn probabilities(&self, x: &[f32]) -> Vec<f64> {
        let z = self.standardize(x);
        let (w, b) = self.weights.split_at(NUM_CLASSES * WINDOW_LEN);
        cnn::softmax(&cnn::dense_forward(&z, w, b, NUM_CLASSES))
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.probabilities(x))
    }
}

pub fn train_logistic(train: &[TactileWindow], config: &LogisticConfig) -> Result<LogisticModel, ClassifierError> {
    if train.is_empty() {
        return Err(ClassifierError::EmptySet);
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 || !(config.l2 >= 0.0) {
        return Err(ClassifierError::InvalidConfig(format!("{config:?}")));
    }
    train.iter().try_for_each(check_window)?;
    let n = train.len() as f64;
    let mut mean = vec![0.0; WINDOW_LEN];
    for w in train {
        mean.iter_mut().zip(&w.data).for_each(|(m, v)| *m += *v as f64 / n);
    }
    let mut var = vec![0.0; WINDOW_LEN];
    for w in train {
        var.iter_mut().zip(&w.data).zip(&mean).for_each(|((s, v), m)| *s += (*v as f64 - m).powi(2) / n);
    }
    let inv_std = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let mut model = LogisticModel { mean, inv_std, weights: vec![0.0; NUM_CLASSES * (WINDOW_LEN + 1)] };
    let xs: Vec<Vec<f64>> = train.iter().map(|w| model.standardize(&w.data)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let split = NUM_CLASSES * WINDOW_LEN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.weights.len()];
            {
                let (gw, gb) = grad.split_at_mut(split);
                let (w, b) = model.weights.split_at(split);
                for &i in batch {
                    let mut d = cnn::softmax(&cnn::dense_forward(&xs[i], w, b, NUM_CLASSES));
                    d[train[i].label.unwrap() as usize] -= 1.0;
                    cnn::dense_backward(&xs[i], &d, w, gw, gb);
                }
            }
            let scale = config.learning_rate / batch.len() as f64;
            for (k, (p, g)) in model.weights.iter_mut().zip(&grad).enumerate() {
                let decay = if k < split { config.l2 * *p } else { 0.0 };
                *p -= scale * g + config.learning_rate * decay;
            }
        }
    }
    Ok(model)
}

pub fn logistic_baseline(
    train: &[TactileWindow],
    test: &[TactileWindow],
    config: &LogisticConfig,
) -> Result<f64, ClassifierError> {
    check_sets(train, test)?;
    let model = train_logistic(train, config)?;
    let hits = par::map_slice(test, |w| (model.predict(&w.data) == w.label.unwrap() as usize) as usize);
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}
