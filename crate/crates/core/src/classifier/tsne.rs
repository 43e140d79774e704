//! Exact t-SNE (O(N²) per iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 42,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// Perplexity of each conditional distribution after the bandwidth search.
    pub perplexities: Vec<f64>,
    /// KL(P‖Q) at the final iterate.
    pub kl_divergence: f64,
}

const MAX_N: usize = 3000;
const BISECT_STEPS: usize = 200;

/// Conditional row `p_{j|i}` at precision `beta`, and its perplexity.
fn conditional(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (p, d)) in row.iter_mut().zip(dist).enumerate() {
        *p = if j == i { 0.0 } else { (-beta * (d - dmin)).exp() };
        sum += *p;
    }
    let mut h = 0.0;
    for p in row.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            h -= *p * p.ln();
        }
    }
    h.exp()
}

/// Bisects the Gaussian precision of row `i` so its perplexity hits the
/// target. Perplexity is monotone decreasing in precision.
fn fit_row(dist: &[f64], i: usize, target: f64, row: &mut [f64]) -> f64 {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let spread = dist.iter().sum::<f64>() / (dist.len() - 1) as f64;
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let mut perp = conditional(dist, i, beta, row);
    for _ in 0..BISECT_STEPS {
        if (perp - target).abs() < 1e-6 {
            break;
        }
        if perp > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        perp = conditional(dist, i, beta, row);
    }
    perp
}

fn sq_dists(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map_slice(x, |a| x.iter().map(|b| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()).collect())
}

/// Symmetrized joint probabilities and the per-point achieved perplexities.
pub fn joint_probabilities(features: &[Vec<f64>], perplexity: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = features.len();
    let dist = sq_dists(features);
    let rows = par::map_range(n, |i| {
        let mut row = vec![0.0; n];
        let perp = fit_row(&dist[i], i, perplexity, &mut row);
        (row, perp)
    });
    let perps = rows.iter().map(|r| r.1).collect();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = ((rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i][i] = 0.0;
    }
    (p, perps)
}

pub fn tsne_embed(features: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult, ClassifierError> {
    let n = features.len();
    if n < 5 {
        return Err(ClassifierError::InvalidConfig(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if n > MAX_N {
        return Err(ClassifierError::InvalidConfig(format!("exact t-SNE limited to {MAX_N} points, got {n}")));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(ClassifierError::ShapeMismatch { expected: dim, got: features.iter().map(Vec::len).find(|l| *l != dim).unwrap_or(0) });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClassifierError::Degenerate("non-finite feature".into()));
    }
    if !(config.perplexity > 0.0 && config.perplexity < (n - 1) as f64 / 3.0) {
        return Err(ClassifierError::InvalidConfig(format!(
            "perplexity {} must be in (0, {:.3})",
            config.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    if !(config.learning_rate > 0.0) {
        return Err(ClassifierError::InvalidConfig("learning rate must be > 0".into()));
    }
    if features.iter().all(|f| f == &features[0]) {
        return Err(ClassifierError::Degenerate("all points identical".into()));
    }

    let (p, perplexities) = joint_probabilities(features, config.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iters { config.early_exaggeration } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let grad = gradient(&p, &y, exag);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) { gains[i][d] + 0.2 } else { gains[i][d] * 0.8 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |m, v| [m[0] + v[0] / n as f64, m[1] + v[1] / n as f64]);
        y.iter_mut().for_each(|v| {
            v[0] -= mean[0];
            v[1] -= mean[1];
        });
    }
    let kl_divergence = kl(&p, &y);
    Ok(TsneResult { embedding: y, perplexities, kl_divergence })
}

fn student(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    1.0 / (1.0 + (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
}

fn gradient(p: &[Vec<f64>], y: &[[f64; 2]], exag: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let rows = par::map_range(n, |i| {
        let num: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { student(&y[i], &y[j]) }).collect();
        let z: f64 = num.iter().sum();
        (num, z)
    });
    let z: f64 = rows.iter().map(|r| r.1).sum();
    par::map_range(n, |i| {
        let mut g = [0.0; 2];
        for j in 0..n {
            if i == j {
                continue;
            }
            let num = rows[i].0[j];
            let m = (exag * p[i][j] - num / z) * num;
            g[0] += 4.0 * m * (y[i][0] - y[j][0]);
            g[1] += 4.0 * m * (y[i][1] - y[j][1]);
        }
        g
    })
}

fn kl(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += student(&y[i], &y[j]);
            }
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i][j] > 0.0 {
                s += p[i][j] * (p[i][j] / (student(&y[i], &y[j]) / z)).ln();
            }
        }
    }
    s
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sum[labels[j]] += ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..k).filter(|c| *c != own && cnt[*c] > 0).map(|c| sum[c] / cnt[c] as f64).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut x = Vec::new();
        let mut l = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                x.push(center.iter().map(|v| v + noise.sample(&mut rng)).collect());
                l.push(c);
            }
        }
        (x, l)
    }

    #[test]
    fn perplexity_matched_per_point() {
        let (x, _) = clusters(20, 1.0, 1);
        let (p, perps) = joint_probabilities(&x, 10.0);
        assert!(perps.iter().all(|v| (v - 10.0).abs() < 1e-3), "{perps:?}");
        let total: f64 = p.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for i in 0..x.len() {
            for j in 0..x.len() {
                assert_eq!(p[i][j], p[j][i]);
            }
        }
    }

    #[test]
    fn preconditions() {
        let (x, _) = clusters(2, 1.0, 0);
        let cfg = TsneConfig { perplexity: 1.0, iterations: 10, ..Default::default() };
        assert!(matches!(tsne_embed(&x[..4], &cfg), Err(ClassifierError::InvalidConfig(_))));
        let bad = TsneConfig { perplexity: 5.0 / 3.0, ..cfg };
        assert!(matches!(tsne_embed(&x[..6], &bad), Err(ClassifierError::InvalidConfig(_))));
        let same = vec![vec![1.0, 2.0]; 6];
        assert!(matches!(tsne_embed(&same, &cfg), Err(ClassifierError::Degenerate(_))));
    }

    #[test]
    fn two_distinct_points_stay_distinct() {
        let x = vec![vec![0.0], vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
        let cfg = TsneConfig { perplexity: 1.2, iterations: 100, exaggeration_iters: 50, ..Default::default() };
        let r = tsne_embed(&x, &cfg).unwrap();
        assert_ne!(r.embedding[0], r.embedding[4]);
        assert!(r.embedding.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic() {
        let (x, _) = clusters(10, 1.0, 2);
        let cfg = TsneConfig { perplexity: 5.0, iterations: 200, ..Default::default() };
        assert_eq!(tsne_embed(&x, &cfg).unwrap(), tsne_embed(&x, &cfg).unwrap());
        assert_eq!(tsne_embed(&x, &cfg).unwrap(), par::sequential(|| tsne_embed(&x, &cfg).unwrap()));
    }

    #[test]
    fn silhouette_known_values() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = silhouette(&pts, &[0, 0, 1, 1]);
        let b = (100.0f64.sqrt() + 101.0f64.sqrt()) / 2.0;
        assert!((s - (b - 1.0) / b).abs() < 1e-12);
    }

    #[test]
    fn three_clusters_separate() {
        let (x, l) = clusters(50, 0.01, 3);
        let cfg = TsneConfig { perplexity: 30.0, ..Default::default() };
        let r = tsne_embed(&x, &cfg).unwrap();
        assert!(silhouette(&r.embedding, &l) >= 0.8);
    }
}
