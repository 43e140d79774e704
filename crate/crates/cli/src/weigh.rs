//! Weighing experiment reports: flour ε comparison and the nine-combination
//! trend check.

use eskin_core::weighing::{self, ComboFamily, Material, WeighTrace, COMBO_ANGLES, COMBO_MOTORS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonReport {
    pub material: String,
    pub seeds: usize,
    pub no_vibration: f64,
    pub vibration: f64,
    pub ratio: f64,
    #[serde(skip)]
    pub traces: (Vec<WeighTrace>, Vec<WeighTrace>),
}

/// Mean ε(a=1) without vibration over 8 motors at 50 % duty.
pub fn epsilon_comparison(material: &Material, seeds: usize, base_seed: u64) -> Result<EpsilonReport, CliError> {
    let range = base_seed..base_seed + seeds as u64;
    let (still, a) = weighing::mean_epsilon(&weighing::ramp_trial(material.clone(), 0, 0.0), range.clone())?;
    let (shaken, b) = weighing::mean_epsilon(&weighing::ramp_trial(material.clone(), 8, 0.5), range)?;
    Ok(EpsilonReport {
        material: material.name.clone(),
        seeds,
        no_vibration: still,
        vibration: shaken,
        ratio: still / shaken,
        traces: (a, b),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    pub label: u8,
    pub tilt_deg: f64,
    pub motors: usize,
    pub mean_t50: f64,
    pub t50s: Vec<f64>,
}

/// `faster` should reach half load sooner than `slower`.
#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub faster: u8,
    pub slower: u8,
    pub mean_diff: f64,
    /// 95 % bootstrap interval of mean(slower) − mean(faster).
    pub ci95: (f64, f64),
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub material: String,
    pub seeds: usize,
    pub families: Vec<FamilySummary>,
    pub pairs: Vec<PairCheck>,
    pub all_hold: bool,
}

/// Percentile bootstrap of the difference in means.
pub fn bootstrap_diff(slower: &[f64], faster: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |v: &[f64]| (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).sum::<f64>() / v.len() as f64;
    let mut diffs: Vec<f64> = (0..resamples).map(|_| draw(slower) - draw(faster)).collect();
    diffs.sort_by(f64::total_cmp);
    let at = |q: f64| diffs[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

/// A pair holds when the faster family's mean is strictly lower; a tie in
/// means is broken by requiring the bootstrap interval to exclude zero.
pub fn check_pair(faster: &FamilySummary, slower: &FamilySummary, seed: u64) -> PairCheck {
    let diff = slower.mean_t50 - faster.mean_t50;
    let ci95 = bootstrap_diff(&slower.t50s, &faster.t50s, 2000, seed);
    let holds = if diff == 0.0 { ci95.0 > 0.0 } else { diff > 0.0 };
    PairCheck { faster: faster.label, slower: slower.label, mean_diff: diff, ci95, holds }
}

pub fn trend_report(material: &Material, families: &[ComboFamily], seed: u64) -> TrendReport {
    let fams: Vec<FamilySummary> = families
        .iter()
        .map(|f| FamilySummary { label: f.label, tilt_deg: f.tilt_deg, motors: f.motors, mean_t50: f.mean_t50(), t50s: f.t50s() })
        .collect();
    let at = |a: usize, m: usize| &fams[weighing::combo_label(a, m) as usize - 1];
    let mut pairs = Vec::new();
    for a in 0..COMBO_ANGLES.len() {
        for m in 1..COMBO_MOTORS.len() {
            pairs.push(check_pair(at(a, m), at(a, m - 1), seed + pairs.len() as u64));
        }
    }
    for m in 0..COMBO_MOTORS.len() {
        for a in 1..COMBO_ANGLES.len() {
            pairs.push(check_pair(at(a, m), at(a - 1, m), seed + pairs.len() as u64));
        }
    }
    let all_hold = pairs.iter().all(|p| p.holds);
    TrendReport { material: material.name.clone(), seeds: families.first().map_or(0, |f| f.traces.len()), families: fams, pairs, all_hold }
}

pub fn nine_combo(material: &Material, seeds: usize, base_seed: u64) -> Result<(TrendReport, Vec<ComboFamily>), CliError> {
    let fams = weighing::nine_combo_experiment(material, seeds, base_seed)?;
    Ok((trend_report(material, &fams, base_seed), fams))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn fam(label: u8, t: &[f64]) -> FamilySummary {
        FamilySummary { label, tilt_deg: 0.0, motors: 0, mean_t50: mean(t), t50s: t.to_vec() }
    }

    #[test]
    fn bootstrap_of_identical_samples_is_degenerate() {
        assert_eq!(bootstrap_diff(&[2.0; 5], &[1.0; 5], 500, 1), (1.0, 1.0));
    }

    #[test]
    fn pair_rules() {
        assert!(check_pair(&fam(2, &[1.0, 2.0]), &fam(1, &[3.0, 4.0]), 0).holds);
        assert!(!check_pair(&fam(2, &[3.0, 4.0]), &fam(1, &[1.0, 2.0]), 0).holds);
        // equal means with overlapping spread do not count as decreasing
        assert!(!check_pair(&fam(2, &[1.0, 3.0]), &fam(1, &[2.0, 2.0]), 0).holds);
    }

    #[test]
    fn report_enumerates_twelve_pairs() {
        let (r, fams) = nine_combo(&Material::sesame(), 2, 0).unwrap();
        assert_eq!(fams.len(), 9);
        assert_eq!(r.pairs.len(), 12);
        assert_eq!(r.seeds, 2);
    }
}
