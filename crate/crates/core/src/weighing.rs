//! Granular discharge from a tilted, vibrated spoon onto a scale.
//!
//! Flow has two parts. A continuous term, threshold-linear in the sine of
//! the tilt above the angle of repose and affine in vibration amplitude,
//! and a Poisson stream of clumps whose rate falls linearly with vibration
//! until it vanishes at [`CLUMP_CUTOFF`]. Masses are tracked in integer
//! micrograms so the load on the spoon and the mass on the scale always
//! sum to the initial load exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{self, PresetParams, VibrationProgram};
use crate::par;

/// Scale readout interval (20 Hz).
pub const DT_S: f64 = 0.05;
/// Vibration amplitude at which clumping stops entirely.
pub const CLUMP_CUTOFF: f64 = 0.6;
/// Spoon vibration per unit of RMS-summed motor amplitude.
pub const DEFAULT_COUPLING: f64 = 0.5;

const UG_PER_G: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeighError {
    #[error("interval a = {a} must satisfy 1 ≤ a < trace length {len}")]
    BadInterval { a: usize, len: usize },
    #[error("no nonzero mass differences at interval {0}")]
    NoNonzeroDifferences(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    pub angle_of_repose: f64,
    /// g/s at unit sine excess and unit flow factor.
    pub base_flow: f64,
    pub vib_gain: f64,
    /// Flow factor without vibration. Zero for cohesive powders that only
    /// leave the spoon as clumps unless shaken.
    pub static_flow: f64,
    pub clump_mass_mean: f64,
    pub clump_rate_no_vib: f64,
    pub humidity_clump_factor: f64,
}

impl Material {
    pub fn flour() -> Self {
        Self {
            name: "flour".into(),
            angle_of_repose: 45.0,
            base_flow: 2.0,
            vib_gain: 2.0,
            static_flow: 0.0,
            clump_mass_mean: 0.2,
            clump_rate_no_vib: 4.0,
            humidity_clump_factor: 1.0,
        }
    }

    pub fn sugar() -> Self {
        Self {
            name: "sugar".into(),
            angle_of_repose: 28.0,
            base_flow: 1.5,
            vib_gain: 2.0,
            static_flow: 0.3,
            clump_mass_mean: 0.05,
            clump_rate_no_vib: 1.0,
            humidity_clump_factor: 0.5,
        }
    }

    pub fn sesame() -> Self {
        Self {
            name: "sesame".into(),
            angle_of_repose: 25.0,
            base_flow: 2.0,
            vib_gain: 1.5,
            static_flow: 0.5,
            clump_mass_mean: 0.03,
            clump_rate_no_vib: 0.5,
            humidity_clump_factor: 0.3,
        }
    }

    pub fn defaults() -> Vec<Material> {
        vec![Self::flour(), Self::sugar(), Self::sesame()]
    }

    pub fn by_name(name: &str) -> Option<Material> {
        Self::defaults().into_iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<(), WeighError> {
        let fields = [
            self.base_flow,
            self.vib_gain,
            self.static_flow,
            self.clump_mass_mean,
            self.clump_rate_no_vib,
            self.humidity_clump_factor,
        ];
        if fields.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(WeighError::InvalidArgument(format!("material {} has a negative parameter", self.name)));
        }
        if !(self.angle_of_repose > 0.0 && self.angle_of_repose < 90.0) {
            return Err(WeighError::InvalidArgument(format!("angle of repose {} outside (0, 90)", self.angle_of_repose)));
        }
        Ok(())
    }

    /// sin(tilt) above sin(repose), floored at zero.
    fn excess(&self, tilt_deg: f64) -> f64 {
        (tilt_deg.to_radians().sin() - self.angle_of_repose.to_radians().sin()).max(0.0)
    }

    /// Fraction of the way from the repose angle to vertical, in sine terms.
    fn clump_tilt_factor(&self, tilt_deg: f64) -> f64 {
        let span = 1.0 - self.angle_of_repose.to_radians().sin();
        (self.excess(tilt_deg) / span).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoonState {
    pub tilt: f64,
    load_remaining_ug: u64,
}

impl SpoonState {
    pub fn new(tilt_deg: f64, load_g: f64) -> Self {
        Self { tilt: tilt_deg.clamp(0.0, 90.0), load_remaining_ug: grams_to_ug(load_g) }
    }

    pub fn load_remaining(&self) -> f64 {
        self.load_remaining_ug as f64 / UG_PER_G
    }

    pub fn load_remaining_ug(&self) -> u64 {
        self.load_remaining_ug
    }

    pub fn with_tilt(self, tilt_deg: f64) -> Self {
        Self { tilt: tilt_deg.clamp(0.0, 90.0), ..self }
    }
}

pub fn grams_to_ug(g: f64) -> u64 {
    (g.max(0.0) * UG_PER_G).round() as u64
}

/// Spoon vibration amplitude from per-motor amplitudes:
/// `min(1, coupling · sqrt(Σ aᵢ²))`.
pub fn spoon_amplitude(motor_amplitudes: &[f64], coupling: f64) -> f64 {
    let rss = motor_amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    (coupling * rss).min(1.0)
}

/// Expected mass flow in g/s: `(continuous, clumps)`.
pub fn expected_flow(state: &SpoonState, material: &Material, vib: f64) -> (f64, f64) {
    if state.load_remaining_ug == 0 {
        return (0.0, 0.0);
    }
    let continuous = material.base_flow * material.excess(state.tilt) * (material.static_flow + material.vib_gain * vib);
    (continuous, clump_rate(state, material, vib) * material.clump_mass_mean)
}

fn clump_rate(state: &SpoonState, material: &Material, vib: f64) -> f64 {
    material.clump_rate_no_vib
        * material.humidity_clump_factor
        * (1.0 - vib / CLUMP_CUTOFF).max(0.0)
        * material.clump_tilt_factor(state.tilt)
}

/// Advance the spoon by `dt` seconds. Returns the released mass in grams.
pub fn step(state: &SpoonState, material: &Material, vib: f64, dt: f64, rng: &mut impl Rng) -> (f64, SpoonState) {
    let (ug, next) = step_ug(state, material, vib, dt, rng);
    (ug as f64 / UG_PER_G, next)
}

/// [`step`] in integer micrograms.
pub fn step_ug(state: &SpoonState, material: &Material, vib: f64, dt: f64, rng: &mut impl Rng) -> (u64, SpoonState) {
    let vib = vib.clamp(0.0, 1.0);
    let (continuous, _) = expected_flow(state, material, vib);
    let mut grams = continuous * dt;
    let lambda = clump_rate(state, material, vib) * dt;
    if lambda > 0.0 && state.load_remaining_ug > 0 {
        let count = Poisson::new(lambda).expect("positive rate").sample(rng) as u64;
        let m = material.clump_mass_mean;
        for _ in 0..count {
            grams += rng.random_range(0.5 * m..=1.5 * m);
        }
    }
    let released = grams_to_ug(grams).min(state.load_remaining_ug);
    let next = SpoonState { tilt: state.tilt, load_remaining_ug: state.load_remaining_ug - released };
    (released, next)
}

/// Cumulative scale mass sampled every `dt` seconds, starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeighTrace {
    pub dt: f64,
    pub masses: Vec<f64>,
}

impl WeighTrace {
    pub fn final_mass(&self) -> f64 {
        self.masses.last().copied().unwrap_or(0.0)
    }

    /// Largest single-interval increase.
    pub fn max_step(&self) -> f64 {
        self.masses.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// First time the scale reads at least `mass` grams.
    pub fn time_to_mass(&self, mass: f64) -> Option<f64> {
        self.masses.iter().position(|m| *m >= mass).map(|i| i as f64 * self.dt)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mass")?;
        for (i, m) in self.masses.iter().enumerate() {
            writeln!(w, "{:.2},{m}", i as f64 * self.dt)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonParams {
    pub a: usize,
}

impl Default for EpsilonParams {
    fn default() -> Self {
        Self { a: 1 }
    }
}

/// Mean absolute nonzero mass change over an interval of `a` samples.
pub fn epsilon(trace: &WeighTrace, params: EpsilonParams) -> Result<f64, WeighError> {
    epsilon_of(&trace.masses, params.a)
}

pub fn epsilon_of(masses: &[f64], a: usize) -> Result<f64, WeighError> {
    if a == 0 || a >= masses.len() {
        return Err(WeighError::BadInterval { a, len: masses.len() });
    }
    let (sum, n) = masses[a..]
        .iter()
        .zip(masses)
        .map(|(later, earlier)| later - earlier)
        .filter(|d| *d != 0.0)
        .fold((0.0, 0usize), |(s, n), d| (s + d.abs(), n + 1));
    if n == 0 {
        return Err(WeighError::NoNonzeroDifferences(a));
    }
    Ok(sum / n as f64)
}

/// Spoon tilt as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TiltSchedule {
    Constant { deg: f64 },
    /// Linear from `from` to `to` over `duration_s`, then held.
    Ramp { from: f64, to: f64, duration_s: f64 },
}

impl TiltSchedule {
    pub fn at(&self, t_s: f64) -> f64 {
        match *self {
            Self::Constant { deg } => deg,
            Self::Ramp { from, to, duration_s } => {
                let f = if duration_s > 0.0 { (t_s / duration_s).clamp(0.0, 1.0) } else { 1.0 };
                from + (to - from) * f
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub tilt: TiltSchedule,
    pub program: VibrationProgram,
    pub material: Material,
    pub load_g: f64,
    pub horizon_s: f64,
    pub coupling: f64,
}

pub fn trial_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integrate [`step`] at 20 Hz over the trial horizon.
pub fn run_trial(trial: &Trial, seed: u64) -> Result<WeighTrace, WeighError> {
    trial.material.validate()?;
    actuation::validate(&trial.program).map_err(|e| WeighError::InvalidArgument(e.to_string()))?;
    if !(trial.horizon_s > 0.0) || !(trial.load_g >= 0.0) {
        return Err(WeighError::InvalidArgument("horizon must be positive and load non-negative".into()));
    }
    let steps = (trial.horizon_s / DT_S).round() as usize;
    let mut rng = trial_rng(seed);
    let initial = grams_to_ug(trial.load_g);
    let mut state = SpoonState { tilt: trial.tilt.at(0.0).clamp(0.0, 90.0), load_remaining_ug: initial };
    let mut masses = Vec::with_capacity(steps + 1);
    masses.push(0.0);
    for k in 0..steps {
        let t = k as f64 * DT_S;
        state = state.with_tilt(trial.tilt.at(t));
        let vib = spoon_amplitude(&actuation::amplitude_at(&trial.program, t * 1000.0), trial.coupling);
        let (_, next) = step_ug(&state, &trial.material, vib, DT_S, &mut rng);
        state = next;
        masses.push((initial - state.load_remaining_ug) as f64 / UG_PER_G);
    }
    Ok(WeighTrace { dt: DT_S, masses })
}

pub fn motors_program(n: usize, duty: f64, horizon_s: f64) -> VibrationProgram {
    actuation::preset("n-motors", &PresetParams { n, duty, duration_ms: horizon_s * 1000.0 + 1.0, ..Default::default() })
        .expect("n-motors with n ≤ 8 and duty in [0, 1]")
}

/// Tilt ramp 0→90° with a fixed motor configuration: the flour comparison.
pub fn ramp_trial(material: Material, motors: usize, duty: f64) -> Trial {
    let horizon_s = 30.0;
    Trial {
        tilt: TiltSchedule::Ramp { from: 0.0, to: 90.0, duration_s: 20.0 },
        program: motors_program(motors, duty, horizon_s),
        material,
        load_g: 5.0,
        horizon_s,
        coupling: DEFAULT_COUPLING,
    }
}

pub const COMBO_ANGLES: [f64; 3] = [30.0, 45.0, 50.0];
pub const COMBO_MOTORS: [usize; 3] = [2, 4, 8];
pub const COMBO_DUTY: f64 = 0.5;

/// Curve label for an (angle, motors) pair: angle-major, 1-based.
pub fn combo_label(angle_idx: usize, motor_idx: usize) -> u8 {
    (angle_idx * COMBO_MOTORS.len() + motor_idx + 1) as u8
}

pub fn combo_trial(material: Material, tilt_deg: f64, motors: usize) -> Trial {
    let horizon_s = 120.0;
    Trial {
        tilt: TiltSchedule::Ramp { from: 0.0, to: tilt_deg, duration_s: 1.0 },
        program: motors_program(motors, COMBO_DUTY, horizon_s),
        material,
        load_g: 5.0,
        horizon_s,
        coupling: DEFAULT_COUPLING,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub label: u8,
    pub tilt_deg: f64,
    pub motors: usize,
    pub seed: u64,
    /// ε at a = 1, `None` when the trace never changed.
    pub eps: Option<f64>,
    /// Time to half the load, `None` if never reached within the horizon.
    pub t50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComboFamily {
    pub label: u8,
    pub tilt_deg: f64,
    pub motors: usize,
    pub traces: Vec<WeighTrace>,
    pub summaries: Vec<TrialSummary>,
}

impl ComboFamily {
    /// Half-load times; unreached targets count as the full horizon.
    pub fn t50s(&self) -> Vec<f64> {
        self.summaries
            .iter()
            .zip(&self.traces)
            .map(|(s, t)| s.t50.unwrap_or((t.masses.len() - 1) as f64 * t.dt))
            .collect()
    }

    pub fn mean_t50(&self) -> f64 {
        let v = self.t50s();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn summarize(label: u8, tilt_deg: f64, motors: usize, seed: u64, trace: &WeighTrace, load_g: f64) -> TrialSummary {
    TrialSummary {
        label,
        tilt_deg,
        motors,
        seed,
        eps: epsilon(trace, EpsilonParams::default()).ok(),
        t50: trace.time_to_mass(load_g / 2.0),
    }
}

/// 3 tilt angles × 3 motor counts, `seed_count` trials each (seeds
/// `base_seed .. base_seed + seed_count`). Families come out in label order.
pub fn nine_combo_experiment(material: &Material, seed_count: usize, base_seed: u64) -> Result<Vec<ComboFamily>, WeighError> {
    if seed_count == 0 {
        return Err(WeighError::InvalidArgument("seed_count must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..COMBO_ANGLES.len())
        .flat_map(|a| (0..COMBO_MOTORS.len()).flat_map(move |m| (0..seed_count as u64).map(move |s| (a, m, s))))
        .collect();
    let traces = par::map_slice(&jobs, |&(a, m, s)| {
        run_trial(&combo_trial(material.clone(), COMBO_ANGLES[a], COMBO_MOTORS[m]), base_seed + s)
    });
    let mut traces = traces.into_iter();
    let mut out = Vec::with_capacity(9);
    for (a, &tilt) in COMBO_ANGLES.iter().enumerate() {
        for (m, &motors) in COMBO_MOTORS.iter().enumerate() {
            let label = combo_label(a, m);
            let mut fam = ComboFamily { label, tilt_deg: tilt, motors, traces: Vec::new(), summaries: Vec::new() };
            for s in 0..seed_count as u64 {
                let trace = traces.next().expect("one trace per job")?;
                fam.summaries.push(summarize(label, tilt, motors, base_seed + s, &trace, 5.0));
                fam.traces.push(trace);
            }
            out.push(fam);
        }
    }
    Ok(out)
}

/// Mean ε(a=1) over seeds for one trial configuration, plus the traces.
pub fn mean_epsilon(trial: &Trial, seeds: std::ops::Range<u64>) -> Result<(f64, Vec<WeighTrace>), WeighError> {
    let seeds: Vec<u64> = seeds.collect();
    let traces = par::map_slice(&seeds, |&s| run_trial(trial, s)).into_iter().collect::<Result<Vec<_>, _>>()?;
    let eps = traces
        .iter()
        .map(|t| epsilon(t, EpsilonParams::default()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((eps.iter().sum::<f64>() / eps.len() as f64, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn epsilon_fixtures() {
        assert_eq!(epsilon_of(&[1.0, 1.0, 1.0], 1), Err(WeighError::NoNonzeroDifferences(1)));
        assert_relative_eq!(epsilon_of(&[0.0, 0.5, 0.5, 1.0], 1).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(epsilon_of(&[0.0, 0.2, 0.4, 0.6], 2).unwrap(), 0.4, epsilon = 1e-12);
        assert!(matches!(epsilon_of(&[0.0, 1.0], 2), Err(WeighError::BadInterval { .. })));
        assert!(matches!(epsilon_of(&[0.0, 1.0], 0), Err(WeighError::BadInterval { .. })));
    }

    #[test]
    fn level_spoon_releases_nothing() {
        let mut rng = trial_rng(3);
        for m in Material::defaults() {
            for vib in [0.0, 0.3, 1.0] {
                let s = SpoonState::new(0.0, 5.0);
                let (r, next) = step(&s, &m, vib, DT_S, &mut rng);
                assert_eq!(r, 0.0);
                assert_eq!(next, s);
            }
        }
    }

    #[test]
    fn conservation_to_exact_load() {
        let m = Material::sesame();
        let mut rng = trial_rng(1);
        let mut s = SpoonState::new(90.0, 5.0);
        let mut total = 0u64;
        for _ in 0..20_000 {
            let (r, next) = step_ug(&s, &m, 0.4, DT_S, &mut rng);
            total += r;
            s = next;
            assert_eq!(total + s.load_remaining_ug(), 5_000_000);
        }
        assert_eq!(total, 5_000_000);
        assert_eq!(s.load_remaining(), 0.0);
    }

    #[test]
    fn flour_clumps_make_jumps() {
        let m = Material::flour();
        let trial = ramp_trial(m.clone(), 0, 0.0);
        for seed in 0..20 {
            let t = run_trial(&trial, seed).unwrap();
            assert!(t.max_step() >= m.clump_mass_mean / 2.0, "seed {seed}: {}", t.max_step());
        }
    }

    #[test]
    fn zero_load_trace_and_determinism() {
        let mut trial = ramp_trial(Material::flour(), 8, 0.5);
        let a = run_trial(&trial, 11).unwrap();
        assert_eq!(a, run_trial(&trial, 11).unwrap());
        assert_eq!(a.masses.len(), 601);
        trial.load_g = 0.0;
        assert!(run_trial(&trial, 11).unwrap().masses.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn combo_labels() {
        assert_eq!(combo_label(0, 0), 1);
        assert_eq!(combo_label(0, 1), 2);
        assert_eq!(combo_label(2, 2), 9);
        let fams = nine_combo_experiment(&Material::sesame(), 1, 0).unwrap();
        assert_eq!(fams.len(), 9);
        assert_eq!((fams[0].tilt_deg, fams[0].motors), (30.0, 2));
        assert_eq!((fams[1].tilt_deg, fams[1].motors), (30.0, 4));
        assert!(fams.iter().all(|f| f.traces.len() == 1));
    }

    #[test]
    fn spoon_amplitude_mapping() {
        assert_eq!(spoon_amplitude(&[0.0; 8], DEFAULT_COUPLING), 0.0);
        assert_relative_eq!(spoon_amplitude(&[0.5; 8], DEFAULT_COUPLING), 0.5 * 2f64.sqrt(), max_relative = 1e-12);
        assert_eq!(spoon_amplitude(&[1.0; 8], DEFAULT_COUPLING), 1.0);
    }

    proptest! {
        #[test]
        fn flow_monotone(t1 in 0.0f64..90.0, t2 in 0.0f64..90.0, v1 in 0.0f64..1.0, v2 in 0.0f64..1.0) {
            for m in Material::defaults() {
                let (lo_t, hi_t) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let (lo_v, hi_v) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
                let s = |t| SpoonState::new(t, 5.0);
                prop_assert!(expected_flow(&s(lo_t), &m, lo_v).0 <= expected_flow(&s(hi_t), &m, lo_v).0);
                prop_assert!(expected_flow(&s(lo_t), &m, lo_v).0 <= expected_flow(&s(lo_t), &m, hi_v).0);
                prop_assert!(expected_flow(&s(lo_t), &m, lo_v).1 >= expected_flow(&s(lo_t), &m, hi_v).1);
            }
        }

        #[test]
        fn traces_nondecreasing(seed in 0u64..1000, motors in 0usize..=8) {
            let t = run_trial(&ramp_trial(Material::flour(), motors, 0.5), seed).unwrap();
            prop_assert_eq!(t.masses[0], 0.0);
            prop_assert!(t.masses.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(t.final_mass() <= 5.0);
            if let Ok(e) = epsilon(&t, EpsilonParams::default()) {
                prop_assert!(e > 0.0);
            }
        }
    }
}
