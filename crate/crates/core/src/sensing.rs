//! Sensor streams, zero calibration, noise and fixed-shape tactile windows.
//!
//! Channel order everywhere is sensor-major, axis-minor:
//! `s0x, s0y, s0z, s1x, …, s7z`.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::skin::{self, Deformation, MagneticFilm, Point2, SkinError, SkinGeometry, CHANNELS};

pub const WINDOW_STEPS: usize = 60;
pub const WINDOW_LEN: usize = CHANNELS * WINDOW_STEPS;
pub const DEFAULT_RATE_HZ: f64 = 200.0;
pub const NUM_CLASSES: usize = 12;
pub const DEFAULT_PER_CLASS: usize = 200;
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("contact schedule ends at {end_ms} ms, beyond the {window_ms} ms window")]
    ScheduleOverrun { end_ms: f64, window_ms: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Skin(#[from] SkinError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub timestamp_ms: f64,
    pub values: [f64; CHANNELS],
}

impl SensorSample {
    pub fn new(timestamp_ms: f64, values: [f64; CHANNELS]) -> Self {
        Self { timestamp_ms, values }
    }

    /// Per-sensor magnitude of the 3-axis vector.
    pub fn sensor_magnitudes(&self) -> [f64; skin::SENSOR_COUNT] {
        let mut out = [0.0; skin::SENSOR_COUNT];
        for (s, m) in out.iter_mut().enumerate() {
            let v = &self.values[s * 3..s * 3 + 3];
            *m = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub offsets: [f64; CHANNELS],
    pub n_samples_used: usize,
}

impl CalibrationState {
    pub fn zero(&self, sample: &SensorSample) -> SensorSample {
        let mut out = *sample;
        for (v, o) in out.values.iter_mut().zip(&self.offsets) {
            *v -= o;
        }
        out
    }
}

/// Offsets = per-channel mean of the first `n` contact-free samples.
pub fn calibrate_zero(stream: &[SensorSample], n: usize) -> Result<CalibrationState, SensingError> {
    if n == 0 || stream.len() < n {
        return Err(SensingError::InsufficientData { needed: n.max(1), available: stream.len() });
    }
    let mut offsets = [0.0; CHANNELS];
    for s in &stream[..n] {
        for (o, v) in offsets.iter_mut().zip(&s.values) {
            *o += v;
        }
    }
    for o in &mut offsets {
        *o /= n as f64;
    }
    Ok(CalibrationState { offsets, n_samples_used: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// µT
    pub gaussian_sigma: f64,
    /// µT
    pub quantization_step: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { gaussian_sigma: 0.1, quantization_step: 0.01, rng_seed: 0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SensingError> {
        if !(self.gaussian_sigma >= 0.0) || !(self.quantization_step > 0.0) {
            return Err(SensingError::InvalidArgument(format!(
                "noise sigma {} must be ≥ 0 and quantization step {} > 0",
                self.gaussian_sigma, self.quantization_step
            )));
        }
        Ok(())
    }

    /// Value below which a quiescent trace stays with overwhelming
    /// probability: six standard deviations plus one quantization step.
    pub fn noise_floor(&self) -> f64 {
        6.0 * self.gaussian_sigma + self.quantization_step
    }
}

/// Gaussian noise followed by rounding to the quantization grid. The noise
/// stream is keyed by `(rng_seed, index)` so any sample can be regenerated.
pub fn apply_noise(sample: &SensorSample, model: &NoiseModel, index: u64) -> SensorSample {
    let mut out = *sample;
    let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
    rng.set_stream(index);
    let normal = (model.gaussian_sigma > 0.0).then(|| Normal::new(0.0, model.gaussian_sigma).expect("sigma checked"));
    for v in &mut out.values {
        if let Some(n) = &normal {
            *v += n.sample(&mut rng);
        }
        *v = (*v / model.quantization_step).round() * model.quantization_step;
    }
    out
}

/// 24 × 60 window of zeroed readings, channel-major rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileWindow {
    pub data: Vec<f32>,
    pub label: Option<u8>,
}

impl TactileWindow {
    pub fn new(data: Vec<f32>, label: Option<u8>) -> Result<Self, SensingError> {
        if data.len() != WINDOW_LEN {
            return Err(SensingError::InvalidArgument(format!(
                "window needs {WINDOW_LEN} values, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SensingError::InvalidArgument("window contains non-finite values".into()));
        }
        if let Some(l) = label {
            if l as usize >= NUM_CLASSES {
                return Err(SensingError::InvalidArgument(format!("label {l} out of range")));
            }
        }
        Ok(Self { data, label })
    }

    pub fn zeros() -> Self {
        Self { data: vec![0.0; WINDOW_LEN], label: None }
    }

    pub fn at(&self, channel: usize, step: usize) -> f32 {
        self.data[channel * WINDOW_STEPS + step]
    }

    pub fn peak_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// One grasp: a set of simultaneous contact bumps whose depth follows a
/// rise / hold / fall envelope, optionally drifting (slip) while held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub start_ms: f64,
    pub duration_ms: f64,
    /// Raised-cosine ramp time at each end.
    pub ramp_ms: f64,
    /// Contact bumps at full depth.
    pub bumps: Vec<Deformation>,
    /// Total in-plane drift accumulated over the contact.
    pub drift: Point2,
}

impl Contact {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.duration_ms
    }

    fn envelope(&self, t: f64) -> f64 {
        let rel = t - self.start_ms;
        if rel <= 0.0 || rel >= self.duration_ms {
            return 0.0;
        }
        let ramp = self.ramp_ms.min(self.duration_ms / 2.0).max(1e-9);
        let edge = rel.min(self.duration_ms - rel);
        if edge >= ramp {
            1.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * edge / ramp).cos()
        }
    }

    /// Deformations active at time `t` (ms).
    pub fn deformations_at(&self, t: f64) -> Vec<Deformation> {
        let e = self.envelope(t);
        if e == 0.0 {
            return Vec::new();
        }
        let progress = ((t - self.start_ms) / self.duration_ms).clamp(0.0, 1.0);
        let shift = self.drift * progress;
        self.bumps
            .iter()
            .filter_map(|b| match *b {
                Deformation::Press { center, depth, radius } | Deformation::Slide { center, depth, radius, .. } => {
                    let offset = match *b {
                        Deformation::Slide { offset, .. } => offset,
                        _ => Point2::zeros(),
                    };
                    Some(Deformation::Slide { center, depth: depth * e, radius, offset: offset + shift })
                }
                Deformation::None => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    pub rate_hz: f64,
    pub steps: usize,
    /// Contact-free samples captured before the window for zeroing.
    pub baseline_samples: usize,
    pub noise: Option<NoiseModel>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { rate_hz: DEFAULT_RATE_HZ, steps: WINDOW_STEPS, baseline_samples: 20, noise: Some(NoiseModel::default()) }
    }
}

impl AcquisitionConfig {
    pub fn noiseless() -> Self {
        Self { noise: None, ..Self::default() }
    }

    pub fn window_ms(&self) -> f64 {
        self.steps as f64 * 1000.0 / self.rate_hz
    }
}

/// Simulate a contact schedule and return the raw (un-zeroed, noise-free)
/// stream, starting `baseline_samples` ticks before the window.
pub fn simulate_stream(
    schedule: &[Contact],
    geom: &SkinGeometry,
    film: &MagneticFilm,
    cfg: &AcquisitionConfig,
) -> Result<Vec<SensorSample>, SensingError> {
    let dt = 1000.0 / cfg.rate_hz;
    let baseline = skin::sensor_field(film, geom)?.to_channels();
    let total = cfg.baseline_samples + cfg.steps;
    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        let t = (k as f64 - cfg.baseline_samples as f64) * dt;
        let active: Vec<Deformation> = schedule.iter().flat_map(|c| c.deformations_at(t)).collect();
        let values = if active.is_empty() {
            baseline
        } else {
            skin::sensor_field(&skin::deform_all(film, &active)?, geom)?.to_channels()
        };
        out.push(SensorSample::new(t, values));
    }
    Ok(out)
}

/// Acquire one tactile window: simulate, add noise, zero against the
/// pre-window baseline and keep the last `steps` samples.
pub fn acquire_window(
    schedule: &[Contact],
    geom: &SkinGeometry,
    film: &MagneticFilm,
    cfg: &AcquisitionConfig,
) -> Result<TactileWindow, SensingError> {
    if cfg.steps == 0 || !(cfg.rate_hz > 0.0) {
        return Err(SensingError::InvalidArgument("rate and steps must be positive".into()));
    }
    let window_ms = cfg.window_ms();
    if let Some(end) = schedule.iter().map(Contact::end_ms).fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e)))) {
        if end > window_ms + 1e-9 || schedule.iter().any(|c| c.start_ms < 0.0) {
            return Err(SensingError::ScheduleOverrun { end_ms: end, window_ms });
        }
    }
    let mut stream = simulate_stream(schedule, geom, film, cfg)?;
    if let Some(noise) = &cfg.noise {
        noise.validate()?;
        for (i, s) in stream.iter_mut().enumerate() {
            *s = apply_noise(s, noise, i as u64);
        }
    }
    let calib = calibrate_zero(&stream, cfg.baseline_samples.max(1))?;
    let samples = &stream[cfg.baseline_samples..];
    let mut data = vec![0.0f32; CHANNELS * cfg.steps];
    for (t, s) in samples.iter().enumerate() {
        let z = calib.zero(s);
        for (c, v) in z.values.iter().enumerate() {
            data[c * cfg.steps + t] = *v as f32;
        }
    }
    Ok(TactileWindow { data, label: None })
}

/// Parameterized contact profile for one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub name: String,
    /// Contact points relative to the grasp centre, mm.
    pub contacts: Vec<[f64; 2]>,
    pub radius: f64,
    /// Indentation at full grip, mm.
    pub depth: f64,
    pub ramp_ms: f64,
    /// Uniform jitter of the grasp centre, ± mm.
    pub position_jitter: f64,
    /// Uniform jitter of the grasp angle, ± degrees.
    pub angle_jitter_deg: f64,
    /// Relative jitter of depth and radius.
    pub size_jitter: f64,
    /// Largest slip drift while held, mm.
    pub slip: f64,
}

impl ObjectClass {
    fn preset(name: &str, contacts: &[[f64; 2]], radius: f64, depth: f64, ramp_ms: f64, slip: f64) -> Self {
        Self {
            name: name.into(),
            contacts: contacts.to_vec(),
            radius,
            depth,
            ramp_ms,
            position_jitter: 1.0,
            angle_jitter_deg: 10.0,
            size_jitter: 0.08,
            slip,
        }
    }

    /// Twelve small objects of the kind a gripper might sort.
    pub fn defaults() -> Vec<ObjectClass> {
        vec![
            Self::preset("green_bean", &[[0.0, -6.0], [0.0, 6.0]], 2.5, 1.2, 40.0, 0.0),
            Self::preset("sugar_cube", &[[-4.0, -4.0], [4.0, -4.0], [-4.0, 4.0], [4.0, 4.0]], 2.0, 2.5, 15.0, 0.0),
            Self::preset("hazelnut", &[[0.0, 0.0]], 4.0, 2.0, 30.0, 0.0),
            Self::preset("chestnut", &[[0.0, 0.0]], 6.0, 2.8, 30.0, 0.0),
            Self::preset("peanut", &[[-4.5, 0.0], [4.5, 0.0]], 3.0, 1.5, 40.0, 0.0),
            Self::preset("grape", &[[0.0, 0.0]], 4.0, 1.0, 60.0, 0.0),
            Self::preset("walnut", &[[0.0, -5.0], [-4.5, 3.0], [4.5, 3.0]], 2.5, 2.2, 30.0, 0.0),
            Self::preset("almond", &[[0.0, -5.0], [0.0, 0.0], [0.0, 5.0]], 2.0, 1.6, 35.0, 0.0),
            Self::preset("cherry_tomato", &[[0.0, 0.0]], 5.5, 1.4, 90.0, 4.0),
            Self::preset("marshmallow", &[[0.0, 0.0]], 9.0, 2.0, 150.0, 0.0),
            Self::preset("dice", &[[0.0, 0.0]], 7.5, 3.3, 15.0, 0.0),
            Self::preset("bolt", &[[0.0, -9.0], [0.0, 9.0]], 1.5, 2.5, 20.0, 3.0),
        ]
    }

    /// Randomized grasp of this object, centred near the footprint centre.
    pub fn sample_grasp(&self, geom: &SkinGeometry, rng: &mut impl Rng) -> Contact {
        let c = geom.center();
        let j = self.position_jitter;
        let centre = Point2::new(c.x + rng.random_range(-j..=j), c.y + rng.random_range(-j..=j));
        let angle = rng.random_range(-self.angle_jitter_deg..=self.angle_jitter_deg).to_radians();
        let (sin, cos) = angle.sin_cos();
        let depth = (self.depth * (1.0 + rng.random_range(-self.size_jitter..=self.size_jitter)))
            .min(geom.elastomer_thickness);
        let radius = self.radius * (1.0 + rng.random_range(-self.size_jitter..=self.size_jitter));
        let bumps = self
            .contacts
            .iter()
            .map(|[dx, dy]| {
                let p = centre + Point2::new(cos * dx - sin * dy, sin * dx + cos * dy);
                Deformation::Press { center: p, depth, radius }
            })
            .collect();
        let slip_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let slip = if self.slip > 0.0 { rng.random_range(0.0..=self.slip) } else { 0.0 };
        Contact {
            start_ms: 50.0 + rng.random_range(-10.0..=10.0),
            duration_ms: 200.0,
            ramp_ms: self.ramp_ms,
            bumps,
            drift: Point2::new(slip_angle.cos(), slip_angle.sin()) * slip,
        }
    }
}

/// Windows in shuffled order; the first `n_train` form the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub windows: Vec<TactileWindow>,
    pub n_train: usize,
}

impl Dataset {
    pub fn train(&self) -> &[TactileWindow] {
        &self.windows[..self.n_train]
    }

    pub fn test(&self) -> &[TactileWindow] {
        &self.windows[self.n_train..]
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Size of the training split: `floor(0.7 · n)`.
pub fn train_split_size(n: usize) -> usize {
    (n * 7) / 10
}

fn window_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generate `per_class` grasp windows per class, shuffle and split 70/30.
pub fn build_dataset(
    classes: &[ObjectClass],
    per_class: usize,
    seed: u64,
    geom: &SkinGeometry,
    film: &MagneticFilm,
    cfg: &AcquisitionConfig,
) -> Result<Dataset, SensingError> {
    if per_class == 0 {
        return Err(SensingError::InvalidArgument("per_class must be at least 1".into()));
    }
    if classes.is_empty() || classes.len() > NUM_CLASSES {
        return Err(SensingError::InvalidArgument(format!("need 1..={NUM_CLASSES} classes")));
    }
    let n = classes.len() * per_class;
    let generated = par::map_range(n, |k| {
        let class = k / per_class;
        let mut rng = window_rng(seed, k);
        let grasp = classes[class].sample_grasp(geom, &mut rng);
        let mut local = *cfg;
        if let Some(noise) = &mut local.noise {
            noise.rng_seed = rng.random();
        }
        acquire_window(&[grasp], geom, film, &local).map(|mut w| {
            w.label = Some(class as u8);
            w
        })
    });
    let mut windows = generated.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut shuffle_rng = window_rng(seed, usize::MAX - 1);
    windows.shuffle(&mut shuffle_rng);
    Ok(Dataset { n_train: train_split_size(n), windows })
}

pub const DATASET_MAGIC: &[u8; 4] = b"ESKD";
pub const DATASET_VERSION: u16 = 1;
const UNLABELED: u8 = 255;

/// Serialize windows: `"ESKD" | version u16 | n u32 | channels u16 | steps u16`
/// followed by `label u8 | 1440 × f32` per window, little-endian.
pub fn write_dataset<W: Write>(mut w: W, windows: &[TactileWindow]) -> Result<(), SensingError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(windows.len() as u32).to_le_bytes())?;
    w.write_all(&(CHANNELS as u16).to_le_bytes())?;
    w.write_all(&(WINDOW_STEPS as u16).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 + 4 * WINDOW_LEN);
    for win in windows {
        if win.data.len() != WINDOW_LEN {
            return Err(SensingError::InvalidArgument("window has wrong shape".into()));
        }
        buf.clear();
        buf.push(win.label.unwrap_or(UNLABELED));
        for v in &win.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<TactileWindow>, SensingError> {
    let mut header = [0u8; 14];
    r.read_exact(&mut header).map_err(|e| SensingError::Format(format!("header: {e}")))?;
    if &header[0..4] != DATASET_MAGIC {
        return Err(SensingError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != DATASET_VERSION {
        return Err(SensingError::Format(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let channels = u16::from_le_bytes([header[10], header[11]]) as usize;
    let steps = u16::from_le_bytes([header[12], header[13]]) as usize;
    if channels != CHANNELS || steps != WINDOW_STEPS {
        return Err(SensingError::Format(format!("unexpected shape {channels}x{steps}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; 1 + 4 * WINDOW_LEN];
    for i in 0..n {
        r.read_exact(&mut buf).map_err(|e| SensingError::Format(format!("window {i}: {e}")))?;
        let label = match buf[0] {
            UNLABELED => None,
            l => Some(l),
        };
        let data = buf[1..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        out.push(TactileWindow::new(data, label)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(SensingError::Format("trailing bytes after last window".into()));
    }
    Ok(out)
}
