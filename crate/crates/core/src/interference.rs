//! Three-stage study of motor stray fields against a reference press.
//!
//! Stage 1 is quiescent, stage 2 runs every motor at full amplitude and
//! stage 3 applies a vertical press (motors off) centred on the probed
//! sensor. Deltas are taken against a zero calibration over stage 1.

use serde::{Deserialize, Serialize};

use crate::sensing::{self, NoiseModel, SensingError, SensorSample};
use crate::skin::{
    self, Deformation, FieldReading, MagneticFilm, MotorModel, SkinError, SkinGeometry, CHANNELS, MOTOR_COUNT,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceConfig {
    pub stage_ms: f64,
    pub rate_hz: f64,
    pub probed_sensor: usize,
    pub stiffness: f64,
    pub press_radius: f64,
    pub noise: NoiseModel,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self {
            stage_ms: 2000.0,
            rate_hz: 200.0,
            probed_sensor: 2,
            stiffness: skin::DEFAULT_STIFFNESS,
            press_radius: skin::REFERENCE_PRESS_RADIUS,
            noise: NoiseModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagedSample {
    pub stage: u8,
    pub sample: SensorSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceTrace {
    /// Zeroed samples, 1-based stage tags.
    pub samples: Vec<StagedSample>,
    /// First sample index of stages 1, 2, 3.
    pub boundaries: [usize; 3],
    /// Largest |ΔB| component at the probed sensor, per stage.
    pub stage_max: [f64; 3],
    pub probed_sensor: usize,
    pub noise_floor: f64,
}

impl InterferenceTrace {
    /// Motor perturbation relative to the press response.
    pub fn ratio(&self) -> f64 {
        self.stage_max[1] / self.stage_max[2]
    }
}

/// Noise-free reading change at every sensor under a centred press.
pub fn press_delta(
    geom: &SkinGeometry,
    film: &MagneticFilm,
    force_n: f64,
    sensor: usize,
    cfg: &InterferenceConfig,
) -> Result<FieldReading, SkinError> {
    let base = skin::sensor_field(film, geom)?;
    let depth = skin::force_to_depth(force_n, cfg.stiffness, geom);
    if depth == 0.0 {
        return Ok(FieldReading::zero());
    }
    let c = geom.sensor_positions[sensor];
    let pressed = skin::deform(film, &Deformation::press(c.x, c.y, depth, cfg.press_radius))?;
    Ok(skin::sensor_field(&pressed, geom)? - base)
}

/// Noise-free ratio (full-amplitude motor peak) / (press response) at the
/// probed sensor, using the largest absolute axis component of each.
pub fn interference_ratio(
    geom: &SkinGeometry,
    film: &MagneticFilm,
    motor: &MotorModel,
    force_n: f64,
    cfg: &InterferenceConfig,
) -> Result<f64, SkinError> {
    let s = cfg.probed_sensor;
    let motors = skin::motor_interference(&[1.0; MOTOR_COUNT], geom, motor)?;
    let press = press_delta(geom, film, force_n, s, cfg)?;
    Ok(motors.max_abs_component(s) / press.max_abs_component(s))
}

pub fn interference_experiment(
    geom: &SkinGeometry,
    film: &MagneticFilm,
    motor: &MotorModel,
    press_force_n: f64,
    cfg: &InterferenceConfig,
) -> Result<InterferenceTrace, SensingError> {
    if !(press_force_n >= 0.0) {
        return Err(SensingError::InvalidArgument(format!("press force {press_force_n} N must be ≥ 0")));
    }
    if cfg.probed_sensor >= skin::SENSOR_COUNT {
        return Err(SensingError::InvalidArgument(format!("no sensor {}", cfg.probed_sensor)));
    }
    cfg.noise.validate()?;
    let dt = 1000.0 / cfg.rate_hz;
    let per_stage = (cfg.stage_ms / dt).round() as usize;
    let base = skin::sensor_field(film, geom)?;
    let motor_peak = skin::motor_interference(&[1.0; MOTOR_COUNT], geom, motor)?;
    let press = press_delta(geom, film, press_force_n, cfg.probed_sensor, cfg)?;

    let mut raw = Vec::with_capacity(3 * per_stage);
    for k in 0..3 * per_stage {
        let t = k as f64 * dt;
        let stage = (k / per_stage) as u8 + 1;
        let reading = match stage {
            1 => base,
            2 => base + motor_peak * (std::f64::consts::TAU * motor.ripple_hz * t / 1000.0).sin(),
            _ => base + press,
        };
        let s = SensorSample::new(t, reading.to_channels());
        raw.push((stage, sensing::apply_noise(&s, &cfg.noise, k as u64)));
    }
    let quiet: Vec<SensorSample> = raw[..per_stage].iter().map(|(_, s)| *s).collect();
    let calib = sensing::calibrate_zero(&quiet, per_stage)?;
    let mut stage_max = [0.0f64; 3];
    let samples: Vec<StagedSample> = raw
        .into_iter()
        .map(|(stage, s)| {
            let z = calib.zero(&s);
            let probe = &z.values[cfg.probed_sensor * 3..cfg.probed_sensor * 3 + 3];
            let m = probe.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let slot = &mut stage_max[stage as usize - 1];
            *slot = slot.max(m);
            StagedSample { stage, sample: z }
        })
        .collect();
    Ok(InterferenceTrace {
        samples,
        boundaries: [0, per_stage, 2 * per_stage],
        stage_max,
        probed_sensor: cfg.probed_sensor,
        noise_floor: cfg.noise.noise_floor(),
    })
}

/// CSV with header `t_ms,stage,s0x,…,s7z`.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &InterferenceTrace) -> std::io::Result<()> {
    write!(w, "t_ms,stage")?;
    for s in 0..skin::SENSOR_COUNT {
        for axis in ["x", "y", "z"] {
            write!(w, ",s{s}{axis}")?;
        }
    }
    writeln!(w)?;
    for row in &trace.samples {
        write!(w, "{},{}", row.sample.timestamp_ms, row.stage)?;
        for v in row.sample.values.iter().take(CHANNELS) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
