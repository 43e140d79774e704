//! Eight-channel PWM vibration programs.
//!
//! Motor amplitude follows a first-order response to the commanded duty
//! with a 30 ms time constant. Because the response is linear, the
//! amplitude of a channel is the superposition of a step up at each
//! command start and a step down at its end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 8;
pub const SUPPLY_VOLTAGE: f64 = 3.7;
pub const RISE_TAU_MS: f64 = 30.0;
/// Decay tails are dropped this many time constants after a command ends.
pub const TAIL_CUTOFF_TAUS: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActuationError {
    #[error("channel {0} does not exist")]
    BadChannel(u8),
    #[error("duty {0} outside [0, 1]")]
    DutyRange(f64),
    #[error("command duration {0} ms must be positive")]
    BadDuration(f64),
    #[error("commands {first} and {second} overlap on channel {channel}")]
    Overlap { channel: u8, first: usize, second: usize },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid preset parameter: {0}")]
    BadParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VibrationCommand {
    pub channel: u8,
    pub duty: f64,
    pub start_ms: f64,
    pub duration_ms: f64,
}

impl VibrationCommand {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VibrationProgram {
    pub commands: Vec<VibrationCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl VibrationProgram {
    pub fn new(commands: Vec<VibrationCommand>) -> Self {
        Self { commands, name: None }
    }

    /// Parse the JSON program format: a bare list of commands.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.commands).expect("commands serialize")
    }

    /// Time after which every channel is back to zero.
    pub fn support_end_ms(&self) -> f64 {
        self.commands
            .iter()
            .map(|c| c.end_ms() + TAIL_CUTOFF_TAUS * RISE_TAU_MS)
            .fold(0.0, f64::max)
    }
}

pub fn validate(program: &VibrationProgram) -> Result<(), ActuationError> {
    for c in &program.commands {
        if c.channel as usize >= CHANNELS {
            return Err(ActuationError::BadChannel(c.channel));
        }
        if !(0.0..=1.0).contains(&c.duty) {
            return Err(ActuationError::DutyRange(c.duty));
        }
        if !(c.duration_ms > 0.0) || !c.duration_ms.is_finite() || !c.start_ms.is_finite() {
            return Err(ActuationError::BadDuration(c.duration_ms));
        }
    }
    for (i, a) in program.commands.iter().enumerate() {
        for (j, b) in program.commands.iter().enumerate().skip(i + 1) {
            if a.channel == b.channel && a.start_ms < b.end_ms() && b.start_ms < a.end_ms() {
                return Err(ActuationError::Overlap { channel: a.channel, first: i, second: j });
            }
        }
    }
    Ok(())
}

/// Unit step response of the motor, `x` ms after the step.
fn rise(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-x / RISE_TAU_MS).exp()
    }
}

/// Per-channel amplitude at time `t` (ms).
pub fn amplitude_at(program: &VibrationProgram, t: f64) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    for c in &program.commands {
        if t <= c.start_ms || t >= c.end_ms() + TAIL_CUTOFF_TAUS * RISE_TAU_MS {
            continue;
        }
        let a = c.duty * (rise(t - c.start_ms) - rise(t - c.end_ms()));
        if let Some(slot) = out.get_mut(c.channel as usize) {
            *slot += a;
        }
    }
    for a in &mut out {
        *a = a.clamp(0.0, 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    pub amplitude: [f64; CHANNELS],
    pub voltage: [f64; CHANNELS],
}

impl MotorState {
    pub fn from_amplitudes(amplitude: [f64; CHANNELS]) -> Self {
        Self { amplitude, voltage: amplitude.map(|a| a * SUPPLY_VOLTAGE) }
    }

    pub fn at(program: &VibrationProgram, t: f64) -> Self {
        Self::from_amplitudes(amplitude_at(program, t))
    }

    /// Σ amplitude², the array's mechanical intensity proxy.
    pub fn intensity(&self) -> f64 {
        self.amplitude.iter().map(|a| a * a).sum()
    }
}

/// Parameters shared by the named presets. Unused fields are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetParams {
    pub n: usize,
    pub duty: f64,
    pub duration_ms: f64,
    pub stagger_ms: f64,
    pub on_ms: f64,
    pub off_ms: f64,
    pub count: usize,
    pub channel: u8,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self { n: CHANNELS, duty: 0.5, duration_ms: 1000.0, stagger_ms: 50.0, on_ms: 100.0, off_ms: 100.0, count: 5, channel: 0 }
    }
}

pub const PRESET_NAMES: [&str; 5] = ["all-on", "n-motors", "ring", "wave", "pulse-train"];

/// Perimeter order of the motor cells, walking the 4×4 grid clockwise.
pub const RING_ORDER: [u8; CHANNELS] = [0, 1, 3, 5, 7, 6, 4, 2];

pub fn preset(name: &str, p: &PresetParams) -> Result<VibrationProgram, ActuationError> {
    if !(0.0..=1.0).contains(&p.duty) {
        return Err(ActuationError::DutyRange(p.duty));
    }
    let cmd = |channel: u8, start_ms: f64, duration_ms: f64| VibrationCommand { channel, duty: p.duty, start_ms, duration_ms };
    let need_positive = |v: f64, what: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(ActuationError::BadParameter(format!("{what} must be positive")))
        }
    };
    let commands = match name {
        "all-on" => {
            need_positive(p.duration_ms, "duration_ms")?;
            (0..CHANNELS as u8).map(|c| cmd(c, 0.0, p.duration_ms)).collect()
        }
        "n-motors" => {
            if p.n > CHANNELS {
                return Err(ActuationError::BadParameter(format!("n = {} exceeds {CHANNELS}", p.n)));
            }
            need_positive(p.duration_ms, "duration_ms")?;
            (0..p.n as u8).map(|c| cmd(c, 0.0, p.duration_ms)).collect()
        }
        "wave" => {
            need_positive(p.duration_ms, "duration_ms")?;
            if !(p.stagger_ms >= 0.0) {
                return Err(ActuationError::BadParameter("stagger_ms must be ≥ 0".into()));
            }
            (0..CHANNELS as u8).map(|c| cmd(c, c as f64 * p.stagger_ms, p.duration_ms)).collect()
        }
        "ring" => {
            need_positive(p.on_ms, "on_ms")?;
            (0..p.count.max(1))
                .flat_map(|lap| {
                    RING_ORDER.iter().enumerate().map(move |(k, &c)| (c, ((lap * CHANNELS + k) as f64) * p.on_ms))
                })
                .map(|(c, start)| cmd(c, start, p.on_ms))
                .collect()
        }
        "pulse-train" => {
            need_positive(p.on_ms, "on_ms")?;
            if !(p.off_ms >= 0.0) {
                return Err(ActuationError::BadParameter("off_ms must be ≥ 0".into()));
            }
            if p.channel as usize >= CHANNELS {
                return Err(ActuationError::BadChannel(p.channel));
            }
            (0..p.count).map(|k| cmd(p.channel, k as f64 * (p.on_ms + p.off_ms), p.on_ms)).collect()
        }
        other => return Err(ActuationError::UnknownPreset(other.to_string())),
    };
    Ok(VibrationProgram { commands, name: Some(name.to_string()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one(channel: u8, duty: f64, start: f64, dur: f64) -> VibrationCommand {
        VibrationCommand { channel, duty, start_ms: start, duration_ms: dur }
    }

    #[test]
    fn validation_cases() {
        assert!(validate(&VibrationProgram::default()).is_ok());
        let p = VibrationProgram::new(vec![one(3, 0.5, 0.0, 100.0), one(3, 0.5, 90.0, 50.0)]);
        assert!(matches!(validate(&p), Err(ActuationError::Overlap { channel: 3, .. })));
        let p = VibrationProgram::new(vec![one(3, 0.5, 0.0, 100.0), one(3, 0.5, 100.0, 50.0)]);
        assert!(validate(&p).is_ok(), "touching commands do not overlap");
        let p = VibrationProgram::new(vec![one(1, 1.2, 0.0, 10.0)]);
        assert_eq!(validate(&p), Err(ActuationError::DutyRange(1.2)));
        let p = VibrationProgram::new(vec![one(9, 0.2, 0.0, 10.0)]);
        assert_eq!(validate(&p), Err(ActuationError::BadChannel(9)));
        let p = VibrationProgram::new(vec![one(1, 0.2, 0.0, 0.0)]);
        assert!(matches!(validate(&p), Err(ActuationError::BadDuration(_))));
    }

    #[test]
    fn amplitude_follows_first_order_rise() {
        let p = VibrationProgram::new(vec![one(2, 0.5, 100.0, 500.0)]);
        assert_eq!(amplitude_at(&p, 50.0), [0.0; CHANNELS]);
        let t = 145.0;
        let a = amplitude_at(&p, t);
        let expected = 0.5 * (1.0 - (-(t - 100.0) / 30.0f64).exp());
        assert_relative_eq!(a[2], expected, max_relative = 1e-12);
        assert!(a.iter().enumerate().all(|(i, v)| i == 2 || *v == 0.0));
        // after the command, exponential decay, then exactly zero beyond 5τ
        let after = amplitude_at(&p, 630.0)[2];
        assert!(after > 0.0 && after < 0.5);
        assert_eq!(amplitude_at(&p, 600.0 + 5.0 * 30.0 + 1.0)[2], 0.0);
    }

    #[test]
    fn full_duty_reaches_supply_voltage() {
        let p = VibrationProgram::new(vec![one(0, 1.0, 0.0, 10_000.0)]);
        let s = MotorState::at(&p, 5_000.0);
        assert_relative_eq!(s.voltage[0], 3.7, max_relative = 1e-12);
        assert!(s.voltage.iter().all(|v| (0.0..=3.7).contains(v)));
    }

    #[test]
    fn presets() {
        let p = preset("n-motors", &PresetParams { n: 8, duty: 0.5, ..Default::default() }).unwrap();
        assert_eq!(p.commands.len(), 8);
        assert!(p.commands.iter().all(|c| c.duty == 0.5 && c.start_ms == 0.0));
        let p = preset("n-motors", &PresetParams { n: 0, ..Default::default() }).unwrap();
        assert!(p.commands.is_empty());
        let p = preset("wave", &PresetParams { stagger_ms: 50.0, ..Default::default() }).unwrap();
        let starts: Vec<f64> = p.commands.iter().map(|c| c.start_ms).collect();
        assert_eq!(starts, vec![0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0]);
        assert!(matches!(preset("sparkle", &PresetParams::default()), Err(ActuationError::UnknownPreset(_))));
        for name in PRESET_NAMES {
            validate(&preset(name, &PresetParams::default()).unwrap()).unwrap();
        }
    }

    #[test]
    fn program_json_round_trip() {
        let p = preset("pulse-train", &PresetParams::default()).unwrap();
        let back = VibrationProgram::from_json(&p.to_json()).unwrap();
        assert_eq!(back.commands, p.commands);
        let parsed = VibrationProgram::from_json(r#"[{"channel":1,"duty":0.25,"start_ms":0,"duration_ms":40}]"#).unwrap();
        assert_eq!(parsed.commands, vec![one(1, 0.25, 0.0, 40.0)]);
        assert!(VibrationProgram::from_json(r#"[{"channel":1,"duty":0.25,"start_ms":0,"duration_ms":40,"x":1}]"#).is_err());
    }

    proptest! {
        #[test]
        fn presets_always_validate(n in 0usize..=8, duty in 0.0f64..=1.0, dur in 1.0f64..5000.0,
                                   stagger in 0.0f64..500.0, on in 1.0f64..300.0, off in 0.0f64..300.0,
                                   count in 0usize..6, channel in 0u8..8) {
            let p = PresetParams { n, duty, duration_ms: dur, stagger_ms: stagger, on_ms: on, off_ms: off, count, channel };
            for name in PRESET_NAMES {
                prop_assert!(validate(&preset(name, &p).unwrap()).is_ok());
            }
        }

        #[test]
        fn intensity_monotone_in_motor_count(duty in 0.0f64..=1.0, t in 0.0f64..2000.0) {
            let mut last = 0.0;
            for n in 0..=8 {
                let p = preset("n-motors", &PresetParams { n, duty, duration_ms: 1000.0, ..Default::default() }).unwrap();
                let i = MotorState::at(&p, t).intensity();
                prop_assert!(i >= last);
                last = i;
            }
        }

        #[test]
        fn zero_outside_support(t in 0.0f64..10_000.0) {
            let p = preset("wave", &PresetParams::default()).unwrap();
            if t >= p.support_end_ms() {
                prop_assert_eq!(amplitude_at(&p, t), [0.0; CHANNELS]);
            }
            prop_assert!(amplitude_at(&p, t).iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}
