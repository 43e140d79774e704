//! Headless operator: replays a JSON-lines script against the simulated
//! robot. Touch steps are synthesized on the operator skin, recognized by
//! the gesture tracker and mapped to commands for the current stage.

use eskin_core::sensing::{self, NoiseModel, SensorSample};
use eskin_core::skin::{self, Deformation, FieldReading, MagneticFilm, SkinGeometry};
use eskin_core::weighing;
use eskin_protocol::{gesture_to_command, ControlCode, Endpoint, Gesture, GestureConfig, GestureTracker, Message, SessionState, Stage};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::duplex::{CollisionStats, Duplex};
use crate::robot::RobotSim;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Wait { s: f64 },
    Target { grams: f64 },
    Stage { stage: u8 },
    Control { code: String },
    Press { region: u8 },
    LongPress { region: u8 },
    /// Finger slides from one sensor region to another.
    Slide { from: u8, to: u8 },
    Collide { magnitude: u8 },
    AwaitStage { stage: u8, timeout_s: f64 },
    /// Waits for a VIB_STOP addressed to the operator.
    AwaitVibStop { timeout_s: f64 },
    Disconnect,
}

pub fn parse_script(text: &str) -> Result<Vec<Step>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Script { line: i + 1, message: e.to_string() }))
        .collect()
}

pub const HAPPY_PATH: &str = include_str!("../scripts/happy_path.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplexReport {
    pub seed: u64,
    pub completed: bool,
    /// Why the run ended early, if it did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub final_stage: u8,
    pub target_g: Option<f64>,
    pub final_mass_g: f64,
    pub scale_reading_g: f64,
    pub auto_stopped: bool,
    pub safe_stopped: bool,
    pub collisions: CollisionStats,
    pub operator_vibration_cmds: usize,
    pub rejected: usize,
    pub unmapped_gestures: usize,
    pub sim_time_s: f64,
}

/// Operator skin model used to synthesize touch input.
struct OperatorSkin {
    geom: SkinGeometry,
    film: MagneticFilm,
    base: FieldReading,
    noise: NoiseModel,
    cfg: GestureConfig,
    samples: u64,
}

const SKIN_DT_MS: f64 = 5.0;
const TOUCH_DEPTH_MM: f64 = 2.0;
const TOUCH_RADIUS_MM: f64 = 4.0;

impl OperatorSkin {
    fn new(geom: SkinGeometry, noise: NoiseModel, cfg: GestureConfig) -> Result<Self, CliError> {
        let film = MagneticFilm::new(&geom).map_err(|e| CliError::Config(e.to_string()))?;
        let base = skin::sensor_field(&film, &geom).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { geom, film, base, noise, cfg, samples: 0 })
    }

    fn region(&self, r: u8) -> Result<(f64, f64), CliError> {
        let p = self.geom.sensor_positions.get(r as usize).ok_or_else(|| CliError::Config(format!("no sensor region {r}")))?;
        Ok((p.x, p.y))
    }

    /// Runs a contact through the skin and the tracker. `path(u)` gives the
    /// finger position for u in [0, 1] over `touch_ms`.
    fn gesture(&mut self, touch_ms: f64, path: impl Fn(f64) -> (f64, f64)) -> (Gesture, f64) {
        let lead = 50.0;
        let total = lead + touch_ms + 50.0;
        let mut tracker = GestureTracker::new(self.cfg, &self.geom);
        let mut last = Gesture::None;
        let mut t = 0.0;
        while t < total {
            let reading = if (lead..lead + touch_ms).contains(&t) {
                let (x, y) = path((t - lead) / touch_ms);
                skin::deform(&self.film, &Deformation::press(x, y, TOUCH_DEPTH_MM, TOUCH_RADIUS_MM))
                    .and_then(|f| skin::sensor_field(&f, &self.geom))
                    .unwrap_or(self.base)
            } else {
                self.base
            };
            let zeroed = SensorSample::new(t, (reading - self.base).to_channels());
            let s = sensing::apply_noise(&zeroed, &self.noise, self.samples);
            self.samples += 1;
            if let Some(g) = tracker.push(&s) {
                last = g;
            }
            t += SKIN_DT_MS;
        }
        if let Some(g) = tracker.release() {
            last = g;
        }
        (last, total)
    }
}

pub struct ScriptRun {
    pub duplex: Duplex,
    pub report: DuplexReport,
}

/// Runs `steps` to completion on the simulated clock.
pub fn run_script(config: &ScenarioConfig, steps: &[Step], seed: u64) -> Result<ScriptRun, CliError> {
    let geom = config.geometry()?;
    let material = config.material(&config.robot.material)?;
    let robot = RobotSim::new(config.robot.clone(), material, geom.clone(), config.noise, seed)?;
    let operator_noise = NoiseModel { rng_seed: seed ^ 0x0FE2_A70B, ..config.noise };
    let mut skin = OperatorSkin::new(geom, operator_noise, config.gesture)?;
    let mut d = Duplex::new(SessionState::new(config.session), robot);
    d.log_telemetry = false;

    let mut to_op: Vec<Message> = Vec::new();
    let mut unmapped = 0;
    let mut aborted = None;

    fn advance(d: &mut Duplex, to_op: &mut Vec<Message>, s: f64) {
        for _ in 0..(s / weighing::DT_S).ceil() as usize {
            to_op.extend(d.tick());
        }
    }

    for step in steps {
        if d.state.safe_stopped {
            break;
        }
        match step {
            Step::Wait { s } => advance(&mut d, &mut to_op, *s),
            Step::Target { grams } => to_op.extend(d.from_operator(Message::target_weight(*grams))),
            Step::Stage { stage } => to_op.extend(d.from_operator(Message::StageTransition { stage: *stage })),
            Step::Control { code } => {
                let c = ControlCode::parse(code).ok_or_else(|| CliError::Config(format!("unknown control code {code:?}")))?;
                to_op.extend(d.from_operator(Message::ControlCmd(c)));
            }
            Step::Press { .. } | Step::LongPress { .. } | Step::Slide { .. } => {
                let (g, ms) = match step {
                    Step::Press { region } => {
                        let p = skin.region(*region)?;
                        skin.gesture(200.0, |_| p)
                    }
                    Step::LongPress { region } => {
                        let p = skin.region(*region)?;
                        skin.gesture(1000.0, |_| p)
                    }
                    Step::Slide { from, to } => {
                        let (a, b) = (skin.region(*from)?, skin.region(*to)?);
                        skin.gesture(300.0, |u| (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1)))
                    }
                    _ => unreachable!(),
                };
                advance(&mut d, &mut to_op, ms / 1000.0);
                match gesture_to_command(&g, d.stage()) {
                    Some(c) => to_op.extend(d.from_operator(Message::ControlCmd(c))),
                    None => unmapped += 1,
                }
            }
            Step::Collide { magnitude } => to_op.extend(d.inject_collision(*magnitude)),
            Step::AwaitStage { stage, timeout_s } => {
                let deadline = d.t_s + timeout_s;
                while d.stage().number() != *stage && d.t_s < deadline {
                    to_op.extend(d.tick());
                }
                if d.stage().number() != *stage {
                    aborted = Some(format!("stage {stage} not reached within {timeout_s} s"));
                    break;
                }
            }
            Step::AwaitVibStop { timeout_s } => {
                let deadline = d.t_s + timeout_s;
                let seen = |v: &[Message]| v.contains(&Message::ControlCmd(ControlCode::VibStop));
                while !seen(&to_op) && d.t_s < deadline {
                    to_op.extend(d.tick());
                }
                if !seen(&to_op) {
                    aborted = Some(format!("no VIB_STOP within {timeout_s} s"));
                    break;
                }
                to_op.clear();
            }
            Step::Disconnect => {
                to_op.extend(d.disconnect(Endpoint::Operator));
                aborted = Some("operator disconnected".into());
            }
        }
    }
    if d.state.safe_stopped && aborted.is_none() {
        aborted = Some("session safe-stopped".into());
    }
    // let the scale settle
    advance(&mut d, &mut to_op, 1.0);

    let completed = aborted.is_none() && d.stage() == Stage::Confirm;
    let report = DuplexReport {
        seed,
        completed,
        aborted,
        final_stage: d.stage().number(),
        target_g: d.state.target_g,
        final_mass_g: d.robot.mass(),
        scale_reading_g: d.robot.scale_reading(),
        auto_stopped: d.state.auto_stopped,
        safe_stopped: d.state.safe_stopped,
        collisions: d.collisions,
        operator_vibration_cmds: d
            .log
            .iter()
            .flat_map(|e| &e.out)
            .filter(|o| o.starts_with("-> Operator: VibrationCmd"))
            .count(),
        rejected: d.rejected,
        unmapped_gestures: unmapped,
        sim_time_s: d.t_s,
    };
    Ok(ScriptRun { duplex: d, report })
}
