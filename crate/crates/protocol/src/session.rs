//! Six-stage teleoperated weighing session.
//!
//! ```text
//! 1 SetTarget → 2 Approach → 3 Grasp → 4 Position → 5 Dispense → 6 Confirm
//!                                           ↑______________|
//! CONFIRM from any stage jumps to 6; stage 6 is terminal.
//! ```
//!
//! The machine is a pure function of (state, event); owners feed it a
//! serialized event queue and route the outbound messages.

use serde::{Deserialize, Serialize};

use crate::wire::{ControlCode, Message, RejectReason, MOTORS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    SetTarget = 1,
    Approach = 2,
    Grasp = 3,
    Position = 4,
    Dispense = 5,
    Confirm = 6,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Self::SetTarget, Self::Approach, Self::Grasp, Self::Position, Self::Dispense, Self::Confirm];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get((v as usize).wrapping_sub(1)).copied()
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Edges reachable by an explicit stage request.
    pub fn can_transition(self, to: Stage) -> bool {
        use Stage::*;
        matches!(
            (self, to),
            (SetTarget, Approach) | (Approach, Grasp) | (Grasp, Position) | (Position, Dispense) | (Dispense, Confirm) | (Dispense, Position)
        ) || (to == Confirm && self != Confirm)
    }

    /// Control codes accepted in this stage.
    pub fn allows(self, code: ControlCode) -> bool {
        use ControlCode::*;
        if code == Confirm {
            return self != Stage::Confirm;
        }
        match self {
            Stage::SetTarget | Stage::Confirm => false,
            Stage::Approach => matches!(code, MoveXp | MoveXn | MoveYp | MoveYn | MoveZp | MoveZn | Grasp),
            Stage::Grasp => matches!(code, Grasp | Release | MoveZp | MoveZn),
            Stage::Position => matches!(code, MoveXp | MoveXn | MoveYp | MoveYn | MoveZp | MoveZn | TiltUp | TiltDown),
            Stage::Dispense => matches!(code, TiltUp | TiltDown | VibStart | VibStop),
        }
    }

    /// Stages in which collisions are relayed to the operator.
    pub fn is_active(self) -> bool {
        matches!(self, Stage::Approach | Stage::Grasp | Stage::Position | Stage::Dispense)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Operator,
    Robot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Inbound { from: Endpoint, msg: Message },
    /// Scale reading from the robot side, grams.
    MassUpdate(f64),
    /// The transport to either side closed.
    Disconnected(Endpoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Endpoint,
    pub msg: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Auto-stop band around the target, grams.
    pub tolerance_g: f64,
    /// Vibration pulse sent to the operator per collision, ms.
    pub collision_pulse_ms: u16,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { tolerance_g: 0.02, collision_pulse_ms: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub stage: Stage,
    pub target_g: Option<f64>,
    pub mass_g: f64,
    pub vibrating: bool,
    /// Set once the automatic VIB_STOP fired.
    pub auto_stopped: bool,
    /// Transport lost; everything but safe-stop output is refused.
    pub safe_stopped: bool,
    pub last_frame_seq: Option<u32>,
    pub config: SessionConfig,
}

impl SessionState {
    pub fn new(config: SessionConfig) -> Self {
        Self {
            stage: Stage::SetTarget,
            target_g: None,
            mass_g: 0.0,
            vibrating: false,
            auto_stopped: false,
            safe_stopped: false,
            last_frame_seq: None,
            config,
        }
    }
}

impl Default for SessionState {
    fn default() -> Self {
        Self::new(SessionConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: SessionState,
    pub outbound: Vec<Outbound>,
    /// Set when the event was refused; the state is then unchanged.
    pub rejected: Option<RejectReason>,
}

fn reject(state: &SessionState, to: Endpoint, msg: &Message, reason: RejectReason) -> StepResult {
    StepResult {
        state: state.clone(),
        outbound: vec![Outbound { to, msg: Message::Error { rejected_type: msg.type_code(), reason } }],
        rejected: Some(reason),
    }
}

fn stage_notice(stage: Stage) -> [Outbound; 2] {
    let msg = Message::StageTransition { stage: stage.number() };
    [Outbound { to: Endpoint::Operator, msg: msg.clone() }, Outbound { to: Endpoint::Robot, msg }]
}

fn enter(next: &mut SessionState, stage: Stage, out: &mut Vec<Outbound>) {
    if stage != Stage::Dispense && next.vibrating {
        next.vibrating = false;
        out.push(Outbound { to: Endpoint::Robot, msg: Message::ControlCmd(ControlCode::VibStop) });
    }
    next.stage = stage;
    out.extend(stage_notice(stage));
}

pub fn session_step(state: &SessionState, event: &SessionEvent) -> StepResult {
    let mut next = state.clone();
    let mut out = Vec::new();
    let ok = |next, out| StepResult { state: next, outbound: out, rejected: None };

    match event {
        SessionEvent::Disconnected(_) => {
            if state.safe_stopped {
                return ok(next, out);
            }
            next.safe_stopped = true;
            next.vibrating = false;
            out.push(Outbound { to: Endpoint::Robot, msg: Message::ControlCmd(ControlCode::VibStop) });
            out.push(Outbound { to: Endpoint::Operator, msg: Message::VibrationCmd { duty: [0; MOTORS], duration_ms: 0 } });
            ok(next, out)
        }
        SessionEvent::MassUpdate(m) => {
            next.mass_g = *m;
            if let (Stage::Dispense, Some(target), false, false) = (state.stage, state.target_g, state.auto_stopped, state.safe_stopped) {
                // also stops on an overshoot past the band
                if *m >= target - state.config.tolerance_g {
                    next.auto_stopped = true;
                    next.vibrating = false;
                    out.push(Outbound { to: Endpoint::Robot, msg: Message::ControlCmd(ControlCode::VibStop) });
                    out.push(Outbound { to: Endpoint::Operator, msg: Message::ControlCmd(ControlCode::VibStop) });
                }
            }
            ok(next, out)
        }
        SessionEvent::Inbound { from, msg } => {
            if state.safe_stopped {
                return reject(state, *from, msg, RejectReason::SessionClosed);
            }
            match (from, msg) {
                (_, Message::Heartbeat | Message::Ack { .. } | Message::Error { .. }) => ok(next, out),
                (_, Message::Hello { .. }) => {
                    out.push(Outbound { to: *from, msg: Message::Hello { version: crate::wire::VERSION } });
                    ok(next, out)
                }
                (Endpoint::Operator, Message::TargetWeight { centigrams }) => {
                    if state.stage != Stage::SetTarget {
                        return reject(state, *from, msg, RejectReason::TargetOutsideSetup);
                    }
                    next.target_g = Some(*centigrams as f64 / 100.0);
                    out.push(Outbound { to: Endpoint::Operator, msg: Message::Ack { seq: *centigrams as u32 } });
                    ok(next, out)
                }
                (Endpoint::Operator, Message::StageTransition { stage }) => {
                    let Some(to) = Stage::from_u8(*stage) else {
                        return reject(state, *from, msg, RejectReason::IllegalTransition);
                    };
                    if !state.stage.can_transition(to) {
                        return reject(state, *from, msg, RejectReason::IllegalTransition);
                    }
                    if state.stage == Stage::SetTarget && to == Stage::Approach && state.target_g.is_none() {
                        return reject(state, *from, msg, RejectReason::NoTarget);
                    }
                    enter(&mut next, to, &mut out);
                    ok(next, out)
                }
                (Endpoint::Operator, Message::ControlCmd(code)) => {
                    if !state.stage.allows(*code) {
                        return reject(state, *from, msg, RejectReason::NotAllowedInStage);
                    }
                    out.push(Outbound { to: Endpoint::Robot, msg: msg.clone() });
                    match code {
                        ControlCode::Confirm => enter(&mut next, Stage::Confirm, &mut out),
                        ControlCode::Grasp if state.stage == Stage::Approach => enter(&mut next, Stage::Grasp, &mut out),
                        ControlCode::VibStart => next.vibrating = true,
                        ControlCode::VibStop => next.vibrating = false,
                        _ => {}
                    }
                    ok(next, out)
                }
                (Endpoint::Robot, Message::CollisionEvent { magnitude }) => {
                    if state.stage.is_active() {
                        out.push(Outbound {
                            to: Endpoint::Operator,
                            msg: Message::VibrationCmd { duty: [*magnitude; MOTORS], duration_ms: state.config.collision_pulse_ms },
                        });
                    }
                    ok(next, out)
                }
                (Endpoint::Robot, Message::SensorFrame { seq, .. }) => {
                    if state.last_frame_seq.is_some_and(|last| *seq <= last) {
                        return reject(state, *from, msg, RejectReason::SequenceRegression);
                    }
                    next.last_frame_seq = Some(*seq);
                    out.push(Outbound { to: Endpoint::Operator, msg: msg.clone() });
                    ok(next, out)
                }
                _ => reject(state, *from, msg, RejectReason::NotAllowedInStage),
            }
        }
    }
}

/// Folds an event log from a fresh state.
pub fn replay(config: SessionConfig, events: &[SessionEvent]) -> (SessionState, Vec<StepResult>) {
    let mut s = SessionState::new(config);
    let mut steps = Vec::with_capacity(events.len());
    for e in events {
        let r = session_step(&s, e);
        s = r.state.clone();
        steps.push(r);
    }
    (s, steps)
}
