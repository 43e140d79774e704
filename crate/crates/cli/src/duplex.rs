//! Session owner: routes operator and robot traffic through the session
//! machine on a simulated 20 Hz clock, and records an event log.

use std::collections::VecDeque;

use eskin_core::weighing;
use eskin_protocol::{session_step, wire, Endpoint, Message, SessionEvent, SessionState, Stage};
use serde::Serialize;

use crate::robot::{RobotOutput, RobotSim};

/// One processed event, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub t: f64,
    pub event: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub out: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CollisionStats {
    pub total: usize,
    /// Collisions arriving while the session was in an active stage.
    pub active: usize,
    /// Active-stage collisions that produced exactly one operator VibrationCmd.
    pub relayed_once: usize,
    /// Inactive-stage collisions that (wrongly) produced feedback.
    pub spurious: usize,
}

pub struct Duplex {
    pub state: SessionState,
    pub robot: RobotSim,
    pub t_s: f64,
    pub log: Vec<LogEntry>,
    pub collisions: CollisionStats,
    pub rejected: usize,
    /// Whether mass updates and sensor frames are written to the log.
    pub log_telemetry: bool,
}

fn describe(e: &SessionEvent) -> String {
    match e {
        SessionEvent::Inbound { from, msg } => format!("{from:?}: {msg:?}"),
        SessionEvent::MassUpdate(m) => format!("mass {m:.2}"),
        SessionEvent::Disconnected(who) => format!("{who:?} disconnected"),
    }
}

impl Duplex {
    pub fn new(state: SessionState, robot: RobotSim) -> Self {
        Self { state, robot, t_s: 0.0, log: Vec::new(), collisions: CollisionStats::default(), rejected: 0, log_telemetry: true }
    }

    pub fn stage(&self) -> Stage {
        self.state.stage
    }

    /// Operator frame off the wire. Returns the operator-bound replies.
    pub fn from_operator(&mut self, msg: Message) -> Vec<Message> {
        self.run(SessionEvent::Inbound { from: Endpoint::Operator, msg })
    }

    pub fn disconnect(&mut self, who: Endpoint) -> Vec<Message> {
        self.run(SessionEvent::Disconnected(who))
    }

    /// Robot-side collision injected from outside the motion model.
    pub fn inject_collision(&mut self, magnitude: u8) -> Vec<Message> {
        let m = self.robot.collision(magnitude);
        self.run(SessionEvent::Inbound { from: Endpoint::Robot, msg: m })
    }

    /// One scale interval of robot physics.
    pub fn tick(&mut self) -> Vec<Message> {
        let outputs = self.robot.tick();
        self.t_s += weighing::DT_S;
        let mut to_op = Vec::new();
        for o in outputs {
            to_op.extend(self.run(robot_event(o)));
        }
        to_op
    }

    fn run(&mut self, first: SessionEvent) -> Vec<Message> {
        let mut queue = VecDeque::from([first]);
        let mut to_op = Vec::new();
        while let Some(event) = queue.pop_front() {
            let event = through_wire(event);
            let r = session_step(&self.state, &event);
            if let SessionEvent::Inbound { from: Endpoint::Robot, msg: Message::CollisionEvent { .. } } = &event {
                let n = r.outbound.iter().filter(|o| o.to == Endpoint::Operator && matches!(o.msg, Message::VibrationCmd { .. })).count();
                self.collisions.total += 1;
                if self.state.stage.is_active() {
                    self.collisions.active += 1;
                    self.collisions.relayed_once += usize::from(n == 1);
                } else if n > 0 {
                    self.collisions.spurious += 1;
                }
            }
            self.rejected += usize::from(r.rejected.is_some());
            let quiet = matches!(
                event,
                SessionEvent::MassUpdate(_) | SessionEvent::Inbound { msg: Message::SensorFrame { .. }, .. }
            ) && r.outbound.iter().all(|o| matches!(o.msg, Message::SensorFrame { .. }));
            if self.log_telemetry || !quiet {
                self.log.push(LogEntry {
                    t: (self.t_s * 1000.0).round() / 1000.0,
                    event: describe(&event),
                    out: r.outbound.iter().map(|o| format!("-> {:?}: {:?}", o.to, o.msg)).collect(),
                    rejected: r.rejected.map(|x| format!("{x:?}")),
                });
            }
            self.state = r.state;
            for o in r.outbound {
                match o.to {
                    Endpoint::Operator => to_op.push(o.msg),
                    Endpoint::Robot => queue.extend(self.robot.handle(&o.msg).into_iter().map(robot_event)),
                }
            }
        }
        to_op
    }

    pub fn write_log<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn robot_event(o: RobotOutput) -> SessionEvent {
    match o {
        RobotOutput::Msg(msg) => SessionEvent::Inbound { from: Endpoint::Robot, msg },
        RobotOutput::Mass(m) => SessionEvent::MassUpdate(m),
    }
}

/// Messages cross the link as encoded frames, even in-process.
fn through_wire(e: SessionEvent) -> SessionEvent {
    match e {
        SessionEvent::Inbound { from, msg } => {
            let msg = wire::decode(&wire::encode(&msg)).expect("encoder output always decodes");
            SessionEvent::Inbound { from, msg }
        }
        other => other,
    }
}
