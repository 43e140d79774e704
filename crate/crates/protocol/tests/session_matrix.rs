use eskin_protocol::session::{replay, session_step, Endpoint, Outbound, SessionConfig, SessionEvent, SessionState, Stage};
use eskin_protocol::wire::{ControlCode, Message, RejectReason};

fn op(msg: Message) -> SessionEvent {
    SessionEvent::Inbound { from: Endpoint::Operator, msg }
}

/// A state sitting in `stage` with a 1 g target, reached by legal requests.
fn state_at(stage: u8) -> SessionState {
    let mut events = vec![op(Message::target_weight(1.0))];
    events.extend((2..=stage).map(|s| op(Message::StageTransition { stage: s })));
    let (s, steps) = replay(SessionConfig::default(), &events);
    assert!(steps.iter().all(|r| r.rejected.is_none()));
    assert_eq!(s.stage as u8, stage);
    s
}

/// Independent statement of the stage graph.
const LEGAL_EDGES: &[(u8, u8)] = &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (5, 4), (1, 6), (2, 6), (3, 6), (4, 6)];

#[test]
fn stage_request_matrix() {
    for from in 1..=6u8 {
        for to in 0..=7u8 {
            let s = state_at(from);
            let r = session_step(&s, &op(Message::StageTransition { stage: to }));
            if LEGAL_EDGES.contains(&(from, to)) {
                assert_eq!(r.rejected, None, "{from}->{to}");
                assert_eq!(r.state.stage as u8, to);
                let notices = r.outbound.iter().filter(|o| o.msg == Message::StageTransition { stage: to }).count();
                assert_eq!(notices, 2, "{from}->{to} notifies both sides");
            } else {
                assert_eq!(r.rejected, Some(RejectReason::IllegalTransition), "{from}->{to}");
                assert_eq!(r.state, s, "{from}->{to} left state untouched");
                assert_eq!(
                    r.outbound,
                    vec![Outbound { to: Endpoint::Operator, msg: Message::Error { rejected_type: 0x06, reason: RejectReason::IllegalTransition } }]
                );
            }
        }
    }
}

#[test]
fn control_code_matrix() {
    use ControlCode::*;
    let allowed = |stage: u8, c: ControlCode| -> bool {
        match stage {
            1 => c == Confirm,
            2 => matches!(c, MoveXp | MoveXn | MoveYp | MoveYn | MoveZp | MoveZn | Grasp | Confirm),
            3 => matches!(c, Grasp | Release | MoveZp | MoveZn | Confirm),
            4 => matches!(c, MoveXp | MoveXn | MoveYp | MoveYn | MoveZp | MoveZn | TiltUp | TiltDown | Confirm),
            5 => matches!(c, TiltUp | TiltDown | VibStart | VibStop | Confirm),
            _ => false,
        }
    };
    for stage in 1..=6u8 {
        for code in ControlCode::ALL {
            let s = state_at(stage);
            let r = session_step(&s, &op(Message::ControlCmd(code)));
            if allowed(stage, code) {
                assert_eq!(r.rejected, None, "stage {stage} {code:?}");
                assert!(r.outbound.contains(&Outbound { to: Endpoint::Robot, msg: Message::ControlCmd(code) }));
                let expected_stage = match (stage, code) {
                    (_, Confirm) => 6,
                    (2, Grasp) => 3,
                    _ => stage,
                };
                assert_eq!(r.state.stage as u8, expected_stage, "stage {stage} {code:?}");
            } else {
                assert_eq!(r.rejected, Some(RejectReason::NotAllowedInStage), "stage {stage} {code:?}");
                assert_eq!(r.state, s);
            }
        }
    }
}

#[test]
fn target_only_in_setup() {
    for stage in 1..=6u8 {
        let s = state_at(stage);
        let r = session_step(&s, &op(Message::target_weight(2.5)));
        if stage == 1 {
            assert_eq!(r.state.target_g, Some(2.5));
        } else {
            assert_eq!(r.rejected, Some(RejectReason::TargetOutsideSetup));
            assert_eq!(r.state.target_g, Some(1.0));
        }
    }
}

#[test]
fn every_active_collision_gives_one_vibration() {
    for stage in 1..=6u8 {
        let s = state_at(stage);
        for magnitude in [1u8, 128, 255] {
            let r = session_step(&s, &SessionEvent::Inbound { from: Endpoint::Robot, msg: Message::CollisionEvent { magnitude } });
            let vib = r.outbound.iter().filter(|o| o.to == Endpoint::Operator && matches!(o.msg, Message::VibrationCmd { .. })).count();
            assert_eq!(vib, usize::from((2..=5).contains(&stage)), "stage {stage}");
            assert_eq!(r.state, s);
        }
    }
}

#[test]
fn replay_is_pure() {
    let events = vec![
        op(Message::target_weight(1.0)),
        op(Message::StageTransition { stage: 2 }),
        op(Message::ControlCmd(ControlCode::MoveXp)),
        op(Message::StageTransition { stage: 5 }),
        op(Message::ControlCmd(ControlCode::Grasp)),
        op(Message::StageTransition { stage: 4 }),
        op(Message::StageTransition { stage: 5 }),
        op(Message::ControlCmd(ControlCode::VibStart)),
        SessionEvent::MassUpdate(0.99),
        SessionEvent::Disconnected(Endpoint::Robot),
    ];
    let (a, sa) = replay(SessionConfig::default(), &events);
    let (b, sb) = replay(SessionConfig::default(), &events);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    for k in 0..events.len() {
        let (prefix, _) = replay(SessionConfig::default(), &events[..k]);
        let mut s = prefix;
        for e in &events[k..] {
            s = session_step(&s, e).state;
        }
        assert_eq!(s, a);
    }
    assert_eq!(a.stage, Stage::Dispense);
    assert!(a.safe_stopped && a.auto_stopped);
}

#[test]
fn target_reached_auto_stops_dispense() {
    let s = state_at(5);
    let cfg = SessionConfig { tolerance_g: 0.05, ..Default::default() };
    let s = SessionState { config: cfg, ..s };
    let s = session_step(&s, &op(Message::ControlCmd(ControlCode::VibStart))).state;
    let r = session_step(&s, &SessionEvent::MassUpdate(1.01));
    assert!(r.outbound.contains(&Outbound { to: Endpoint::Robot, msg: Message::ControlCmd(ControlCode::VibStop) }));
}
