//! Duplex tactile link between the operator skin and the robot: framing,
//! gestures, the session state machine and transports.

pub mod gesture;
pub mod session;
pub mod transport;
pub mod wire;

pub use gesture::{classify_gesture, gesture_to_command, Direction, Gesture, GestureConfig, GestureTracker};
pub use session::{session_step, Endpoint, Outbound, SessionConfig, SessionEvent, SessionState, Stage, StepResult};
pub use wire::{decode, encode, ControlCode, DecodeError, FrameDecoder, Message, RejectReason};
