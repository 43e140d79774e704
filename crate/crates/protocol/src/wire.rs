//! Binary framing.
//!
//! ```text
//! 'E' 'S' | version u8 = 1 | type u8 | payload_len u16 LE | payload | crc32 u32 LE
//! ```
//!
//! The CRC (IEEE) covers every byte before it.

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x45, 0x53];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
pub const CRC_LEN: usize = 4;
/// Largest payload any message type produces.
pub const MAX_PAYLOAD: usize = 52;
pub const SENSOR_CHANNELS: usize = 24;
pub const MOTORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ControlCode {
    MoveXp = 0,
    MoveXn = 1,
    MoveYp = 2,
    MoveYn = 3,
    MoveZp = 4,
    MoveZn = 5,
    Grasp = 6,
    Release = 7,
    TiltUp = 8,
    TiltDown = 9,
    VibStart = 10,
    VibStop = 11,
    Confirm = 12,
}

impl ControlCode {
    pub const ALL: [ControlCode; 13] = [
        Self::MoveXp,
        Self::MoveXn,
        Self::MoveYp,
        Self::MoveYn,
        Self::MoveZp,
        Self::MoveZn,
        Self::Grasp,
        Self::Release,
        Self::TiltUp,
        Self::TiltDown,
        Self::VibStart,
        Self::VibStop,
        Self::Confirm,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MoveXp => "MOVE_XP",
            Self::MoveXn => "MOVE_XN",
            Self::MoveYp => "MOVE_YP",
            Self::MoveYn => "MOVE_YN",
            Self::MoveZp => "MOVE_ZP",
            Self::MoveZn => "MOVE_ZN",
            Self::Grasp => "GRASP",
            Self::Release => "RELEASE",
            Self::TiltUp => "TILT_UP",
            Self::TiltDown => "TILT_DOWN",
            Self::VibStart => "VIB_START",
            Self::VibStop => "VIB_STOP",
            Self::Confirm => "CONFIRM",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

/// Why the session refused an inbound message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RejectReason {
    IllegalTransition = 1,
    NotAllowedInStage = 2,
    TargetOutsideSetup = 3,
    SequenceRegression = 4,
    SessionClosed = 5,
    NoTarget = 6,
}

impl RejectReason {
    pub const ALL: [RejectReason; 6] = [
        Self::IllegalTransition,
        Self::NotAllowedInStage,
        Self::TargetOutsideSetup,
        Self::SequenceRegression,
        Self::SessionClosed,
        Self::NoTarget,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| *r as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Hello { version: u8 },
    /// Zeroed field in centi-µT.
    SensorFrame { seq: u32, values: [i16; SENSOR_CHANNELS] },
    /// Duty per motor, 0–255 spanning 0–100 %.
    VibrationCmd { duty: [u8; MOTORS], duration_ms: u16 },
    ControlCmd(ControlCode),
    /// Grams × 100.
    TargetWeight { centigrams: u16 },
    /// Stage 1–6.
    StageTransition { stage: u8 },
    CollisionEvent { magnitude: u8 },
    Ack { seq: u32 },
    Heartbeat,
    Error { rejected_type: u8, reason: RejectReason },
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Self::Hello { .. } => 0x01,
            Self::SensorFrame { .. } => 0x02,
            Self::VibrationCmd { .. } => 0x03,
            Self::ControlCmd(_) => 0x04,
            Self::TargetWeight { .. } => 0x05,
            Self::StageTransition { .. } => 0x06,
            Self::CollisionEvent { .. } => 0x07,
            Self::Ack { .. } => 0x08,
            Self::Heartbeat => 0x09,
            Self::Error { .. } => 0x0A,
        }
    }

    /// Saturating conversion from µT.
    pub fn sensor_frame(seq: u32, micro_tesla: &[f64; SENSOR_CHANNELS]) -> Self {
        let mut values = [0i16; SENSOR_CHANNELS];
        for (v, t) in values.iter_mut().zip(micro_tesla) {
            *v = (t * 100.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        }
        Self::SensorFrame { seq, values }
    }

    /// Grams rounded to the nearest centigram and clamped to the u16 span.
    pub fn target_weight(grams: f64) -> Self {
        Self::TargetWeight { centigrams: (grams * 100.0).round().clamp(0.0, u16::MAX as f64) as u16 }
    }
}

fn payload_len(type_code: u8) -> Option<usize> {
    Some(match type_code {
        0x01 => 1,
        0x02 => 4 + 2 * SENSOR_CHANNELS,
        0x03 => MOTORS + 2,
        0x04 => 1,
        0x05 => 2,
        0x06 => 1,
        0x07 => 1,
        0x08 => 4,
        0x09 => 0,
        0x0A => 2,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("length mismatch: frame declares {declared} payload bytes, {actual} present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("crc mismatch: computed {computed:08x}, frame carries {carried:08x}")]
    CrcMismatch { computed: u32, carried: u32 },
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("invalid payload for type 0x{type_code:02x}: {reason}")]
    InvalidPayload { type_code: u8, reason: &'static str },
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::with_capacity(MAX_PAYLOAD);
    match msg {
        Message::Hello { version } => payload.push(*version),
        Message::SensorFrame { seq, values } => {
            payload.extend_from_slice(&seq.to_le_bytes());
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Message::VibrationCmd { duty, duration_ms } => {
            payload.extend_from_slice(duty);
            payload.extend_from_slice(&duration_ms.to_le_bytes());
        }
        Message::ControlCmd(code) => payload.push(*code as u8),
        Message::TargetWeight { centigrams } => payload.extend_from_slice(&centigrams.to_le_bytes()),
        Message::StageTransition { stage } => payload.push(*stage),
        Message::CollisionEvent { magnitude } => payload.push(*magnitude),
        Message::Ack { seq } => payload.extend_from_slice(&seq.to_le_bytes()),
        Message::Heartbeat => {}
        Message::Error { rejected_type, reason } => payload.extend_from_slice(&[*rejected_type, *reason as u8]),
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.type_code());
    frame.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    frame.extend_from_slice(&payload);
    let crc = crc32fast::hash(&frame);
    frame.extend_from_slice(&crc.to_le_bytes());
    frame
}

/// Validated header: type code and total frame length.
fn parse_header(bytes: &[u8]) -> Result<(u8, usize), DecodeError> {
    if bytes.len() >= 2 && bytes[..2] != MAGIC {
        return Err(DecodeError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated { needed: HEADER_LEN, have: bytes.len() });
    }
    if bytes[2] != VERSION {
        return Err(DecodeError::BadVersion(bytes[2]));
    }
    let type_code = bytes[3];
    let expected = payload_len(type_code).ok_or(DecodeError::UnknownType(type_code))?;
    let declared = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    if declared != expected {
        return Err(DecodeError::LengthMismatch { declared, actual: expected });
    }
    Ok((type_code, HEADER_LEN + declared + CRC_LEN))
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let (type_code, total) = parse_header(bytes)?;
    if bytes.len() < total {
        return Err(DecodeError::Truncated { needed: total, have: bytes.len() });
    }
    if bytes.len() > total {
        return Err(DecodeError::LengthMismatch { declared: total - HEADER_LEN - CRC_LEN, actual: bytes.len() - HEADER_LEN - CRC_LEN });
    }
    let body = &bytes[..total - CRC_LEN];
    let carried = u32::from_le_bytes(bytes[total - CRC_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if computed != carried {
        return Err(DecodeError::CrcMismatch { computed, carried });
    }
    parse_payload(type_code, &body[HEADER_LEN..])
}

fn parse_payload(type_code: u8, p: &[u8]) -> Result<Message, DecodeError> {
    let u32_at = |i: usize| u32::from_le_bytes(p[i..i + 4].try_into().unwrap());
    let invalid = |reason| DecodeError::InvalidPayload { type_code, reason };
    Ok(match type_code {
        0x01 => Message::Hello { version: p[0] },
        0x02 => {
            let mut values = [0i16; SENSOR_CHANNELS];
            for (k, v) in values.iter_mut().enumerate() {
                *v = i16::from_le_bytes([p[4 + 2 * k], p[5 + 2 * k]]);
            }
            Message::SensorFrame { seq: u32_at(0), values }
        }
        0x03 => Message::VibrationCmd {
            duty: p[..MOTORS].try_into().unwrap(),
            duration_ms: u16::from_le_bytes([p[MOTORS], p[MOTORS + 1]]),
        },
        0x04 => Message::ControlCmd(ControlCode::from_u8(p[0]).ok_or(invalid("unknown control code"))?),
        0x05 => Message::TargetWeight { centigrams: u16::from_le_bytes([p[0], p[1]]) },
        0x06 => {
            if !(1..=6).contains(&p[0]) {
                return Err(invalid("stage outside 1..=6"));
            }
            Message::StageTransition { stage: p[0] }
        }
        0x07 => Message::CollisionEvent { magnitude: p[0] },
        0x08 => Message::Ack { seq: u32_at(0) },
        0x09 => Message::Heartbeat,
        0x0A => Message::Error {
            rejected_type: p[0],
            reason: RejectReason::from_u8(p[1]).ok_or(invalid("unknown reject reason"))?,
        },
        _ => return Err(DecodeError::UnknownType(type_code)),
    })
}

/// Reassembles frames from an arbitrarily fragmented byte stream.
///
/// On a bad frame the decoder reports the error once, drops the leading
/// byte and rescans for the next magic.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Message, DecodeError>> {
        if self.buf.is_empty() {
            return None;
        }
        let total = match parse_header(&self.buf) {
            Ok((_, total)) => total,
            Err(DecodeError::Truncated { .. }) => return None,
            Err(e) => return Some(Err(self.resync(e))),
        };
        if self.buf.len() < total {
            return None;
        }
        match decode(&self.buf[..total]) {
            Ok(m) => {
                self.buf.drain(..total);
                Some(Ok(m))
            }
            Err(e) => Some(Err(self.resync(e))),
        }
    }

    /// Pushes `bytes` and drains every complete frame.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<Message, DecodeError>> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_frame()).collect()
    }

    fn resync(&mut self, e: DecodeError) -> DecodeError {
        let skip = self.buf[1..].windows(2).position(|w| w == MAGIC).map_or(self.buf.len(), |p| p + 1);
        // keep a trailing 'E' that may start the next magic
        let skip = if skip == self.buf.len() && self.buf.last() == Some(&MAGIC[0]) { skip - 1 } else { skip };
        self.buf.drain(..skip.max(1));
        e
    }
}
