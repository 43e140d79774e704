//! Byte channels carrying frames: in-process loopback, TCP, and a WebSocket
//! gateway that adds a JSON telemetry side-channel for the operator UI.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tungstenite::{Message as WsMessage, WebSocket};

use crate::session::{Endpoint, SessionEvent};
use crate::wire::{self, DecodeError, FrameDecoder, Message};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("channel closed")]
    Closed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("websocket: {0}")]
    WebSocket(String),
}

impl From<tungstenite::Error> for TransportError {
    fn from(e: tungstenite::Error) -> Self {
        match e {
            tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => Self::Closed,
            tungstenite::Error::Io(e) => Self::Io(e),
            other => Self::WebSocket(other.to_string()),
        }
    }
}

/// One end of an in-process duplex byte pipe. Reads return whatever chunk
/// the peer wrote (possibly partial), and 0 once the peer is dropped.
#[derive(Debug)]
pub struct LoopbackEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
}

pub fn loopback_pair() -> (LoopbackEnd, LoopbackEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        LoopbackEnd { tx: a_tx, rx: a_rx, pending: VecDeque::new() },
        LoopbackEnd { tx: b_tx, rx: b_rx, pending: VecDeque::new() },
    )
}

impl Read for LoopbackEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.pending.is_empty() {
            match self.rx.recv() {
                Ok(chunk) => self.pending.extend(chunk),
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len());
        for (b, v) in buf.iter_mut().zip(self.pending.drain(..n)) {
            *b = v;
        }
        Ok(n)
    }
}

impl Write for LoopbackEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx.send(buf.to_vec()).map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Frame-level wrapper over any ordered reliable byte stream.
#[derive(Debug)]
pub struct FramedStream<S> {
    stream: S,
    decoder: FrameDecoder,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(stream: S) -> Self {
        Self { stream, decoder: FrameDecoder::new() }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.stream.write_all(&wire::encode(msg))?;
        self.stream.flush()?;
        Ok(())
    }

    /// Blocks for the next frame. A clean close yields `Closed`; a corrupt
    /// frame yields its decode error and the stream stays usable.
    pub fn recv(&mut self) -> Result<Message, TransportError> {
        let mut buf = [0u8; 512];
        loop {
            if let Some(r) = self.decoder.next_frame() {
                return Ok(r?);
            }
            let n = self.stream.read(&mut buf)?;
            if n == 0 {
                return Err(TransportError::Closed);
            }
            self.decoder.push(&buf[..n]);
        }
    }
}

pub fn connect_tcp(addr: impl ToSocketAddrs) -> Result<FramedStream<TcpStream>, TransportError> {
    let s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    Ok(FramedStream::new(s))
}

pub fn accept_tcp(listener: &TcpListener) -> Result<FramedStream<TcpStream>, TransportError> {
    let (s, _) = listener.accept()?;
    s.set_nodelay(true)?;
    Ok(FramedStream::new(s))
}

/// Spawns a reader that turns a TCP peer's frames into session events and
/// reports `Disconnected` when the stream ends. Corrupt frames are dropped.
pub fn spawn_tcp_reader(stream: TcpStream, from: Endpoint, events: Sender<SessionEvent>) -> io::Result<JoinHandle<()>> {
    let mut framed = FramedStream::new(stream.try_clone()?);
    Ok(std::thread::spawn(move || loop {
        match framed.recv() {
            Ok(msg) => {
                if events.send(SessionEvent::Inbound { from, msg }).is_err() {
                    return;
                }
            }
            Err(TransportError::Decode(_)) => continue,
            Err(_) => {
                let _ = events.send(SessionEvent::Disconnected(from));
                return;
            }
        }
    }))
}

/// JSON side-channel record for the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    #[serde(rename = "type")]
    pub kind: String,
    pub stage: u8,
    pub mass: f64,
    pub target: Option<f64>,
}

impl Telemetry {
    pub fn new(stage: u8, mass: f64, target: Option<f64>) -> Self {
        Self { kind: "telemetry".into(), stage, mass, target }
    }
}

pub const TELEMETRY_PERIOD_MS: f64 = 100.0;

/// Decides when the next 10 Hz telemetry record is due.
#[derive(Debug, Clone, Default)]
pub struct TelemetryClock {
    next_due_ms: Option<f64>,
}

impl TelemetryClock {
    pub fn due(&mut self, now_ms: f64) -> bool {
        match self.next_due_ms {
            Some(t) if now_ms < t => false,
            Some(t) => {
                // skip missed slots rather than bursting
                let missed = ((now_ms - t) / TELEMETRY_PERIOD_MS).floor();
                self.next_due_ms = Some(t + (missed + 1.0) * TELEMETRY_PERIOD_MS);
                true
            }
            None => {
                self.next_due_ms = Some(now_ms + TELEMETRY_PERIOD_MS);
                true
            }
        }
    }
}

/// Inbound traffic on the gateway socket.
#[derive(Debug, Clone, PartialEq)]
pub enum GatewayInbound {
    Frame(Message),
    /// Text messages from the UI, passed through untouched.
    Text(String),
}

/// Server side of the UI WebSocket: frames travel as binary messages, the
/// telemetry record as text.
pub struct WsGateway<S: Read + Write> {
    ws: WebSocket<S>,
    decoder: FrameDecoder,
}

impl WsGateway<TcpStream> {
    pub fn accept(listener: &TcpListener) -> Result<Self, TransportError> {
        let (s, _) = listener.accept()?;
        s.set_nodelay(true)?;
        Self::from_stream(s)
    }
}

impl<S: Read + Write> WsGateway<S> {
    pub fn from_stream(stream: S) -> Result<Self, TransportError> {
        let ws = tungstenite::accept(stream).map_err(|e| TransportError::WebSocket(e.to_string()))?;
        Ok(Self { ws, decoder: FrameDecoder::new() })
    }

    pub fn get_ref(&self) -> &S {
        self.ws.get_ref()
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.ws.send(WsMessage::Binary(wire::encode(msg).into()))?;
        Ok(())
    }

    pub fn send_telemetry(&mut self, t: &Telemetry) -> Result<(), TransportError> {
        let text = serde_json::to_string(t).expect("telemetry serializes");
        self.ws.send(WsMessage::Text(text.into()))?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<GatewayInbound, TransportError> {
        loop {
            if let Some(r) = self.decoder.next_frame() {
                return Ok(GatewayInbound::Frame(r?));
            }
            match self.ws.read()? {
                WsMessage::Binary(b) => self.decoder.push(&b),
                WsMessage::Text(t) => return Ok(GatewayInbound::Text(t.to_string())),
                WsMessage::Close(_) => return Err(TransportError::Closed),
                _ => {}
            }
        }
    }

    pub fn close(&mut self) -> Result<(), TransportError> {
        self.ws.close(None)?;
        Ok(())
    }
}

/// Client side, used by tests and headless tools.
pub struct WsClient {
    ws: WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>,
    decoder: FrameDecoder,
}

impl WsClient {
    pub fn connect(url: &str) -> Result<Self, TransportError> {
        let (ws, _) = tungstenite::connect(url)?;
        Ok(Self { ws, decoder: FrameDecoder::new() })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.ws.send(WsMessage::Binary(wire::encode(msg).into()))?;
        Ok(())
    }

    /// Next frame or telemetry record.
    pub fn recv(&mut self) -> Result<Result<Message, Telemetry>, TransportError> {
        loop {
            if let Some(r) = self.decoder.next_frame() {
                return Ok(Ok(r?));
            }
            match self.ws.read()? {
                WsMessage::Binary(b) => self.decoder.push(&b),
                WsMessage::Text(t) => {
                    let tel = serde_json::from_str(&t).map_err(|e| TransportError::WebSocket(e.to_string()))?;
                    return Ok(Err(tel));
                }
                WsMessage::Close(_) => return Err(TransportError::Closed),
                _ => {}
            }
        }
    }

    pub fn close(&mut self) -> Result<(), TransportError> {
        self.ws.close(None)?;
        while self.ws.read().is_ok() {}
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telemetry_json_shape() {
        let t = Telemetry::new(5, 0.5, Some(1.0));
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"{"type":"telemetry","stage":5,"mass":0.5,"target":1.0}"#);
    }

    #[test]
    fn telemetry_clock_is_ten_hertz() {
        let mut c = TelemetryClock::default();
        let fired: Vec<u32> = (0..1000).filter(|t| c.due(*t as f64)).collect();
        assert_eq!(fired.len(), 10);
        assert_eq!(fired[..3], [0, 100, 200]);
        let mut c = TelemetryClock::default();
        assert!(c.due(0.0));
        assert!(c.due(350.0));
        assert!(!c.due(399.0));
        assert!(c.due(400.0));
    }

    #[test]
    fn loopback_partial_reads() {
        let (mut a, mut b) = loopback_pair();
        a.write_all(b"hello").unwrap();
        let mut buf = [0u8; 2];
        assert_eq!(b.read(&mut buf).unwrap(), 2);
        assert_eq!(&buf, b"he");
        drop(a);
        let mut rest = Vec::new();
        b.read_to_end(&mut rest).unwrap();
        assert_eq!(rest, b"llo");
    }
}
