//! Live serving: one operator over the WebSocket gateway, the robot
//! simulated in-process, paced in real time.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener};
use std::time::{Duration, Instant};

use eskin_core::weighing;
use eskin_protocol::transport::{GatewayInbound, Telemetry, TelemetryClock, TransportError, WsGateway};
use eskin_protocol::{Endpoint, SessionState, Stage};

use crate::config::ScenarioConfig;
use crate::duplex::Duplex;
use crate::robot::RobotSim;
use crate::CliError;

pub struct LiveOutcome {
    pub duplex: Duplex,
    pub operator_disconnected: bool,
}

pub fn bind(config: &ScenarioConfig) -> Result<TcpListener, CliError> {
    let addr: SocketAddr = config
        .endpoints
        .gateway
        .parse()
        .map_err(|e| CliError::Config(format!("gateway address {:?}: {e}", config.endpoints.gateway)))?;
    Ok(TcpListener::bind(addr)?)
}

/// Serves one session on `listener` until stage 6 or operator loss.
pub fn serve(config: &ScenarioConfig, listener: &TcpListener, seed: u64) -> Result<LiveOutcome, CliError> {
    let geom = config.geometry()?;
    let material = config.material(&config.robot.material)?;
    let robot = RobotSim::new(config.robot.clone(), material, geom, config.noise, seed)?;
    let mut d = Duplex::new(SessionState::new(config.session), robot);

    let mut gw = WsGateway::accept(listener).map_err(transport)?;
    gw.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let mut clock = TelemetryClock::default();
    let start = Instant::now();
    let tick = Duration::from_secs_f64(weighing::DT_S);
    let mut next_tick = start + tick;
    let mut disconnected = false;

    while d.stage() != Stage::Confirm {
        let mut replies = Vec::new();
        match gw.recv() {
            Ok(GatewayInbound::Frame(m)) => replies.extend(d.from_operator(m)),
            Ok(GatewayInbound::Text(_)) => {}
            Err(TransportError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(TransportError::Decode(_)) => {}
            Err(_) => {
                d.disconnect(Endpoint::Operator);
                disconnected = true;
                break;
            }
        }
        if Instant::now() >= next_tick {
            next_tick += tick;
            replies.extend(d.tick());
        }
        for m in &replies {
            gw.send(m).map_err(transport)?;
        }
        let now_ms = start.elapsed().as_secs_f64() * 1000.0;
        if clock.due(now_ms) {
            gw.send_telemetry(&Telemetry::new(d.stage().number(), d.state.mass_g, d.state.target_g)).map_err(transport)?;
        }
    }
    if !disconnected {
        gw.send_telemetry(&Telemetry::new(d.stage().number(), d.state.mass_g, d.state.target_g)).map_err(transport)?;
        let _ = gw.close();
    }
    Ok(LiveOutcome { duplex: d, operator_disconnected: disconnected })
}

fn transport(e: TransportError) -> CliError {
    CliError::Transport(e.to_string())
}
