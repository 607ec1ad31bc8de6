//! TCP front end speaking the TraCI subset the bridge uses.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, info, warn};

use crate::traci::codec::{variable_response_payload, write_string};
use crate::traci::constants::*;
use crate::traci::{ByteReader, CodecError, StatusResponse, TraciCommand, TraciValue};

use super::scenario::Scenario;
use super::sim::MockSim;

pub const MOCK_VERSION: &str = "SUMO mock";
const POLL: Duration = Duration::from_millis(20);
const MAX_MESSAGE: usize = 64 << 20;

/// One client's view of the simulation. Pure: bytes in, bytes out.
#[derive(Debug, Clone)]
pub struct MockSession {
    sim: MockSim,
}

/// What the server does after answering a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfterReply {
    Continue,
    Close,
}

impl MockSession {
    pub fn new(scenario: &Scenario) -> Self {
        Self { sim: MockSim::new(scenario) }
    }

    pub fn sim(&self) -> &MockSim {
        &self.sim
    }

    /// Answers one complete message, length prefix included. A message the
    /// server cannot split into commands gets an error status for the
    /// commands read so far and for the broken one.
    pub fn handle_message(&mut self, bytes: &[u8]) -> (Vec<u8>, AfterReply) {
        let mut out = vec![0; 4];
        let mut after = AfterReply::Continue;
        let body = bytes.get(4..).unwrap_or_default();
        let mut reader = ByteReader::new(body);
        while !reader.is_empty() {
            let rest = &body[body.len() - reader.remaining()..];
            let cmd = match reader.read_command() {
                Ok(cmd) => cmd,
                Err(e) => {
                    let id = if rest[0] == 0 { rest.get(5) } else { rest.get(1) }.copied();
                    push_status(&mut out, &StatusResponse::err(id.unwrap_or(0), e.to_string()));
                    break;
                }
            };
            if self.handle_command(&cmd, &mut out) == AfterReply::Close {
                after = AfterReply::Close;
                break;
            }
        }
        let total = out.len() as u32;
        out[..4].copy_from_slice(&total.to_be_bytes());
        (out, after)
    }

    fn handle_command(&mut self, cmd: &TraciCommand, out: &mut Vec<u8>) -> AfterReply {
        match cmd.id {
            CMD_GETVERSION => {
                push_status(out, &StatusResponse::ok(cmd.id));
                let mut payload = CURRENT_API_VERSION.to_be_bytes().to_vec();
                write_string(&mut payload, MOCK_VERSION);
                push_command(out, TraciCommand::new(CMD_GETVERSION, payload));
            }
            CMD_SIMSTEP => match <[u8; 8]>::try_from(cmd.payload.as_slice()) {
                Ok(raw) => {
                    self.sim.advance_to(f64::from_be_bytes(raw));
                    push_status(out, &StatusResponse::ok(cmd.id));
                    // no subscriptions
                    out.extend_from_slice(&0i32.to_be_bytes());
                }
                Err(_) => push_status(
                    out,
                    &StatusResponse::err(cmd.id, format!("simulation step expects an 8-byte time, got {} bytes", cmd.payload.len())),
                ),
            },
            CMD_CLOSE => {
                push_status(out, &StatusResponse::ok(cmd.id));
                return AfterReply::Close;
            }
            CMD_GET_SIM_VARIABLE | CMD_GET_VEHICLE_VARIABLE | CMD_GET_TL_VARIABLE => {
                match parse_get(&cmd.payload).map_err(|e| e.to_string()).and_then(|(var, id)| {
                    self.variable(cmd.id, var, &id).map(|v| (var, id, v))
                }) {
                    Ok((var, id, value)) => {
                        push_status(out, &StatusResponse::ok(cmd.id));
                        let payload = variable_response_payload(var, &id, &value);
                        push_command(out, TraciCommand::new(cmd.id + 0x10, payload));
                    }
                    Err(msg) => push_status(out, &StatusResponse::err(cmd.id, msg)),
                }
            }
            other => push_status(
                out,
                &StatusResponse::not_implemented(other, format!("command {other:#04x} is not implemented by the mock")),
            ),
        }
        AfterReply::Continue
    }

    fn variable(&self, domain: u8, var: u8, id: &str) -> Result<TraciValue, String> {
        let unsupported = || Err(format!("variable {var:#04x} is not supported for command {domain:#04x}"));
        match domain {
            CMD_GET_SIM_VARIABLE => Ok(match var {
                VAR_TIME => TraciValue::Double(self.sim.time()),
                VAR_DELTA_T => TraciValue::Double(self.sim.step_length()),
                VAR_DEPARTED_VEHICLES_IDS => TraciValue::TextList(self.sim.last_events().departed.clone()),
                VAR_ARRIVED_VEHICLES_IDS => TraciValue::TextList(self.sim.last_events().arrived.clone()),
                _ => return unsupported(),
            }),
            CMD_GET_VEHICLE_VARIABLE => {
                if var == ID_LIST {
                    return Ok(TraciValue::TextList(self.sim.active_ids()));
                }
                let v = self.sim.vehicle(id).ok_or_else(|| format!("Vehicle '{id}' is not known"))?;
                Ok(match var {
                    VAR_POSITION => TraciValue::Position2D { x: v.position.x, y: v.position.y },
                    VAR_ANGLE => TraciValue::Double(v.angle),
                    VAR_SPEED => TraciValue::Double(v.speed),
                    VAR_ACCELERATION => TraciValue::Double(v.acceleration),
                    VAR_TYPE => TraciValue::Text(v.vtype),
                    _ => return unsupported(),
                })
            }
            _ => {
                if var == ID_LIST {
                    return Ok(TraciValue::TextList(self.sim.light_ids()));
                }
                let state = self.sim.light_state(id).ok_or_else(|| format!("Traffic light '{id}' is not known"))?;
                match var {
                    TL_RED_YELLOW_GREEN_STATE => Ok(TraciValue::Text(state.to_owned())),
                    _ => unsupported(),
                }
            }
        }
    }
}

fn parse_get(payload: &[u8]) -> Result<(u8, String), CodecError> {
    let mut r = ByteReader::new(payload);
    let var = r.read_u8()?;
    let id = r.read_string()?;
    r.expect_end()?;
    Ok((var, id))
}

fn push_status(out: &mut Vec<u8>, status: &StatusResponse) {
    push_command(out, status.to_command());
}

fn push_command(out: &mut Vec<u8>, cmd: TraciCommand) {
    cmd.encode_into(out).expect("mock replies are small");
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Drop the connection, unanswered, when this many messages have been
    /// received on it. Simulates a crashing server.
    pub close_after_messages: Option<u64>,
}

/// A mock TraCI server on its own thread. One client at a time; every new
/// connection starts the scenario from time zero.
#[derive(Debug)]
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(scenario: Scenario, bind: &str) -> std::io::Result<Self> {
        Self::start_with(scenario, bind, MockOptions::default())
    }

    pub fn start_with(scenario: Scenario, bind: &str, options: MockOptions) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(AtomicU64::new(0));
        let handle = {
            let stop = stop.clone();
            let connections = connections.clone();
            std::thread::Builder::new()
                .name("mock-traci".into())
                .spawn(move || accept_loop(listener, scenario, options, &stop, &connections))?
        };
        info!("mock TraCI server listening on {addr}");
        Ok(Self { addr, stop, connections, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Connections accepted so far.
    pub fn connections(&self) -> u64 {
        self.connections.load(Ordering::Relaxed)
    }

    pub fn is_running(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(listener: TcpListener, scenario: Scenario, options: MockOptions, stop: &AtomicBool, count: &AtomicU64) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                count.fetch_add(1, Ordering::Relaxed);
                debug!("mock: client {peer} connected");
                if let Err(e) = serve_client(stream, MockSession::new(&scenario), &options, stop) {
                    debug!("mock: client {peer} ended: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                warn!("mock: accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
}

fn serve_client(mut stream: TcpStream, mut session: MockSession, options: &MockOptions, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut pending: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 64 * 1024];
    let mut received = 0u64;
    loop {
        // answer every complete message already buffered
        while pending.len() >= 4 {
            let total = u32::from_be_bytes([pending[0], pending[1], pending[2], pending[3]]) as usize;
            if !(4..=MAX_MESSAGE).contains(&total) {
                return Err(std::io::Error::new(ErrorKind::InvalidData, format!("bad message length {total}")));
            }
            if pending.len() < total {
                break;
            }
            received += 1;
            if options.close_after_messages.is_some_and(|n| received >= n) {
                return Ok(());
            }
            let (reply, after) = session.handle_message(&pending[..total]);
            pending.drain(..total);
            stream.write_all(&reply)?;
            if after == AfterReply::Close {
                return Ok(());
            }
        }
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => pending.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traci::codec::get_variable_payload;
    use crate::traci::{decode_message, encode_message, TraciMessage};

    fn session() -> MockSession {
        MockSession::new(
            &Scenario::parse(
                "step_length = 0.5\n[[vehicles]]\nid = \"a\"\ndepart = 0.0\nroute = [[0.0, 0.0], [0.0, 100.0]]\nspeeds = [[0.0, 2.0]]\n",
            )
            .unwrap(),
        )
    }

    fn ask(s: &mut MockSession, cmds: Vec<TraciCommand>) -> Vec<u8> {
        s.handle_message(&encode_message(&TraciMessage::new(cmds)).unwrap()).0
    }

    #[test]
    fn simstep_reply_layout() {
        let reply = ask(&mut session(), vec![TraciCommand::new(CMD_SIMSTEP, 0f64.to_be_bytes().to_vec())]);
        // status [len 7][0x02][OK][empty string] then the subscription count
        assert_eq!(reply, [0, 0, 0, 15, 7, 0x02, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn unknown_command_is_not_implemented() {
        let reply = ask(&mut session(), vec![TraciCommand::new(0x33, vec![])]);
        let msg = decode_message(&reply).unwrap();
        let st = StatusResponse::from_command(&msg.commands[0]).unwrap();
        assert_eq!(st.result, crate::traci::ResultCode::NotImplemented);
    }

    #[test]
    fn unknown_vehicle_is_an_error_status() {
        let reply = ask(&mut session(), vec![TraciCommand::new(CMD_GET_VEHICLE_VARIABLE, get_variable_payload(VAR_SPEED, "zz"))]);
        let msg = decode_message(&reply).unwrap();
        let st = StatusResponse::from_command(&msg.commands[0]).unwrap();
        assert_eq!(st.description, "Vehicle 'zz' is not known");
    }

    #[test]
    fn broken_framing_gets_an_error_and_session_survives() {
        let mut s = session();
        let (reply, after) = s.handle_message(&[0, 0, 0, 7, 9, 0xab, 0]);
        assert_eq!(after, AfterReply::Continue);
        let msg = decode_message(&reply).unwrap();
        let st = StatusResponse::from_command(&msg.commands[0]).unwrap();
        assert_eq!(st.for_command, 0xab);
        assert_eq!(st.result, crate::traci::ResultCode::Err);
        let reply = ask(&mut s, vec![TraciCommand::new(CMD_GETVERSION, vec![])]);
        assert_eq!(decode_message(&reply).unwrap().commands.len(), 2);
    }

    #[test]
    fn no_step_no_time() {
        let mut s = session();
        ask(&mut s, vec![TraciCommand::new(CMD_SIMSTEP, 0f64.to_be_bytes().to_vec())]);
        let before = s.sim().time();
        ask(&mut s, vec![TraciCommand::new(CMD_GET_SIM_VARIABLE, get_variable_payload(VAR_TIME, ""))]);
        assert_eq!(s.sim().time(), before);
    }
}
