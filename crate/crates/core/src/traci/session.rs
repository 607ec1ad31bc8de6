use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use log::{debug, info, warn};

use super::codec::{self, get_variable_payload, ByteReader, VariableResponse};
use super::constants::*;
use super::{CodecError, ResultCode, StatusResponse, TraciCommand, TraciError, TraciMessage, TraciValue};
use crate::bridge::VehicleState;
use crate::geo::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    pub delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 10, delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { retries: 0, delay: Duration::ZERO }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub sim_time: f64,
    pub departed_ids: Vec<String>,
    pub arrived_ids: Vec<String>,
}

/// One blocking TraCI connection. Requests are strictly sequential: each
/// call writes one message and reads its reply before returning.
#[derive(Debug)]
pub struct TraciSession {
    stream: TcpStream,
    api_version: Option<i32>,
    server_version: String,
    sim_time: f64,
}

/// What reply shape a request command expects after its status.
#[derive(Debug, Clone, Copy)]
enum Expect {
    Nothing,
    Version,
    Step,
    Variable(u8),
}

/// Per-command outcome of one exchange.
#[derive(Debug)]
enum Reply {
    Empty,
    Version(i32, String),
    Variable(VariableResponse),
    Rejected(StatusResponse),
}

const READ_TIMEOUT: Duration = Duration::from_secs(30);
/// Upper bound on a single reply, far above anything the bridge asks for.
const MAX_MESSAGE: usize = 256 * 1024 * 1024;

impl TraciSession {
    pub fn connect(host: &str, port: u16, retry: RetryPolicy) -> Result<Self, TraciError> {
        let addr = format!("{host}:{port}");
        let mut attempt = 0;
        let stream = loop {
            attempt += 1;
            let result = addr
                .to_socket_addrs()
                .and_then(|mut addrs| {
                    addrs.next().ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address"))
                })
                .and_then(|sa| TcpStream::connect_timeout(&sa, Duration::from_secs(5)));
            match result {
                Ok(s) => break s,
                Err(e) if attempt > retry.retries => {
                    return Err(TraciError::ConnectionRefused { addr, attempts: attempt, source: e });
                }
                Err(e) => {
                    debug!("connect to {addr} failed ({e}), retrying in {:?}", retry.delay);
                    std::thread::sleep(retry.delay);
                }
            }
        };
        Self::from_stream(stream)
    }

    /// Wraps an already connected stream and performs the version handshake.
    pub fn from_stream(stream: TcpStream) -> Result<Self, TraciError> {
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(READ_TIMEOUT)).ok();
        let mut session = Self { stream, api_version: None, server_version: String::new(), sim_time: 0.0 };
        session.handshake()?;
        Ok(session)
    }

    fn handshake(&mut self) -> Result<(), TraciError> {
        let cmd = TraciCommand::new(CMD_GETVERSION, Vec::new());
        let mut replies = self.exchange(vec![(cmd, Expect::Version)])?;
        match replies.pop() {
            Some(Reply::Version(api, version)) => {
                if api < MIN_API_VERSION {
                    return Err(TraciError::HandshakeMismatch(format!(
                        "server API version {api} is older than the supported minimum {MIN_API_VERSION}"
                    )));
                }
                info!("connected to '{version}' (TraCI API {api})");
                self.api_version = Some(api);
                self.server_version = version;
                Ok(())
            }
            Some(Reply::Rejected(st)) if st.result == ResultCode::NotImplemented => {
                warn!("server does not report a version: {}", st.description);
                Ok(())
            }
            other => Err(TraciError::HandshakeMismatch(format!("unexpected version reply {other:?}"))),
        }
    }

    pub fn api_version(&self) -> Option<i32> {
        self.api_version
    }

    pub fn server_version(&self) -> &str {
        &self.server_version
    }

    /// Simulation time reported by the most recent step.
    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    /// Advances the simulation. A `target_time` at or before the current
    /// time performs exactly one step, as the server does.
    pub fn step(&mut self, target_time: f64) -> Result<StepResult, TraciError> {
        let sim = |var| (TraciCommand::new(CMD_GET_SIM_VARIABLE, get_variable_payload(var, "")), Expect::Variable(var));
        let commands = vec![
            (TraciCommand::new(CMD_SIMSTEP, target_time.to_be_bytes().to_vec()), Expect::Step),
            sim(VAR_TIME),
            sim(VAR_DEPARTED_VEHICLES_IDS),
            sim(VAR_ARRIVED_VEHICLES_IDS),
        ];
        let mut replies = self.exchange(commands)?.into_iter();
        expect_ok(CMD_SIMSTEP, replies.next())?;
        let sim_time = as_double(expect_variable(CMD_GET_SIM_VARIABLE, replies.next())?)?;
        let departed_ids = as_text_list(expect_variable(CMD_GET_SIM_VARIABLE, replies.next())?)?;
        let arrived_ids = as_text_list(expect_variable(CMD_GET_SIM_VARIABLE, replies.next())?)?;
        self.sim_time = sim_time;
        Ok(StepResult { sim_time, departed_ids, arrived_ids })
    }

    /// The server's step length in seconds.
    pub fn delta_t(&mut self) -> Result<f64, TraciError> {
        let cmd = TraciCommand::new(CMD_GET_SIM_VARIABLE, get_variable_payload(VAR_DELTA_T, ""));
        let mut replies = self.exchange(vec![(cmd, Expect::Variable(VAR_DELTA_T))])?.into_iter();
        as_double(expect_variable(CMD_GET_SIM_VARIABLE, replies.next())?)
    }

    pub fn get_vehicle_state(&mut self, vehicle_id: &str) -> Result<VehicleState, TraciError> {
        self.get_vehicle_states(&[vehicle_id])?.pop().expect("one result per id")
    }

    /// Queries every id in one round trip. The outer error is fatal for the
    /// session; inner errors concern a single vehicle.
    pub fn get_vehicle_states<S: AsRef<str>>(
        &mut self,
        ids: &[S],
    ) -> Result<Vec<Result<VehicleState, TraciError>>, TraciError> {
        const VARS: [u8; 5] = [VAR_POSITION, VAR_ANGLE, VAR_SPEED, VAR_ACCELERATION, VAR_TYPE];
        let mut commands = Vec::with_capacity(ids.len() * VARS.len());
        for id in ids {
            for var in VARS {
                let payload = get_variable_payload(var, id.as_ref());
                commands.push((TraciCommand::new(CMD_GET_VEHICLE_VARIABLE, payload), Expect::Variable(var)));
            }
        }
        let replies = self.exchange(commands)?;
        let sim_time = self.sim_time;
        let mut out = Vec::with_capacity(ids.len());
        let mut replies = replies.into_iter();
        for id in ids {
            let id = id.as_ref();
            let chunk: Vec<Reply> = replies.by_ref().take(VARS.len()).collect();
            out.push(vehicle_from_replies(id, chunk, sim_time));
        }
        Ok(out)
    }

    pub fn get_traffic_light_state(&mut self, junction_id: &str) -> Result<String, TraciError> {
        self.get_traffic_light_states(&[junction_id])?.pop().expect("one result per id")
    }

    pub fn get_traffic_light_states<S: AsRef<str>>(
        &mut self,
        ids: &[S],
    ) -> Result<Vec<Result<String, TraciError>>, TraciError> {
        let commands = ids
            .iter()
            .map(|id| {
                let payload = get_variable_payload(TL_RED_YELLOW_GREEN_STATE, id.as_ref());
                (TraciCommand::new(CMD_GET_TL_VARIABLE, payload), Expect::Variable(TL_RED_YELLOW_GREEN_STATE))
            })
            .collect();
        let replies = self.exchange(commands)?;
        Ok(ids
            .iter()
            .zip(replies)
            .map(|(id, reply)| match expect_variable(CMD_GET_TL_VARIABLE, Some(reply)) {
                Err(TraciError::ServerError { description, .. }) if is_not_known(&description) => {
                    Err(TraciError::UnknownJunction(id.as_ref().to_owned()))
                }
                other => other.and_then(as_text),
            })
            .collect())
    }

    /// Asks the server to end the simulation and drops the connection.
    pub fn close(mut self) -> Result<(), TraciError> {
        let cmd = TraciCommand::new(CMD_CLOSE, Vec::new());
        self.exchange(vec![(cmd, Expect::Nothing)]).map(|_| ())
    }

    fn exchange(&mut self, commands: Vec<(TraciCommand, Expect)>) -> Result<Vec<Reply>, TraciError> {
        let expects: Vec<(u8, Expect)> = commands.iter().map(|(c, e)| (c.id, *e)).collect();
        let msg = TraciMessage::new(commands.into_iter().map(|(c, _)| c).collect());
        let bytes = codec::encode_message(&msg)?;
        self.stream.write_all(&bytes).map_err(lost)?;
        let reply = read_frame(&mut self.stream)?;
        parse_replies(codec::message_body(&reply)?, &expects)
    }
}

fn lost(e: std::io::Error) -> TraciError {
    TraciError::ConnectionLost(e.to_string())
}

/// Reads one length-prefixed frame, including the prefix.
pub(crate) fn read_frame(stream: &mut impl Read) -> Result<Vec<u8>, TraciError> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len).map_err(lost)?;
    let total = u32::from_be_bytes(len) as usize;
    if total < 4 {
        return Err(CodecError::Truncated { needed: 4, available: total }.into());
    }
    if total > MAX_MESSAGE {
        return Err(CodecError::MalformedCommand(format!("message of {total} bytes exceeds limit")).into());
    }
    let mut buf = vec![0u8; total];
    buf[..4].copy_from_slice(&len);
    stream.read_exact(&mut buf[4..]).map_err(lost)?;
    Ok(buf)
}

/// Walks a reply body: every request gets a status command, and successful
/// ones are followed by their result (a version command, a subscription
/// count for steps, or a variable response).
fn parse_replies(body: &[u8], expects: &[(u8, Expect)]) -> Result<Vec<Reply>, TraciError> {
    let mut r = ByteReader::new(body);
    let mut out = Vec::with_capacity(expects.len());
    for &(id, expect) in expects {
        let status = StatusResponse::from_command(&r.read_command()?)?;
        if status.for_command != id {
            return Err(TraciError::UnexpectedResponse(format!(
                "status for {:#04x} while waiting for {id:#04x}",
                status.for_command
            )));
        }
        if status.result != ResultCode::Ok {
            out.push(Reply::Rejected(status));
            continue;
        }
        out.push(match expect {
            Expect::Nothing => Reply::Empty,
            Expect::Version => {
                let cmd = r.read_command()?;
                if cmd.id != CMD_GETVERSION {
                    return Err(TraciError::HandshakeMismatch(format!("version reply has id {:#04x}", cmd.id)));
                }
                let mut v = ByteReader::new(&cmd.payload);
                let api = v.read_i32()?;
                let name = v.read_string()?;
                Reply::Version(api, name)
            }
            Expect::Step => {
                let subscriptions = r.read_i32()?;
                for _ in 0..subscriptions.max(0) {
                    r.read_command()?;
                }
                Reply::Empty
            }
            Expect::Variable(var) => {
                let cmd = r.read_command()?;
                if cmd.id != id.wrapping_add(0x10) {
                    return Err(TraciError::UnexpectedResponse(format!(
                        "response id {:#04x} for request {id:#04x}",
                        cmd.id
                    )));
                }
                let resp = VariableResponse::from_command(&cmd)?;
                if resp.var != var {
                    return Err(TraciError::UnexpectedResponse(format!(
                        "variable {:#04x} while waiting for {var:#04x}",
                        resp.var
                    )));
                }
                Reply::Variable(resp)
            }
        });
    }
    r.expect_end()?;
    Ok(out)
}

fn expect_ok(command: u8, reply: Option<Reply>) -> Result<(), TraciError> {
    match reply {
        Some(Reply::Empty) => Ok(()),
        Some(Reply::Rejected(st)) => Err(TraciError::ServerError { command, description: st.description }),
        other => Err(TraciError::UnexpectedResponse(format!("{other:?}"))),
    }
}

fn expect_variable(command: u8, reply: Option<Reply>) -> Result<TraciValue, TraciError> {
    match reply {
        Some(Reply::Variable(v)) => Ok(v.value),
        Some(Reply::Rejected(st)) => Err(TraciError::ServerError { command, description: st.description }),
        other => Err(TraciError::UnexpectedResponse(format!("{other:?}"))),
    }
}

fn type_error(expected: &str, got: &TraciValue) -> TraciError {
    TraciError::UnexpectedResponse(format!("expected {expected}, got {}", got.kind()))
}

fn as_double(v: TraciValue) -> Result<f64, TraciError> {
    match v {
        TraciValue::Double(d) => Ok(d),
        other => Err(type_error("double", &other)),
    }
}

fn as_text(v: TraciValue) -> Result<String, TraciError> {
    match v {
        TraciValue::Text(s) => Ok(s),
        other => Err(type_error("string", &other)),
    }
}

fn as_text_list(v: TraciValue) -> Result<Vec<String>, TraciError> {
    match v {
        TraciValue::TextList(l) => Ok(l),
        other => Err(type_error("string list", &other)),
    }
}

fn is_not_known(description: &str) -> bool {
    description.contains("not known")
}

fn vehicle_from_replies(id: &str, replies: Vec<Reply>, sim_time: f64) -> Result<VehicleState, TraciError> {
    let mut values = Vec::with_capacity(replies.len());
    for reply in replies {
        match expect_variable(CMD_GET_VEHICLE_VARIABLE, Some(reply)) {
            Ok(v) => values.push(v),
            Err(TraciError::ServerError { description, .. }) if is_not_known(&description) => {
                return Err(TraciError::UnknownVehicle(id.to_owned()));
            }
            Err(e) => return Err(e),
        }
    }
    let mut it = values.into_iter();
    let position = match it.next() {
        Some(TraciValue::Position2D { x, y }) => Point2::new(x, y),
        Some(other) => return Err(type_error("2D position", &other)),
        None => return Err(TraciError::UnexpectedResponse("missing position".into())),
    };
    let mut next_value = || it.next().ok_or_else(|| TraciError::UnexpectedResponse("missing value".into()));
    let angle = as_double(next_value()?)?;
    let speed = as_double(next_value()?)?;
    let acceleration = as_double(next_value()?)?;
    let vtype = as_text(next_value()?)?;
    Ok(VehicleState { id: id.to_owned(), position, angle, speed, acceleration, vtype, sim_time })
}
