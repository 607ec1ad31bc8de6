//! Wire framing for TraCI messages, commands and typed values.
//!
//! A message is `[total length: u32 BE][command]*`, where the total includes
//! its own four bytes. Each command is `[len: u8][id][payload]` when it fits
//! in 255 bytes and `[0x00][len: u32 BE][id][payload]` otherwise; both
//! lengths count the whole command including the length field.

use super::constants::*;
use super::CodecError;

const SHORT_HEADER: usize = 2;
const EXTENDED_HEADER: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraciCommand {
    pub id: u8,
    pub payload: Vec<u8>,
}

impl TraciCommand {
    pub fn new(id: u8, payload: Vec<u8>) -> Self {
        Self { id, payload }
    }

    /// Number of bytes this command occupies on the wire.
    pub fn encoded_len(&self) -> usize {
        let short = SHORT_HEADER + self.payload.len();
        if short <= u8::MAX as usize {
            short
        } else {
            EXTENDED_HEADER + self.payload.len()
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        let len = self.encoded_len();
        if len == SHORT_HEADER + self.payload.len() {
            out.push(len as u8);
        } else {
            let len = u32::try_from(len).map_err(|_| CodecError::CommandTooLarge(len))?;
            out.push(0);
            out.extend_from_slice(&len.to_be_bytes());
        }
        out.push(self.id);
        out.extend_from_slice(&self.payload);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraciMessage {
    pub commands: Vec<TraciCommand>,
}

impl TraciMessage {
    pub fn new(commands: Vec<TraciCommand>) -> Self {
        Self { commands }
    }

    /// Value of the leading length field: 4 plus every encoded command.
    pub fn total_length(&self) -> usize {
        4 + self.commands.iter().map(TraciCommand::encoded_len).sum::<usize>()
    }
}

pub fn encode_message(msg: &TraciMessage) -> Result<Vec<u8>, CodecError> {
    let total = msg.total_length();
    let total32 = u32::try_from(total).map_err(|_| CodecError::CommandTooLarge(total))?;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&total32.to_be_bytes());
    for cmd in &msg.commands {
        cmd.encode_into(&mut out)?;
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

/// Decodes exactly one message. The buffer must hold the whole frame and
/// nothing after it.
pub fn decode_message(bytes: &[u8]) -> Result<TraciMessage, CodecError> {
    let body = message_body(bytes)?;
    let mut reader = ByteReader::new(body);
    let mut commands = Vec::new();
    while !reader.is_empty() {
        commands.push(reader.read_command()?);
    }
    Ok(TraciMessage { commands })
}

/// Validates the length prefix and returns the bytes after it.
pub fn message_body(bytes: &[u8]) -> Result<&[u8], CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::Truncated { needed: 4, available: bytes.len() });
    }
    let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if declared < 4 {
        return Err(CodecError::Truncated { needed: 4, available: declared });
    }
    if declared > bytes.len() {
        return Err(CodecError::Truncated { needed: declared, available: bytes.len() });
    }
    if declared < bytes.len() {
        return Err(CodecError::MalformedCommand(format!(
            "{} trailing bytes after message",
            bytes.len() - declared
        )));
    }
    Ok(&bytes[4..])
}

/// Typed values as they appear in variable responses.
#[derive(Debug, Clone, PartialEq)]
pub enum TraciValue {
    Double(f64),
    Integer(i32),
    Text(String),
    TextList(Vec<String>),
    Position2D { x: f64, y: f64 },
    Color { r: u8, g: u8, b: u8, a: u8 },
}

impl TraciValue {
    pub fn type_tag(&self) -> u8 {
        match self {
            TraciValue::Double(_) => TYPE_DOUBLE,
            TraciValue::Integer(_) => TYPE_INTEGER,
            TraciValue::Text(_) => TYPE_STRING,
            TraciValue::TextList(_) => TYPE_STRINGLIST,
            TraciValue::Position2D { .. } => POSITION_2D,
            TraciValue::Color { .. } => TYPE_COLOR,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.type_tag());
        match self {
            TraciValue::Double(v) => out.extend_from_slice(&v.to_be_bytes()),
            TraciValue::Integer(v) => out.extend_from_slice(&v.to_be_bytes()),
            TraciValue::Text(s) => write_string(out, s),
            TraciValue::TextList(list) => write_string_list(out, list),
            TraciValue::Position2D { x, y } => {
                out.extend_from_slice(&x.to_be_bytes());
                out.extend_from_slice(&y.to_be_bytes());
            }
            TraciValue::Color { r, g, b, a } => out.extend_from_slice(&[*r, *g, *b, *a]),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TraciValue::Double(_) => "double",
            TraciValue::Integer(_) => "integer",
            TraciValue::Text(_) => "string",
            TraciValue::TextList(_) => "string list",
            TraciValue::Position2D { .. } => "2D position",
            TraciValue::Color { .. } => "color",
        }
    }
}

pub fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn write_string_list(out: &mut Vec<u8>, list: &[String]) {
    out.extend_from_slice(&(list.len() as u32).to_be_bytes());
    for s in list {
        write_string(out, s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultCode {
    Ok,
    Err,
    NotImplemented,
}

impl ResultCode {
    pub fn to_byte(self) -> u8 {
        match self {
            ResultCode::Ok => RTYPE_OK,
            ResultCode::Err => RTYPE_ERR,
            ResultCode::NotImplemented => RTYPE_NOTIMPLEMENTED,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            RTYPE_OK => Some(ResultCode::Ok),
            RTYPE_ERR => Some(ResultCode::Err),
            RTYPE_NOTIMPLEMENTED => Some(ResultCode::NotImplemented),
            _ => None,
        }
    }
}

/// The status block the server sends back for every command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusResponse {
    pub for_command: u8,
    pub result: ResultCode,
    pub description: String,
}

impl StatusResponse {
    pub fn ok(for_command: u8) -> Self {
        Self { for_command, result: ResultCode::Ok, description: String::new() }
    }

    pub fn err(for_command: u8, description: impl Into<String>) -> Self {
        let description = non_empty(description.into());
        Self { for_command, result: ResultCode::Err, description }
    }

    pub fn not_implemented(for_command: u8, description: impl Into<String>) -> Self {
        let description = non_empty(description.into());
        Self { for_command, result: ResultCode::NotImplemented, description }
    }

    pub fn to_command(&self) -> TraciCommand {
        let mut payload = Vec::with_capacity(5 + self.description.len());
        payload.push(self.result.to_byte());
        write_string(&mut payload, &self.description);
        TraciCommand::new(self.for_command, payload)
    }

    pub fn from_command(cmd: &TraciCommand) -> Result<Self, CodecError> {
        let mut r = ByteReader::new(&cmd.payload);
        let code = r.read_u8()?;
        let result = ResultCode::from_byte(code)
            .ok_or_else(|| CodecError::MalformedCommand(format!("unknown result code {code:#04x}")))?;
        let description = r.read_string()?;
        r.expect_end()?;
        Ok(Self { for_command: cmd.id, result, description })
    }
}

fn non_empty(s: String) -> String {
    if s.is_empty() {
        "unspecified error".to_owned()
    } else {
        s
    }
}

/// Bounds-checked big-endian reader. Every read either succeeds or returns a
/// typed error; nothing here panics on hostile input.
#[derive(Debug, Clone)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), CodecError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CodecError::MalformedCommand(format!("{} unexpected trailing bytes", self.remaining())))
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::MalformedCommand(format!(
                "need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn read_u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn read_u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_i32(&mut self) -> Result<i32, CodecError> {
        Ok(self.read_u32()? as i32)
    }

    pub fn read_f64(&mut self) -> Result<f64, CodecError> {
        let b = self.take(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(f64::from_be_bytes(arr))
    }

    pub fn read_string(&mut self) -> Result<String, CodecError> {
        let len = self.read_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CodecError::MalformedCommand("string is not valid UTF-8".into()))
    }

    pub fn read_string_list(&mut self) -> Result<Vec<String>, CodecError> {
        let count = self.read_u32()? as usize;
        // each entry needs at least its 4-byte length
        if count > self.remaining() / 4 {
            return Err(CodecError::MalformedCommand(format!("string list of {count} entries overruns buffer")));
        }
        (0..count).map(|_| self.read_string()).collect()
    }

    pub fn read_value(&mut self) -> Result<TraciValue, CodecError> {
        let tag = self.read_u8()?;
        Ok(match tag {
            TYPE_DOUBLE => TraciValue::Double(self.read_f64()?),
            TYPE_INTEGER => TraciValue::Integer(self.read_i32()?),
            TYPE_STRING => TraciValue::Text(self.read_string()?),
            TYPE_STRINGLIST => TraciValue::TextList(self.read_string_list()?),
            POSITION_2D => TraciValue::Position2D { x: self.read_f64()?, y: self.read_f64()? },
            TYPE_COLOR => {
                let b = self.take(4)?;
                TraciValue::Color { r: b[0], g: b[1], b: b[2], a: b[3] }
            }
            other => return Err(CodecError::UnknownType(other)),
        })
    }

    pub fn read_command(&mut self) -> Result<TraciCommand, CodecError> {
        let short = self.read_u8()? as usize;
        let (total, header) = if short == 0 {
            let ext = self.read_u32()? as usize;
            if ext < EXTENDED_HEADER {
                return Err(CodecError::MalformedCommand(format!("extended command length {ext} too small")));
            }
            (ext, EXTENDED_HEADER)
        } else {
            if short < SHORT_HEADER {
                return Err(CodecError::MalformedCommand(format!("command length {short} too small")));
            }
            (short, SHORT_HEADER)
        };
        let id = self.read_u8()?;
        let payload = self.take(total - header).map_err(|_| {
            CodecError::MalformedCommand(format!("command {id:#04x} declares {total} bytes, buffer too short"))
        })?;
        Ok(TraciCommand { id, payload: payload.to_vec() })
    }
}

/// Payload of a `get variable` request: `[var][object id]`.
pub fn get_variable_payload(var: u8, object_id: &str) -> Vec<u8> {
    let mut p = Vec::with_capacity(5 + object_id.len());
    p.push(var);
    write_string(&mut p, object_id);
    p
}

/// Payload of a `get variable` response: `[var][object id][typed value]`.
pub fn variable_response_payload(var: u8, object_id: &str, value: &TraciValue) -> Vec<u8> {
    let mut p = get_variable_payload(var, object_id);
    value.encode_into(&mut p);
    p
}

/// Parsed `get variable` response command.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableResponse {
    pub var: u8,
    pub object_id: String,
    pub value: TraciValue,
}

impl VariableResponse {
    pub fn from_command(cmd: &TraciCommand) -> Result<Self, CodecError> {
        let mut r = ByteReader::new(&cmd.payload);
        let var = r.read_u8()?;
        let object_id = r.read_string()?;
        let value = r.read_value()?;
        r.expect_end()?;
        Ok(Self { var, object_id, value })
    }
}
