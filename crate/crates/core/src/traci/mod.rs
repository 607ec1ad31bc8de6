//! TraCI client: binary codec plus a blocking TCP session.

pub mod codec;
pub mod constants;
mod session;

pub use codec::{
    decode_message, encode_message, ByteReader, ResultCode, StatusResponse, TraciCommand, TraciMessage,
    TraciValue, VariableResponse,
};
pub use session::{RetryPolicy, StepResult, TraciSession};

use thiserror::Error;

/// Failures while framing or parsing bytes. Never produced by I/O.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("command of {0} bytes exceeds the 4-byte extended length")]
    CommandTooLarge(usize),
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed command: {0}")]
    MalformedCommand(String),
    #[error("unknown value type tag {0:#04x}")]
    UnknownType(u8),
}

#[derive(Debug, Error)]
pub enum TraciError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection to {addr} refused after {attempts} attempts: {source}")]
    ConnectionRefused {
        addr: String,
        attempts: u32,
        #[source]
        source: std::io::Error,
    },
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("server rejected command {command:#04x}: {description}")]
    ServerError { command: u8, description: String },
    #[error("unknown vehicle '{0}'")]
    UnknownVehicle(String),
    #[error("unknown junction '{0}'")]
    UnknownJunction(String),
    #[error("unexpected response: {0}")]
    UnexpectedResponse(String),
}

impl TraciError {
    /// True when the session can no longer be used.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            TraciError::ConnectionLost(_) | TraciError::ConnectionRefused { .. } | TraciError::HandshakeMismatch(_)
        )
    }
}
