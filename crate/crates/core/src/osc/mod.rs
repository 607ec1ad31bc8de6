//! Gated vehicle kinematics over OSC 1.0.
//!
//! Every `send_interval` the consumer's current snapshot becomes one bundle:
//!
//! | address                   | tags       | arguments                                  |
//! |---------------------------|------------|--------------------------------------------|
//! | `/traffic/header`         | `,dfff`    | sim time (s), listener x, y, z (engine)    |
//! | `/traffic/vehicle`        | `,sfffff`  | id, x, y, z (engine), speed (m/s), accel (m/s²) |
//! | `/traffic/vehicle/remove` | `,s`       | id                                         |
//!
//! With `velocity_vector` the vehicle message carries `vx vy vz` (m/s in
//! engine axes) in place of the scalar speed. The timetag is always
//! "immediately".

mod codec;
mod gate;
mod stream;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode_osc, encode_osc, element_size, string_size, OscArg, OscBundle, OscMessage, OscPacket, BUNDLE_TAG, IMMEDIATELY};
pub use gate::{should_send, GateThresholds, OscVehicleRecord, SendReason, SentState};
pub use stream::{
    build_bundle, header_message, remove_message, split_bundle, vehicle_message, BuiltBundle, OscSender, OscStreamer,
    SendOutcome, HEADER_ADDRESS, REMOVE_ADDRESS, VEHICLE_ADDRESS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OscError {
    #[error("invalid OSC address pattern {0:?}")]
    InvalidAddress(String),
    #[error("unsupported OSC argument type '{0}'")]
    UnsupportedArgumentType(char),
    #[error("OSC string contains NUL: {0:?}")]
    InvalidString(String),
    #[error("OSC packet truncated")]
    Truncated,
    #[error("malformed OSC packet: {0}")]
    Malformed(String),
    #[error("bad OSC destination {0}")]
    Destination(String),
    #[error("invalid OSC config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscConfig {
    pub enabled: bool,
    /// Seconds between bundles.
    pub send_interval: f64,
    /// Meters.
    pub delta_pos: f64,
    /// m/s
    pub delta_vel: f64,
    /// Seconds.
    pub keep_alive: f64,
    /// `host:port`
    pub destination: String,
    /// Bytes per UDP datagram.
    pub datagram_limit: usize,
    pub velocity_vector: bool,
}

impl Default for OscConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            send_interval: 0.05,
            delta_pos: 0.5,
            delta_vel: 0.5,
            keep_alive: 2.0,
            destination: "127.0.0.1:9000".into(),
            datagram_limit: 1472,
            velocity_vector: false,
        }
    }
}

impl OscConfig {
    pub fn validate(&self) -> Result<(), OscError> {
        for (name, v) in [
            ("send_interval", self.send_interval),
            ("delta_pos", self.delta_pos),
            ("delta_vel", self.delta_vel),
            ("keep_alive", self.keep_alive),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OscError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        // the header alone is 48 bytes inside a bundle
        if self.datagram_limit < 64 {
            return Err(OscError::Config(format!("datagram_limit {} is too small", self.datagram_limit)));
        }
        Ok(())
    }
}
