//! Producer/consumer coupling between the traffic server and the scene.
//!
//! The producer ([`producer_loop`]) owns the traffic source and publishes one
//! [`Publication`] per simulation step into [`SharedTrafficState`]. The
//! [`Consumer`] drains those publications on its own clock, interpolates
//! every vehicle between its last two states, culls and pools them around
//! the listener and emits a [`SceneSnapshot`] per tick.

mod consumer;
pub mod cull;
pub mod interp;
pub mod pool;
mod producer;
mod snapshot;
mod state;

pub use consumer::{Consumer, FrameReport};
pub use cull::{cull_and_schedule, CullDecisions};
pub use interp::{EntityTable, InterpolatedEntity};
pub use pool::{PoolStats, SlotHandle, VehiclePool};
pub use producer::{
    producer_loop, spawn_producer, ProducerExit, ProducerReport, RecordingSource, ReplaySource, SourceError,
    TraciSource, TrafficSource,
};
pub use snapshot::{build_snapshot, SceneSnapshot, SnapshotContext, SnapshotLight, SnapshotStats, SnapshotVehicle};
pub use state::{BridgeConfig, Publication, SharedTrafficState, StepFrame, VehicleState};
