//! Couples a TraCI traffic server to an interpolated, culled scene state and
//! an OSC stream for external auralization.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`traci`] speaks the binary TraCI protocol subset used by the bridge.
//! * [`net`] reads SUMO `.net.xml` files and plans traffic-light placement.
//! * [`geo`] maps simulation coordinates into engine space and snaps heights.
//! * [`bridge`] holds the producer/consumer machinery, interpolation,
//!   culling and pooling.
//! * [`osc`] encodes and gates the vehicle stream sent to the audio engine.
//! * [`mock`] is a deterministic scripted TraCI server.

pub mod bridge;
pub mod geo;
pub mod mock;
pub mod net;
pub mod osc;
pub mod traci;

pub use geo::{Point2, Point3};
