//! A deterministic TraCI server driven by a scenario file, standing in for
//! SUMO in tests and demos.
//!
//! Vehicles follow straight-line segments between waypoints at a
//! piecewise-constant speed and turn instantly at waypoints. Headings are
//! reported the way SUMO reports them, degrees clockwise from north. The
//! simulation only advances when a client sends a step command.

mod scenario;
mod server;
mod sim;

pub use scenario::{Scenario, ScenarioError, ScenarioLight, ScenarioVehicle};
pub use server::{AfterReply, MockOptions, MockServer, MockSession, MOCK_VERSION};
pub use sim::{MockSim, StepEvents, VehicleTrack};
