//! Scenario files for the mock server.
//!
//! ```toml
//! step_length = 0.1
//!
//! [[vehicles]]
//! id = "car_0"
//! vtype = "passenger"
//! depart = 1.0
//! route = [[0.0, 0.0], [100.0, 0.0], [100.0, 50.0]]
//! # [seconds after departure, m/s]; piecewise constant, first entry at 0
//! speeds = [[0.0, 10.0], [4.0, 5.0]]
//!
//! [[lights]]
//! id = "J1"
//! program = [["GrGr", 5.0], ["yryr", 2.0], ["rGrG", 5.0]]
//! ```
//!
//! Coordinates are meters in the simulation plane.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Point2;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioVehicle {
    pub id: String,
    #[serde(default = "default_vtype")]
    pub vtype: String,
    pub depart: f64,
    pub route: Vec<[f64; 2]>,
    pub speeds: Vec<[f64; 2]>,
}

fn default_vtype() -> String {
    "passenger".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioLight {
    pub id: String,
    pub program: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub step_length: f64,
    #[serde(default)]
    pub vehicles: Vec<ScenarioVehicle>,
    #[serde(default)]
    pub lights: Vec<ScenarioLight>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return bad(format!("step_length must be positive, got {}", self.step_length));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.vehicles {
            if !seen.insert(v.id.as_str()) {
                return bad(format!("duplicate vehicle id '{}'", v.id));
            }
            if !(v.depart >= 0.0 && v.depart.is_finite()) {
                return bad(format!("vehicle '{}': depart must be >= 0", v.id));
            }
            if v.route.len() < 2 {
                return bad(format!("vehicle '{}': route needs at least 2 waypoints", v.id));
            }
            if v.route.iter().flatten().any(|c| !c.is_finite()) {
                return bad(format!("vehicle '{}': non-finite waypoint", v.id));
            }
            let length: f64 = v.route.windows(2).map(|w| point(w[0]).distance(point(w[1]))).sum();
            if length <= 0.0 {
                return bad(format!("vehicle '{}': route has zero length", v.id));
            }
            match v.speeds.first() {
                Some([t, _]) if *t == 0.0 => {}
                _ => return bad(format!("vehicle '{}': speed profile must start at 0", v.id)),
            }
            if v.speeds.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return bad(format!("vehicle '{}': speed profile times must increase", v.id));
            }
            if v.speeds.iter().any(|[t, s]| !t.is_finite() || !(*s >= 0.0 && s.is_finite())) {
                return bad(format!("vehicle '{}': speeds must be finite and >= 0", v.id));
            }
        }
        seen.clear();
        for l in &self.lights {
            if !seen.insert(l.id.as_str()) {
                return bad(format!("duplicate light id '{}'", l.id));
            }
            if l.program.is_empty() {
                return bad(format!("light '{}': empty program", l.id));
            }
            let len = l.program[0].0.chars().count();
            for (state, duration) in &l.program {
                if !(*duration > 0.0 && duration.is_finite()) {
                    return bad(format!("light '{}': phase durations must be positive", l.id));
                }
                if state.chars().count() != len {
                    return bad(format!("light '{}': phases differ in length", l.id));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn point(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}
