use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::geo::Point2;

/// One vehicle's kinematic sample at a simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: String,
    /// Meters in the simulation plane.
    pub position: Point2,
    /// TraCI heading: degrees clockwise from north.
    pub angle: f64,
    pub speed: f64,
    pub acceleration: f64,
    pub vtype: String,
    pub sim_time: f64,
}

/// Everything the producer learned in one simulation step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepFrame {
    pub sim_time: f64,
    pub departed: Vec<String>,
    pub arrived: Vec<String>,
    pub vehicles: Vec<VehicleState>,
    /// Vehicles still in the simulation whose query failed this step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    pub lights: BTreeMap<String, String>,
}

/// One atomic producer publication, shared read-only with the consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Publication {
    pub generation: u64,
    pub sim_time: f64,
    pub vehicles: HashMap<String, VehicleState>,
    pub skipped: Vec<String>,
    pub departed: Vec<String>,
    pub arrived: Vec<String>,
    pub lights: BTreeMap<String, String>,
    /// Seconds since the shared state's epoch.
    pub published_at: f64,
    /// How far the producer trails its wall-clock schedule, in seconds.
    pub step_lag: f64,
}

impl Publication {
    /// True while the vehicle is in the simulation, queried or not.
    pub fn is_live(&self, id: &str) -> bool {
        self.vehicles.contains_key(id) || self.skipped.iter().any(|s| s == id)
    }
}

#[derive(Debug, Default)]
struct Inner {
    latest: Option<Arc<Publication>>,
    pending: VecDeque<Arc<Publication>>,
    generation: u64,
    dropped: u64,
    terminal: Option<String>,
}

/// The producer/consumer hand-off.
///
/// The producer appends whole publications under a lock; the consumer drains
/// them in order. If the consumer falls more than `capacity` publications
/// behind, the oldest ones are discarded and counted.
#[derive(Debug)]
pub struct SharedTrafficState {
    inner: Mutex<Inner>,
    capacity: usize,
    epoch: Instant,
    stop: AtomicBool,
}

impl SharedTrafficState {
    pub fn new(capacity: usize) -> Self {
        Self { inner: Mutex::new(Inner::default()), capacity: capacity.max(1), epoch: Instant::now(), stop: AtomicBool::new(false) }
    }

    pub fn with_epoch(capacity: usize, epoch: Instant) -> Self {
        Self { epoch, ..Self::new(capacity) }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    /// Seconds elapsed since the epoch on the monotonic clock.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn publish(&self, frame: StepFrame, step_lag: f64) -> u64 {
        let published_at = self.now();
        self.publish_at(frame, step_lag, published_at)
    }

    /// Publishes with an explicit timestamp on the shared clock.
    pub fn publish_at(&self, frame: StepFrame, step_lag: f64, published_at: f64) -> u64 {
        let vehicles = frame.vehicles.into_iter().map(|v| (v.id.clone(), v)).collect();
        let mut inner = self.inner.lock();
        inner.generation += 1;
        let publication = Arc::new(Publication {
            generation: inner.generation,
            sim_time: frame.sim_time,
            vehicles,
            skipped: frame.skipped,
            departed: frame.departed,
            arrived: frame.arrived,
            lights: frame.lights,
            published_at,
            step_lag,
        });
        if inner.pending.len() >= self.capacity {
            inner.pending.pop_front();
            inner.dropped += 1;
        }
        inner.pending.push_back(Arc::clone(&publication));
        inner.latest = Some(publication);
        inner.generation
    }

    /// Takes every publication not yet seen by the consumer, oldest first.
    pub fn drain(&self) -> Vec<Arc<Publication>> {
        self.inner.lock().pending.drain(..).collect()
    }

    pub fn latest(&self) -> Option<Arc<Publication>> {
        self.inner.lock().latest.clone()
    }

    pub fn generation(&self) -> u64 {
        self.inner.lock().generation
    }

    /// Publications discarded because the consumer fell behind.
    pub fn dropped(&self) -> u64 {
        self.inner.lock().dropped
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Records why the producer died and asks everyone to stop.
    pub fn set_terminal_error(&self, message: String) {
        self.inner.lock().terminal = Some(message);
        self.request_stop();
    }

    pub fn terminal_error(&self) -> Option<String> {
        self.inner.lock().terminal.clone()
    }
}

/// Tuning for the producer/consumer pair. Distances are meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Request rate in Hz; the server's step length should be `1 / rate_n`.
    pub rate_n: f64,
    pub culling_radius: f64,
    /// Extra distance beyond the radius before a vehicle is despawned.
    /// Defaults to 5% of the radius.
    pub hysteresis: Option<f64>,
    pub cull_check_period: u32,
    pub height_check_period: u32,
    pub pool_sizes: BTreeMap<String, usize>,
    /// Initial size of pools for vehicle types not listed in `pool_sizes`.
    pub default_pool_size: usize,
    pub pool_growth: f64,
    /// Publications buffered between producer and consumer.
    pub queue_capacity: usize,
    /// Sample terrain ahead of and behind each vehicle to derive pitch.
    pub dual_raycast: bool,
    pub wheelbase: f64,
    /// Elevation used when a vehicle is outside the height field.
    pub fallback_elevation: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            rate_n: 10.0,
            culling_radius: 300.0,
            hysteresis: None,
            cull_check_period: 5,
            height_check_period: 10,
            pool_sizes: BTreeMap::new(),
            default_pool_size: 32,
            pool_growth: 1.5,
            queue_capacity: 256,
            dual_raycast: false,
            wheelbase: 2.7,
            fallback_elevation: 0.0,
        }
    }
}

impl BridgeConfig {
    pub fn hysteresis(&self) -> f64 {
        self.hysteresis.unwrap_or(0.05 * self.culling_radius)
    }

    pub fn step_length(&self) -> f64 {
        1.0 / self.rate_n
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_n > 0.0 && self.rate_n.is_finite()) {
            return Err(format!("rate_n must be positive, got {}", self.rate_n));
        }
        if !(self.culling_radius >= 0.0 && self.culling_radius.is_finite()) {
            return Err(format!("culling_radius must be non-negative, got {}", self.culling_radius));
        }
        if !(self.hysteresis() >= 0.0 && self.hysteresis().is_finite()) {
            return Err(format!("hysteresis must be non-negative, got {}", self.hysteresis()));
        }
        if self.cull_check_period < 1 || self.height_check_period < 1 {
            return Err("check periods must be at least 1 tick".into());
        }
        if !(self.pool_growth > 1.0 && self.pool_growth.is_finite()) {
            return Err(format!("pool_growth must exceed 1, got {}", self.pool_growth));
        }
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(format!("wheelbase must be positive, got {}", self.wheelbase));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64) -> StepFrame {
        StepFrame { sim_time: t, ..Default::default() }
    }

    #[test]
    fn generation_increments_per_publication() {
        let shared = SharedTrafficState::new(8);
        assert_eq!(shared.publish(frame(0.1), 0.0), 1);
        assert_eq!(shared.publish(frame(0.2), 0.0), 2);
        let drained = shared.drain();
        assert_eq!(drained.iter().map(|p| p.generation).collect::<Vec<_>>(), vec![1, 2]);
        assert!(shared.drain().is_empty());
        assert_eq!(shared.latest().unwrap().sim_time, 0.2);
    }

    #[test]
    fn overflow_drops_oldest() {
        let shared = SharedTrafficState::new(2);
        for i in 0..5 {
            shared.publish(frame(i as f64), 0.0);
        }
        assert_eq!(shared.dropped(), 3);
        let gens: Vec<_> = shared.drain().iter().map(|p| p.generation).collect();
        assert_eq!(gens, vec![4, 5]);
    }

    #[test]
    fn terminal_error_requests_stop() {
        let shared = SharedTrafficState::new(1);
        assert!(!shared.stop_requested());
        shared.set_terminal_error("gone".into());
        assert!(shared.stop_requested());
        assert_eq!(shared.terminal_error().as_deref(), Some("gone"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = BridgeConfig::default();
        assert_eq!(c.hysteresis(), 15.0);
        assert!(c.validate().is_ok());
        assert!(BridgeConfig { rate_n: 0.0, ..c.clone() }.validate().is_err());
        assert!(BridgeConfig { cull_check_period: 0, ..c.clone() }.validate().is_err());
        assert!(BridgeConfig { hysteresis: Some(-1.0), ..c }.validate().is_err());
    }
}
