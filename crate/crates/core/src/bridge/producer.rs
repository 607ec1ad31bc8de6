//! The network-side half of the bridge: one step plus queries per period,
//! published as a single batch.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use crate::traci::{TraciError, TraciSession};

use super::{SharedTrafficState, StepFrame};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("traffic source lost: {0}")]
    Lost(String),
    #[error("traffic source exhausted")]
    Finished,
}

/// Anything that can produce one simulation step's worth of data.
pub trait TrafficSource: Send {
    /// Simulated seconds per call to [`TrafficSource::next_frame`].
    fn step_length(&self) -> f64;
    fn next_frame(&mut self) -> Result<StepFrame, SourceError>;
}

/// Polls a live TraCI session: one step, then every active vehicle and
/// every planned traffic light.
#[derive(Debug)]
pub struct TraciSource {
    session: TraciSession,
    active: BTreeSet<String>,
    light_ids: Vec<String>,
    step_length: f64,
}

impl TraciSource {
    pub fn new(mut session: TraciSession, light_ids: Vec<String>) -> Result<Self, TraciError> {
        let step_length = session.delta_t()?;
        info!("server step length {step_length} s");
        Ok(Self { session, active: BTreeSet::new(), light_ids, step_length })
    }

    pub fn into_session(self) -> TraciSession {
        self.session
    }
}

impl TrafficSource for TraciSource {
    fn step_length(&self) -> f64 {
        self.step_length
    }

    fn next_frame(&mut self) -> Result<StepFrame, SourceError> {
        let fatal = |e: TraciError| SourceError::Lost(e.to_string());
        let step = self.session.step(0.0).map_err(fatal)?;
        self.active.extend(step.departed_ids.iter().cloned());
        for id in &step.arrived_ids {
            self.active.remove(id);
        }

        let ids: Vec<&String> = self.active.iter().collect();
        let results = if ids.is_empty() { Vec::new() } else { self.session.get_vehicle_states(&ids).map_err(fatal)? };
        let mut vehicles = Vec::with_capacity(results.len());
        let mut skipped = Vec::new();
        let mut unknown = Vec::new();
        for (id, result) in ids.into_iter().zip(results) {
            match result {
                Ok(v) => vehicles.push(v),
                Err(TraciError::UnknownVehicle(_)) => {
                    warn!("vehicle '{id}' vanished without an arrival notice");
                    unknown.push(id.clone());
                }
                Err(e) => {
                    warn!("skipping vehicle '{id}' this step: {e}");
                    skipped.push(id.clone());
                }
            }
        }
        for id in &unknown {
            self.active.remove(id);
        }

        let mut lights = std::collections::BTreeMap::new();
        if !self.light_ids.is_empty() {
            let states = self.session.get_traffic_light_states(&self.light_ids).map_err(fatal)?;
            for (id, state) in self.light_ids.iter().zip(states) {
                match state {
                    Ok(s) => {
                        lights.insert(id.clone(), s);
                    }
                    Err(e) => debug!("no state for traffic light '{id}': {e}"),
                }
            }
        }
        Ok(StepFrame {
            sim_time: step.sim_time,
            departed: step.departed_ids,
            arrived: step.arrived_ids,
            vehicles,
            skipped,
            lights,
        })
    }
}

/// Plays back frames recorded by [`RecordingSource`], one JSON object per
/// line.
#[derive(Debug)]
pub struct ReplaySource {
    frames: std::vec::IntoIter<StepFrame>,
    step_length: f64,
}

impl ReplaySource {
    pub fn from_frames(frames: Vec<StepFrame>, step_length: f64) -> Self {
        Self { frames: frames.into_iter(), step_length }
    }

    /// Reads a capture. The step length is the spacing of the first two
    /// frames, or `fallback_step` for shorter captures.
    pub fn read(reader: impl BufRead, fallback_step: f64) -> Result<Self, String> {
        let mut frames = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: StepFrame =
                serde_json::from_str(&line).map_err(|e| format!("capture line {}: {e}", n + 1))?;
            frames.push(frame);
        }
        let step = match frames.as_slice() {
            [a, b, ..] if b.sim_time > a.sim_time => b.sim_time - a.sim_time,
            _ => fallback_step,
        };
        Ok(Self::from_frames(frames, step))
    }
}

impl TrafficSource for ReplaySource {
    fn step_length(&self) -> f64 {
        self.step_length
    }

    fn next_frame(&mut self) -> Result<StepFrame, SourceError> {
        self.frames.next().ok_or(SourceError::Finished)
    }
}

/// Passes frames through while appending each as a JSON line to `sink`.
pub struct RecordingSource<S, W> {
    inner: S,
    sink: W,
}

impl<S: TrafficSource, W: Write + Send> RecordingSource<S, W> {
    pub fn new(inner: S, sink: W) -> Self {
        Self { inner, sink }
    }

    pub fn into_parts(self) -> (S, W) {
        (self.inner, self.sink)
    }
}

impl<S: TrafficSource, W: Write + Send> TrafficSource for RecordingSource<S, W> {
    fn step_length(&self) -> f64 {
        self.inner.step_length()
    }

    fn next_frame(&mut self) -> Result<StepFrame, SourceError> {
        let frame = self.inner.next_frame()?;
        let line = serde_json::to_string(&frame).map_err(|e| SourceError::Lost(e.to_string()))?;
        writeln!(self.sink, "{line}").map_err(|e| SourceError::Lost(format!("writing capture: {e}")))?;
        Ok(frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProducerExit {
    Stopped,
    SourceFinished,
    Lost(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProducerReport {
    pub publications: u64,
    /// Iterations that took longer than one period.
    pub overruns: u64,
    pub max_step_lag: f64,
    /// Per-publication lag in seconds, in order.
    pub step_lags: Vec<f64>,
    pub exit: ProducerExit,
}

/// Runs the source at `1 / step_length` Hz until stopped.
///
/// Iteration `k` is scheduled at `start + k * period`. An iteration that
/// overruns is followed immediately by the next one and the schedule is
/// re-anchored rather than compressed, so the producer never bursts to catch
/// up; the accumulated delay is published as `step_lag`.
pub fn producer_loop(source: &mut dyn TrafficSource, shared: &SharedTrafficState) -> ProducerReport {
    let period = Duration::from_secs_f64(source.step_length());
    let start = Instant::now();
    let mut scheduled = start;
    let mut report = ProducerReport {
        publications: 0,
        overruns: 0,
        max_step_lag: 0.0,
        step_lags: Vec::new(),
        exit: ProducerExit::Stopped,
    };
    let mut k: u32 = 0;
    loop {
        if shared.stop_requested() {
            break;
        }
        let began = Instant::now();
        let ideal = start + period * k;
        let lag = began.saturating_duration_since(ideal).as_secs_f64();
        match source.next_frame() {
            Ok(frame) => {
                shared.publish(frame, lag);
                report.publications += 1;
                report.step_lags.push(lag);
                report.max_step_lag = report.max_step_lag.max(lag);
            }
            Err(SourceError::Finished) => {
                report.exit = ProducerExit::SourceFinished;
                shared.request_stop();
                break;
            }
            Err(SourceError::Lost(msg)) => {
                warn!("producer stopping: {msg}");
                shared.set_terminal_error(msg.clone());
                report.exit = ProducerExit::Lost(msg);
                break;
            }
        }
        k += 1;
        scheduled += period;
        let now = Instant::now();
        if now > scheduled {
            report.overruns += 1;
            scheduled = now;
        } else {
            std::thread::sleep(scheduled - now);
        }
    }
    report
}

/// Runs [`producer_loop`] on its own thread.
pub fn spawn_producer<S: TrafficSource + 'static>(
    mut source: S,
    shared: Arc<SharedTrafficState>,
) -> JoinHandle<(ProducerReport, S)> {
    std::thread::Builder::new()
        .name("bridge-producer".into())
        .spawn(move || {
            let report = producer_loop(&mut source, &shared);
            (report, source)
        })
        .expect("spawning producer thread")
}
