//! Bridge lifecycle: connect, plan lights, run producer and consumer, stream
//! OSC and snapshots, shut down in order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde::Serialize;

use traffic_bridge::bridge::{
    spawn_producer, Consumer, ProducerExit, RecordingSource, ReplaySource, SceneSnapshot, SharedTrafficState,
    SourceError, StepFrame, TraciSource, TrafficSource,
};
use traffic_bridge::geo::HeightField;
use traffic_bridge::net::{parse_network, plan_traffic_lights, Network, TrafficLightPlan};
use traffic_bridge::osc::{OscSender, OscStreamer};
use traffic_bridge::traci::TraciSession;

use crate::config::AppConfig;
use crate::scene::SceneServer;
use crate::stats::{percentile, rss_kb, write_line, StatsLine};

/// Where traffic comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceMode {
    Live,
    /// Live, with every step appended to a capture file.
    Capture(PathBuf),
    /// A capture file; no server needed.
    Replay(PathBuf),
}

enum AppSource {
    Live(TraciSource),
    Capture(RecordingSource<TraciSource, BufWriter<File>>),
    Replay(ReplaySource),
}

impl TrafficSource for AppSource {
    fn step_length(&self) -> f64 {
        match self {
            AppSource::Live(s) => s.step_length(),
            AppSource::Capture(s) => s.step_length(),
            AppSource::Replay(s) => s.step_length(),
        }
    }

    fn next_frame(&mut self) -> Result<StepFrame, SourceError> {
        match self {
            AppSource::Live(s) => s.next_frame(),
            AppSource::Capture(s) => s.next_frame(),
            AppSource::Replay(s) => s.next_frame(),
        }
    }
}

impl AppSource {
    fn close(self) {
        let session = match self {
            AppSource::Live(s) => s.into_session(),
            AppSource::Capture(s) => {
                let (s, mut sink) = s.into_parts();
                if let Err(e) = sink.flush() {
                    warn!("flushing capture: {e}");
                }
                s.into_session()
            }
            AppSource::Replay(_) => return,
        };
        if let Err(e) = session.close() {
            warn!("closing TraCI session: {e}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Interrupted,
    DurationElapsed,
    SourceFinished,
    ProducerLost(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub exit: ExitReason,
    pub wall: f64,
    pub sim_time: f64,
    pub ticks: u64,
    pub publications: u64,
    pub dropped_publications: u64,
    pub missed_generations: u64,
    pub producer_overruns: u64,
    pub step_lag_p99: f64,
    pub step_lag_max: f64,
    pub step_length: f64,
    pub osc_bundles: u64,
    pub osc_datagrams: u64,
    pub osc_failures: u64,
    pub snapshots_sent: u64,
    pub viewers_dropped: u64,
    pub released_slots: usize,
}

impl RunSummary {
    /// Process exit status for this outcome.
    pub fn exit_code(&self) -> i32 {
        match self.exit {
            ExitReason::ProducerLost(_) => 2,
            _ => 0,
        }
    }
}

/// A bridge running on its own threads.
pub struct RunningBridge {
    scene_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<anyhow::Result<RunSummary>>,
}

impl RunningBridge {
    pub fn scene_addr(&self) -> Option<SocketAddr> {
        self.scene_addr
    }

    /// Setting this flag shuts the bridge down; suitable for a signal handler.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn wait(self) -> anyhow::Result<RunSummary> {
        self.handle.join().map_err(|_| anyhow!("bridge thread panicked"))?
    }
}

pub fn load_network(path: &Path) -> anyhow::Result<Network> {
    let bytes = std::fs::read(path).with_context(|| format!("reading network file {}", path.display()))?;
    parse_network(&bytes).with_context(|| format!("parsing network file {}", path.display()))
}

fn open_source(config: &AppConfig, mode: &SourceMode, plan: &TrafficLightPlan) -> anyhow::Result<AppSource> {
    let connect = || -> anyhow::Result<TraciSource> {
        let t = &config.traci;
        let session = TraciSession::connect(&t.host, t.port, t.retry_policy())
            .with_context(|| format!("connecting to TraCI server {}:{}", t.host, t.port))?;
        info!("connected to {} (API {:?})", session.server_version(), session.api_version());
        let lights = plan.junction_ids().map(str::to_owned).collect();
        Ok(TraciSource::new(session, lights)?)
    };
    Ok(match mode {
        SourceMode::Live => AppSource::Live(connect()?),
        SourceMode::Capture(path) => {
            let file = File::create(path).with_context(|| format!("creating capture {}", path.display()))?;
            AppSource::Capture(RecordingSource::new(connect()?, BufWriter::new(file)))
        }
        SourceMode::Replay(path) => {
            let file = File::open(path).with_context(|| format!("opening capture {}", path.display()))?;
            let replay = ReplaySource::read(BufReader::new(file), config.bridge.step_length())
                .map_err(|e| anyhow!("reading capture {}: {e}", path.display()))?;
            AppSource::Replay(replay)
        }
    })
}

/// Validates the configuration, loads the network, connects and starts
/// every thread. Startup failures are returned here; later failures end
/// up in the summary.
pub fn start(
    config: AppConfig,
    mode: SourceMode,
    duration: Option<Duration>,
    stats: Box<dyn Write + Send>,
) -> anyhow::Result<RunningBridge> {
    config.validate()?;
    let net = load_network(&config.net_file)?;
    let plan = plan_traffic_lights(&net, &config.mapper, config.lights.plan_options())
        .with_context(|| format!("planning traffic lights for {}", config.net_file.display()))?;
    info!(
        "network {}: {} lanes, {} traffic-light links at {} junctions",
        config.net_file.display(),
        net.lanes.len(),
        plan.spawns.len(),
        plan.index.len()
    );
    let heightfield = match &config.heightfield {
        Some(path) => HeightField::load(path)?,
        None => HeightField::flat(config.mapper.scale(config.bridge.fallback_elevation)),
    };
    let sender = if config.osc.enabled {
        Some(OscSender::new(&config.osc.destination, config.osc.datagram_limit)?)
    } else {
        None
    };
    let scene = if config.websocket.enabled {
        Some(SceneServer::start(&config.websocket.bind, config.websocket.client_queue)?)
    } else {
        None
    };
    let source = open_source(&config, &mode, &plan)?;

    let stop = Arc::new(AtomicBool::new(false));
    let scene_addr = scene.as_ref().map(SceneServer::local_addr);
    let parts = Parts { config, plan, heightfield, sender, scene, source, stats, duration, stop: Arc::clone(&stop) };
    let handle = std::thread::Builder::new().name("bridge-consumer".into()).spawn(move || run_loop(parts))?;
    Ok(RunningBridge { scene_addr, stop, handle })
}

struct Parts {
    config: AppConfig,
    plan: TrafficLightPlan,
    heightfield: HeightField,
    sender: Option<OscSender>,
    scene: Option<SceneServer>,
    source: AppSource,
    stats: Box<dyn Write + Send>,
    duration: Option<Duration>,
    stop: Arc<AtomicBool>,
}

#[derive(Default)]
struct Totals {
    ticks: u64,
    publications: u64,
    osc_bundles: u64,
    osc_datagrams: u64,
    osc_bytes: u64,
    osc_failures: u64,
}

/// Advances a periodic deadline by whole periods, restarting from `now`
/// when it fell behind.
fn advance(deadline: &mut f64, period: f64, now: f64) {
    *deadline += period;
    if *deadline <= now {
        *deadline = now + period;
    }
}

fn run_loop(parts: Parts) -> anyhow::Result<RunSummary> {
    let Parts { config, plan, heightfield, sender, scene, source, mut stats, duration, stop } = parts;
    let t_step = source.step_length();
    if (t_step - config.bridge.step_length()).abs() > 1e-9 {
        warn!(
            "server step length {t_step} s differs from 1/rate_n = {} s; pacing follows the server",
            config.bridge.step_length()
        );
    }
    let shared = Arc::new(SharedTrafficState::new(config.bridge.queue_capacity));
    let producer = spawn_producer(source, Arc::clone(&shared));
    let mut consumer = Consumer::new(config.bridge.clone(), config.mapper, heightfield, plan, t_step);
    consumer.set_listener(config.listener);
    let mut streamer = config.osc.enabled.then(|| OscStreamer::new(config.osc.clone(), config.mapper));

    let tick = 1.0 / config.tick_rate;
    let snapshot_period = 1.0 / config.websocket.snapshot_rate;
    let started = shared.now();
    let mut next_tick = started;
    let mut next_snapshot = started;
    let mut next_stats = started + config.stats_interval;
    let mut totals = Totals::default();
    let mut last: Arc<SceneSnapshot>;

    let exit = loop {
        if let Some(update) = scene.as_ref().and_then(|s| s.listener().take()) {
            consumer.set_listener(update.position);
        }
        let now = shared.now();
        let finishing = shared.stop_requested();
        let publications = shared.drain();
        totals.publications += publications.len() as u64;
        let report = consumer.frame(now, &publications);
        totals.ticks += 1;
        let snapshot = Arc::new(report.snapshot);

        if let (Some(streamer), Some(sender)) = (streamer.as_mut(), sender.as_ref()) {
            if let Some(built) = streamer.poll(&snapshot, now) {
                let outcome = sender.send(&built.bundle);
                totals.osc_bundles += 1;
                totals.osc_datagrams += outcome.datagrams as u64;
                totals.osc_bytes += outcome.bytes as u64;
                totals.osc_failures += outcome.failures as u64;
            }
        }
        if let Some(scene) = &scene {
            if now >= next_snapshot {
                scene.offer(Arc::clone(&snapshot));
                advance(&mut next_snapshot, snapshot_period, now);
            }
        }
        if now >= next_stats {
            let line = stats_line("stats", now - started, &snapshot, &consumer, &shared, &totals, scene.as_ref());
            write_line(&mut stats, &line);
            advance(&mut next_stats, config.stats_interval, now);
        }
        last = snapshot;

        if finishing {
            break match shared.terminal_error() {
                Some(msg) => ExitReason::ProducerLost(msg),
                None if stop.load(Ordering::SeqCst) => ExitReason::Interrupted,
                None => ExitReason::SourceFinished,
            };
        }
        if stop.load(Ordering::SeqCst) {
            shared.request_stop();
            break ExitReason::Interrupted;
        }
        if duration.is_some_and(|d| now - started >= d.as_secs_f64()) {
            shared.request_stop();
            break ExitReason::DurationElapsed;
        }

        advance(&mut next_tick, tick, shared.now());
        let wait = next_tick - shared.now();
        if wait > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    };

    shared.request_stop();
    let (producer_report, source) = producer.join().map_err(|_| anyhow!("producer thread panicked"))?;
    source.close();
    if let ProducerExit::Lost(msg) = &producer_report.exit {
        warn!("traffic source lost: {msg}");
    }

    if let (Some(streamer), Some(sender)) = (streamer.as_mut(), sender.as_ref()) {
        let farewell = streamer.finish(consumer.sim_time(), &last);
        let outcome = sender.send(&farewell);
        totals.osc_bundles += 1;
        totals.osc_datagrams += outcome.datagrams as u64;
        totals.osc_bytes += outcome.bytes as u64;
        totals.osc_failures += outcome.failures as u64;
    }
    let released_slots = consumer.release_all();
    if let Err(e) = consumer.pool().check_conservation() {
        warn!("pool bookkeeping after shutdown: {e}");
    }

    let wall = shared.now() - started;
    let line = stats_line("final", wall, &last, &consumer, &shared, &totals, scene.as_ref());
    write_line(&mut stats, &line);

    let (snapshots_sent, viewers_dropped) = scene.as_ref().map_or((0, 0), |s| {
        (s.counters().broadcasts.load(Ordering::Relaxed), s.counters().dropped_slow.load(Ordering::Relaxed))
    });
    if let Some(scene) = scene {
        scene.shutdown();
    }
    Ok(RunSummary {
        exit,
        wall,
        sim_time: consumer.sim_time(),
        ticks: totals.ticks,
        publications: totals.publications,
        dropped_publications: shared.dropped(),
        missed_generations: consumer.missed_generations(),
        producer_overruns: producer_report.overruns,
        step_lag_p99: percentile(&producer_report.step_lags, 99.0),
        step_lag_max: producer_report.max_step_lag,
        step_length: t_step,
        osc_bundles: totals.osc_bundles,
        osc_datagrams: totals.osc_datagrams,
        osc_failures: totals.osc_failures,
        snapshots_sent,
        viewers_dropped,
        released_slots,
    })
}

fn stats_line(
    event: &'static str,
    wall: f64,
    snapshot: &SceneSnapshot,
    consumer: &Consumer,
    shared: &SharedTrafficState,
    totals: &Totals,
    scene: Option<&SceneServer>,
) -> StatsLine {
    StatsLine {
        event,
        wall,
        sim_time: consumer.sim_time(),
        ticks: totals.ticks,
        active: snapshot.stats.active,
        culled: snapshot.stats.culled,
        pooled_free: snapshot.stats.pooled_free,
        generation: snapshot.stats.generation,
        publications: totals.publications,
        dropped_publications: shared.dropped(),
        missed_generations: consumer.missed_generations(),
        step_lag: snapshot.stats.step_lag,
        osc_bundles: totals.osc_bundles,
        osc_datagrams: totals.osc_datagrams,
        osc_bytes: totals.osc_bytes,
        osc_failures: totals.osc_failures,
        viewers: scene.map_or(0, |s| s.counters().connected.load(Ordering::Relaxed)),
        snapshots_sent: scene.map_or(0, |s| s.counters().broadcasts.load(Ordering::Relaxed)),
        rss_kb: rss_kb(),
    }
}
