//! Line-delimited JSON statistics.

use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsLine {
    /// `"stats"` for periodic lines, `"final"` for the shutdown line.
    pub event: &'static str,
    /// Seconds since start.
    pub wall: f64,
    pub sim_time: f64,
    pub ticks: u64,
    pub active: usize,
    pub culled: usize,
    pub pooled_free: usize,
    pub generation: u64,
    pub publications: u64,
    pub dropped_publications: u64,
    pub missed_generations: u64,
    /// Seconds the producer trails its schedule, latest publication.
    pub step_lag: f64,
    pub osc_bundles: u64,
    pub osc_datagrams: u64,
    pub osc_bytes: u64,
    pub osc_failures: u64,
    pub viewers: usize,
    pub snapshots_sent: u64,
    pub rss_kb: Option<u64>,
}

pub fn write_line(out: &mut dyn Write, line: &impl Serialize) {
    match serde_json::to_string(line) {
        Ok(text) => {
            if let Err(e) = writeln!(out, "{text}").and_then(|()| out.flush()) {
                log::warn!("writing stats: {e}");
            }
        }
        Err(e) => log::warn!("stats did not serialize: {e}"),
    }
}

/// Resident set size of this process in KiB, where the platform reports it.
pub fn rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Nearest-rank percentile; `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
