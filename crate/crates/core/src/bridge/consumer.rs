use std::collections::BTreeMap;
use std::sync::Arc;

use crate::geo::{HeightField, Point3};
use crate::net::TrafficLightPlan;

use super::cull::{cull_and_schedule, CullDecisions};
use super::interp::EntityTable;
use super::pool::VehiclePool;
use super::snapshot::{build_snapshot, SceneSnapshot, SnapshotContext};
use super::{BridgeConfig, Publication};
use crate::geo::CoordinateMapper;

/// Height above the highest terrain sample that downward probes start from.
const PROBE_CLEARANCE: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct FrameReport {
    pub snapshot: SceneSnapshot,
    /// Vehicles that left the simulation during this frame.
    pub removed: Vec<String>,
    /// Present on ticks that ran a distance check.
    pub cull: Option<CullDecisions>,
    pub publications: usize,
}

/// The rendering-side half of the bridge. Owns the entity table, the pools
/// and the traffic-light state; fed with publications and a clock.
#[derive(Debug)]
pub struct Consumer {
    config: BridgeConfig,
    heightfield: HeightField,
    plan: TrafficLightPlan,
    table: EntityTable,
    pool: VehiclePool,
    t_step: f64,
    listener: Point3,
    listener_moved: bool,
    lights: BTreeMap<String, String>,
    tick_index: u64,
    clock: Option<f64>,
    sim_time: f64,
    step_lag: f64,
    generation: u64,
    missed_generations: u64,
    probe_height: f64,
}

impl Consumer {
    pub fn new(
        config: BridgeConfig,
        mapper: CoordinateMapper,
        heightfield: HeightField,
        plan: TrafficLightPlan,
        t_step: f64,
    ) -> Self {
        let pool = VehiclePool::new(&config.pool_sizes, config.default_pool_size, config.pool_growth);
        let probe_height = heightfield.max_elevation() + PROBE_CLEARANCE;
        Self {
            config,
            heightfield,
            plan,
            table: EntityTable::new(mapper),
            pool,
            t_step,
            listener: Point3::default(),
            listener_moved: true,
            lights: BTreeMap::new(),
            tick_index: 0,
            clock: None,
            sim_time: 0.0,
            step_lag: 0.0,
            generation: 0,
            missed_generations: 0,
            probe_height,
        }
    }

    pub fn table(&self) -> &EntityTable {
        &self.table
    }

    pub fn pool(&self) -> &VehiclePool {
        &self.pool
    }

    pub fn plan(&self) -> &TrafficLightPlan {
        &self.plan
    }

    pub fn listener(&self) -> Point3 {
        self.listener
    }

    pub fn t_step(&self) -> f64 {
        self.t_step
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    /// Generations that never reached this consumer.
    pub fn missed_generations(&self) -> u64 {
        self.missed_generations
    }

    /// Moves the culling center. The next frame runs a distance check
    /// regardless of the schedule.
    pub fn set_listener(&mut self, listener: Point3) {
        if listener != self.listener {
            self.listener = listener;
            self.listener_moved = true;
        }
    }

    fn mapper(&self) -> CoordinateMapper {
        *self.table.mapper()
    }

    /// Culling radius in engine units.
    pub fn culling_radius(&self) -> f64 {
        self.mapper().scale(self.config.culling_radius)
    }

    pub fn frame(&mut self, now: f64, publications: &[Arc<Publication>]) -> FrameReport {
        self.frame_observed(now, publications, |_, _| {})
    }

    /// Runs one consumer tick ending at `now` (seconds on the shared clock).
    ///
    /// Publications are applied at their own timestamps inside the frame:
    /// the entities are advanced up to each arrival, `on_boundary` sees the
    /// table just before the publication is applied, and the remainder of
    /// the frame is ticked afterwards. The visual timeline therefore depends
    /// only on publication times, not on how frames partition them.
    pub fn frame_observed(
        &mut self,
        now: f64,
        publications: &[Arc<Publication>],
        mut on_boundary: impl FnMut(&Publication, &EntityTable),
    ) -> FrameReport {
        let mut cursor = self.clock.unwrap_or(now).min(now);
        let mut removed = Vec::new();
        for publication in publications {
            let at = publication.published_at.clamp(cursor, now);
            self.table.tick_visuals(at - cursor, self.t_step);
            cursor = at;
            on_boundary(publication, &self.table);
            removed.extend(self.apply(publication));
        }
        self.table.tick_visuals(now - cursor, self.t_step);
        self.clock = Some(now);

        let cull_due = self.tick_index.is_multiple_of(u64::from(self.config.cull_check_period));
        let cull = if cull_due || self.listener_moved {
            self.listener_moved = false;
            let radius = self.culling_radius();
            let hysteresis = self.mapper().scale(self.config.hysteresis());
            let decisions = cull_and_schedule(&mut self.table, self.listener, radius, hysteresis, &mut self.pool);
            Some(decisions)
        } else {
            None
        };
        let height_due = self.tick_index.is_multiple_of(u64::from(self.config.height_check_period));
        match (&cull, height_due) {
            (_, true) => self.snap_heights(None),
            (Some(d), false) if !d.spawned.is_empty() => self.snap_heights(Some(&d.spawned)),
            _ => {}
        }
        self.tick_index += 1;

        let ctx = SnapshotContext {
            tick_time: now,
            listener: self.listener,
            culling_radius: self.culling_radius(),
            sim_time: self.sim_time,
            step_lag: self.step_lag,
            generation: self.generation,
        };
        let snapshot = build_snapshot(&self.table, &self.plan, &self.lights, &self.pool, ctx);
        FrameReport { snapshot, removed, cull, publications: publications.len() }
    }

    /// Forgets every vehicle and returns its slot to the pool. Returns the
    /// number of slots released.
    pub fn release_all(&mut self) -> usize {
        let mut released = 0;
        for e in self.table.drain_where(|_| false) {
            if let Some(slot) = e.slot {
                released += usize::from(self.pool.release(slot));
            }
        }
        released
    }

    /// Applies one publication: new states, departures from the simulation
    /// and light strings. Returns the ids that left the simulation.
    fn apply(&mut self, publication: &Publication) -> Vec<String> {
        if publication.generation > self.generation + 1 {
            self.missed_generations += publication.generation - self.generation - 1;
        }
        self.generation = publication.generation;
        self.sim_time = publication.sim_time;
        self.step_lag = publication.step_lag;
        self.table.on_network_update(publication.vehicles.values());
        let gone = self.table.drain_where(|id| publication.is_live(id));
        let mut removed = Vec::with_capacity(gone.len());
        for e in gone {
            if let Some(slot) = e.slot {
                self.pool.release(slot);
            }
            removed.push(e.target.id);
        }
        for (tl, state) in &publication.lights {
            self.lights.insert(tl.clone(), state.clone());
        }
        removed
    }

    /// Refreshes terrain height (and pitch, when enabled) for active
    /// vehicles, or only for `only` when given.
    fn snap_heights(&mut self, only: Option<&[String]>) {
        let mapper = self.mapper();
        let fallback = mapper.scale(self.config.fallback_elevation);
        let wheelbase = mapper.scale(self.config.wheelbase);
        let refresh = |hf: &HeightField, e: &mut super::interp::InterpolatedEntity, probe: f64, dual: bool| {
            let p = e.engine_pos;
            e.engine_pos.z = hf.snap_height(p.x, p.y, probe, fallback).elevation;
            if dual {
                e.pitch = hf
                    .snap_pitch(&mapper, p.xy(), e.engine_yaw, wheelbase, probe)
                    .map(|s| s.pitch)
                    .unwrap_or(0.0);
            }
        };
        match only {
            Some(ids) => {
                for id in ids {
                    if let Some(e) = self.table.get_mut(id) {
                        refresh(&self.heightfield, e, self.probe_height, self.config.dual_raycast);
                    }
                }
            }
            None => {
                for (_, e) in self.table.iter_mut().filter(|(_, e)| e.slot.is_some()) {
                    refresh(&self.heightfield, e, self.probe_height, self.config.dual_raycast);
                }
            }
        }
    }
}
