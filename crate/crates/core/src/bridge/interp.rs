//! Previous/target interpolation of vehicle states between simulation steps.

use std::collections::BTreeMap;

use crate::geo::{lerp_degrees, CoordinateMapper, Point2, Point3};

use super::pool::SlotHandle;
use super::VehicleState;

/// Blend factors this close below 1 are treated as 1, so that frame deltas
/// which sum to a step length in exact arithmetic land exactly on the target
/// despite rounding.
pub const ALPHA_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedEntity {
    pub previous: VehicleState,
    pub target: VehicleState,
    pub alpha: f64,
    pub slot: Option<SlotHandle>,
    /// Interpolated position in the simulation plane.
    pub plane_pos: Point2,
    pub engine_pos: Point3,
    pub engine_yaw: f64,
    pub pitch: f64,
    /// Horizontal distance to the listener at the last cull pass.
    pub listener_distance: f64,
}

impl InterpolatedEntity {
    fn new(state: VehicleState, mapper: &CoordinateMapper) -> Self {
        let plane_pos = state.position;
        let e = mapper.to_engine(plane_pos);
        let engine_yaw = mapper.to_engine_yaw(state.angle);
        Self {
            previous: state.clone(),
            target: state,
            alpha: 0.0,
            slot: None,
            plane_pos,
            engine_pos: Point3::new(e.x, e.y, 0.0),
            engine_yaw,
            pitch: 0.0,
            listener_distance: f64::INFINITY,
        }
    }

    /// Recomputes the visual transform for the current blend factor. Height
    /// is left untouched; it is refreshed on its own schedule.
    fn refresh(&mut self, mapper: &CoordinateMapper) {
        self.plane_pos = self.previous.position.lerp(self.target.position, self.alpha);
        let e = mapper.to_engine(self.plane_pos);
        self.engine_pos.x = e.x;
        self.engine_pos.y = e.y;
        self.engine_yaw = lerp_degrees(
            mapper.to_engine_yaw(self.previous.angle),
            mapper.to_engine_yaw(self.target.angle),
            self.alpha,
        );
    }
}

/// Advances a blend factor by `dt / t_step`, clamped to `[0, 1]`.
pub fn advance_alpha(alpha: f64, dt: f64, t_step: f64) -> f64 {
    let a = (alpha + dt / t_step).clamp(0.0, 1.0);
    if a > 1.0 - ALPHA_SNAP {
        1.0
    } else {
        a
    }
}

/// All vehicles the consumer knows about, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct EntityTable {
    entities: BTreeMap<String, InterpolatedEntity>,
    mapper: CoordinateMapper,
}

impl EntityTable {
    pub fn new(mapper: CoordinateMapper) -> Self {
        Self { entities: BTreeMap::new(), mapper }
    }

    pub fn mapper(&self) -> &CoordinateMapper {
        &self.mapper
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&InterpolatedEntity> {
        self.entities.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &InterpolatedEntity)> {
        self.entities.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut InterpolatedEntity)> {
        self.entities.iter_mut()
    }

    /// The previous target becomes the new starting point, the fresh state
    /// becomes the target and the blend restarts. A vehicle seen for the
    /// first time starts and ends at its reported state. Vehicles missing
    /// from the batch are left alone.
    pub fn on_network_update<'a>(&mut self, batch: impl IntoIterator<Item = &'a VehicleState>) {
        for state in batch {
            match self.entities.get_mut(&state.id) {
                Some(e) => {
                    let old_target = std::mem::replace(&mut e.target, state.clone());
                    e.previous = old_target;
                    e.alpha = 0.0;
                    e.refresh(&self.mapper);
                }
                None => {
                    self.entities.insert(state.id.clone(), InterpolatedEntity::new(state.clone(), &self.mapper));
                }
            }
        }
    }

    /// Advances every entity's blend by `dt / t_step` and updates its
    /// plane position, engine position and yaw.
    pub fn tick_visuals(&mut self, dt: f64, t_step: f64) {
        debug_assert!(dt >= 0.0 && t_step > 0.0);
        let dt = dt.max(0.0);
        for e in self.entities.values_mut() {
            e.alpha = advance_alpha(e.alpha, dt, t_step);
            e.refresh(&self.mapper);
        }
    }

    pub fn remove(&mut self, id: &str) -> Option<InterpolatedEntity> {
        self.entities.remove(id)
    }

    /// Removes every entity for which `keep` is false and returns them.
    pub fn drain_where(&mut self, mut keep: impl FnMut(&str) -> bool) -> Vec<InterpolatedEntity> {
        let gone: Vec<String> = self.entities.keys().filter(|id| !keep(id)).cloned().collect();
        gone.into_iter().filter_map(|id| self.entities.remove(&id)).collect()
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Option<&mut InterpolatedEntity> {
        self.entities.get_mut(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs(id: &str, x: f64, y: f64, t: f64) -> VehicleState {
        VehicleState {
            id: id.into(),
            position: Point2::new(x, y),
            angle: 90.0,
            speed: 10.0,
            acceleration: 0.0,
            vtype: "car".into(),
            sim_time: t,
        }
    }

    #[test]
    fn update_shifts_target_into_previous() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 10.0, 0.0, 0.1)]);
        table.on_network_update([&vs("a", 20.0, 0.0, 0.2)]);
        let e = table.get("a").unwrap();
        assert_eq!(e.previous.position, Point2::new(10.0, 0.0));
        assert_eq!(e.target.position, Point2::new(20.0, 0.0));
        assert_eq!(e.alpha, 0.0);
    }

    #[test]
    fn first_sighting_has_no_motion() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 5.0, 5.0, 0.0)]);
        let e = table.get("a").unwrap();
        assert_eq!(e.previous, e.target);
        assert_eq!(e.alpha, 0.0);
        assert_eq!(e.plane_pos, Point2::new(5.0, 5.0));
    }

    #[test]
    fn absent_vehicle_is_untouched() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 0.0, 0.0, 0.0), &vs("b", 1.0, 1.0, 0.0)]);
        table.tick_visuals(0.05, 0.1);
        let before = table.get("b").unwrap().clone();
        table.on_network_update([&vs("a", 3.0, 0.0, 0.1)]);
        assert_eq!(table.get("b").unwrap(), &before);
    }

    #[test]
    fn half_step_is_midpoint() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 0.0, 0.0, 0.0)]);
        table.on_network_update([&vs("a", 10.0, 0.0, 0.1)]);
        table.tick_visuals(0.05, 0.1);
        let e = table.get("a").unwrap();
        assert_eq!(e.alpha, 0.5);
        assert_eq!(e.plane_pos, Point2::new(5.0, 0.0));
    }

    #[test]
    fn long_tick_clamps_to_target() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 0.0, 0.0, 0.0)]);
        table.on_network_update([&vs("a", 10.0, 0.0, 0.1)]);
        table.tick_visuals(0.2, 0.1);
        let e = table.get("a").unwrap();
        assert_eq!(e.alpha, 1.0);
        assert_eq!(e.plane_pos, Point2::new(10.0, 0.0));
    }

    #[test]
    fn yaw_takes_the_short_way_round() {
        let mut table = EntityTable::default();
        let mut a = vs("a", 0.0, 0.0, 0.0);
        a.angle = 80.0; // engine 350
        table.on_network_update([&a]);
        let mut b = a.clone();
        b.angle = 100.0; // engine 10
        table.on_network_update([&b]);
        table.tick_visuals(0.05, 0.1);
        let yaw = table.get("a").unwrap().engine_yaw;
        assert!(yaw.abs() < 1e-9 || (yaw - 360.0).abs() < 1e-9, "yaw {yaw}");
    }

    #[test]
    fn drain_where_returns_removed() {
        let mut table = EntityTable::default();
        table.on_network_update([&vs("a", 0.0, 0.0, 0.0), &vs("b", 1.0, 1.0, 0.0)]);
        let gone = table.drain_where(|id| id == "a");
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].target.id, "b");
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn alpha_snaps_near_one() {
        assert_eq!(advance_alpha(0.0, 0.1 - 1e-13, 0.1), 1.0);
        assert!(advance_alpha(0.0, 0.09, 0.1) < 1.0);
        assert_eq!(advance_alpha(0.5, -1.0, 0.1), 0.0);
    }
}
