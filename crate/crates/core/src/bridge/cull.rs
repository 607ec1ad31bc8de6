//! Distance culling around the listener, with despawn hysteresis.

use crate::geo::Point3;

use super::interp::EntityTable;
use super::pool::VehiclePool;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CullDecisions {
    pub spawned: Vec<String>,
    pub despawned: Vec<String>,
    /// Active vehicles that stay active.
    pub updated: usize,
}

/// Vehicles within `radius` of the listener get a pool slot; active ones
/// farther than `radius + hysteresis` give theirs back. Distances are
/// horizontal and in engine units.
pub fn cull_and_schedule(
    table: &mut EntityTable,
    listener: Point3,
    radius: f64,
    hysteresis: f64,
    pool: &mut VehiclePool,
) -> CullDecisions {
    let mut out = CullDecisions::default();
    for (id, e) in table.iter_mut() {
        let d = e.engine_pos.horizontal_distance(listener);
        e.listener_distance = d;
        match e.slot {
            None if d <= radius => {
                e.slot = Some(pool.acquire(&e.target.vtype));
                out.spawned.push(id.clone());
            }
            Some(slot) if d > radius + hysteresis => {
                pool.release(slot);
                e.slot = None;
                out.despawned.push(id.clone());
            }
            Some(_) => out.updated += 1,
            None => {}
        }
    }
    out
}
