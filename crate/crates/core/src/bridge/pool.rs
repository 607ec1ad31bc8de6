//! Per-vehicle-type object pools of renderable slots.

use std::collections::{BTreeMap, HashMap};

use log::debug;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotHandle {
    pool: u16,
    index: u32,
}

impl SlotHandle {
    pub fn index(self) -> u32 {
        self.index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub vtype: String,
    pub capacity: usize,
    pub active: usize,
    pub free: usize,
    pub high_water: usize,
    pub resizes: u32,
}

#[derive(Debug, Clone)]
struct TypePool {
    vtype: String,
    /// Stack of free slot indices; the next slot handed out is at the end.
    free: Vec<u32>,
    active: Vec<bool>,
    active_count: usize,
    high_water: usize,
    resizes: u32,
}

impl TypePool {
    fn new(vtype: String, capacity: usize) -> Self {
        Self {
            vtype,
            free: (0..capacity as u32).rev().collect(),
            active: vec![false; capacity],
            active_count: 0,
            high_water: 0,
            resizes: 0,
        }
    }

    fn capacity(&self) -> usize {
        self.active.len()
    }

    fn grow(&mut self, growth: f64) {
        let old = self.capacity();
        let new = ((old as f64) * growth).ceil().max(old as f64 + 1.0) as usize;
        self.active.resize(new, false);
        // new slots go under the existing free ones, lowest index on top
        let mut fresh: Vec<u32> = (old as u32..new as u32).rev().collect();
        fresh.append(&mut self.free);
        self.free = fresh;
        self.resizes += 1;
        debug!("pool '{}' grew {old} -> {new}", self.vtype);
    }

    fn stats(&self) -> PoolStats {
        PoolStats {
            vtype: self.vtype.clone(),
            capacity: self.capacity(),
            active: self.active_count,
            free: self.free.len(),
            high_water: self.high_water,
            resizes: self.resizes,
        }
    }
}

/// Slots are either on their type's free list or active, never both.
/// Exhaustion grows the pool by `growth` instead of failing.
#[derive(Debug, Clone)]
pub struct VehiclePool {
    pools: Vec<TypePool>,
    by_type: HashMap<String, u16>,
    default_capacity: usize,
    growth: f64,
}

impl VehiclePool {
    pub fn new(sizes: &BTreeMap<String, usize>, default_capacity: usize, growth: f64) -> Self {
        let mut pool = Self { pools: Vec::new(), by_type: HashMap::new(), default_capacity, growth: growth.max(1.0) };
        for (vtype, &cap) in sizes {
            pool.pool_index(vtype, cap);
        }
        pool
    }

    fn pool_index(&mut self, vtype: &str, capacity: usize) -> u16 {
        if let Some(&i) = self.by_type.get(vtype) {
            return i;
        }
        let i = u16::try_from(self.pools.len()).expect("fewer than 65536 vehicle types");
        self.pools.push(TypePool::new(vtype.to_owned(), capacity));
        self.by_type.insert(vtype.to_owned(), i);
        i
    }

    pub fn acquire(&mut self, vtype: &str) -> SlotHandle {
        let cap = self.default_capacity;
        let i = self.pool_index(vtype, cap);
        let growth = self.growth;
        let pool = &mut self.pools[i as usize];
        if pool.free.is_empty() {
            pool.grow(growth);
        }
        let index = pool.free.pop().expect("grown pool has a free slot");
        pool.active[index as usize] = true;
        pool.active_count += 1;
        pool.high_water = pool.high_water.max(pool.active_count);
        SlotHandle { pool: i, index }
    }

    /// Returns the slot to its free list. Releasing a slot that is not
    /// active is a no-op and returns false.
    pub fn release(&mut self, handle: SlotHandle) -> bool {
        let Some(pool) = self.pools.get_mut(handle.pool as usize) else { return false };
        match pool.active.get_mut(handle.index as usize) {
            Some(active) if *active => {
                *active = false;
                pool.active_count -= 1;
                pool.free.push(handle.index);
                true
            }
            _ => false,
        }
    }

    pub fn vtype_of(&self, handle: SlotHandle) -> &str {
        &self.pools[handle.pool as usize].vtype
    }

    pub fn stats(&self) -> Vec<PoolStats> {
        let mut out: Vec<_> = self.pools.iter().map(TypePool::stats).collect();
        out.sort_by(|a, b| a.vtype.cmp(&b.vtype));
        out
    }

    pub fn stats_for(&self, vtype: &str) -> Option<PoolStats> {
        self.by_type.get(vtype).map(|&i| self.pools[i as usize].stats())
    }

    pub fn total_active(&self) -> usize {
        self.pools.iter().map(|p| p.active_count).sum()
    }

    pub fn total_free(&self) -> usize {
        self.pools.iter().map(|p| p.free.len()).sum()
    }

    pub fn total_capacity(&self) -> usize {
        self.pools.iter().map(TypePool::capacity).sum()
    }

    pub fn total_resizes(&self) -> u32 {
        self.pools.iter().map(|p| p.resizes).sum()
    }

    /// Checks that every slot is on exactly one of the free list or the
    /// active set.
    pub fn check_conservation(&self) -> Result<(), String> {
        for p in &self.pools {
            let active = p.active.iter().filter(|a| **a).count();
            if active != p.active_count {
                return Err(format!("pool '{}': active flag count {active} != counter {}", p.vtype, p.active_count));
            }
            if active + p.free.len() != p.capacity() {
                return Err(format!(
                    "pool '{}': {active} active + {} free != capacity {}",
                    p.vtype,
                    p.free.len(),
                    p.capacity()
                ));
            }
            if p.free.iter().any(|&i| p.active[i as usize]) {
                return Err(format!("pool '{}': an active slot is on the free list", p.vtype));
            }
        }
        Ok(())
    }
}
