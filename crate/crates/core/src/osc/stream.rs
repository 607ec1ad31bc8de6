//! Bundle assembly, datagram splitting and UDP transport.

use std::collections::HashMap;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};

use log::{debug, warn};

use crate::bridge::{SceneSnapshot, SnapshotVehicle};
use crate::geo::CoordinateMapper;

use super::codec::{element_size, encode_osc, OscArg, OscBundle, OscMessage, OscPacket, IMMEDIATELY};
use super::gate::{should_send, GateThresholds, OscVehicleRecord, SendReason, SentState};
use super::{OscConfig, OscError};

pub const HEADER_ADDRESS: &str = "/traffic/header";
pub const VEHICLE_ADDRESS: &str = "/traffic/vehicle";
pub const REMOVE_ADDRESS: &str = "/traffic/vehicle/remove";

/// `"#bundle\0"` plus the timetag.
const BUNDLE_OVERHEAD: usize = 16;

/// `/traffic/header ,dfff sim_time x y z`
pub fn header_message(sim_time: f64, snapshot: &SceneSnapshot) -> OscMessage {
    let l = snapshot.listener;
    OscMessage::new(
        HEADER_ADDRESS,
        vec![OscArg::Double(sim_time), OscArg::Float(l.x as f32), OscArg::Float(l.y as f32), OscArg::Float(l.z as f32)],
    )
}

/// `/traffic/vehicle ,sfffff id x y z speed accel`, or with
/// `velocity_vector` `,sffffff id x y z vx vy vz accel` where the velocity
/// is m/s along the engine heading (vz = 0).
pub fn vehicle_message(v: &SnapshotVehicle, mapper: &CoordinateMapper, velocity_vector: bool) -> OscMessage {
    let mut args = vec![
        OscArg::Str(v.id.clone()),
        OscArg::Float(v.position.x as f32),
        OscArg::Float(v.position.y as f32),
        OscArg::Float(v.position.z as f32),
    ];
    if velocity_vector {
        let dir = mapper.engine_direction(v.yaw);
        args.push(OscArg::Float((dir.x * v.speed) as f32));
        args.push(OscArg::Float((dir.y * v.speed) as f32));
        args.push(OscArg::Float(0.0));
    } else {
        args.push(OscArg::Float(v.speed as f32));
    }
    args.push(OscArg::Float(v.acceleration as f32));
    OscMessage::new(VEHICLE_ADDRESS, args)
}

pub fn remove_message(id: &str) -> OscMessage {
    OscMessage::new(REMOVE_ADDRESS, vec![OscArg::Str(id.to_owned())])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltBundle {
    pub bundle: OscBundle,
    pub sent: Vec<(String, SendReason)>,
    pub removed: Vec<String>,
}

/// Builds the aggregated bundle for `snapshot` at `now`: header, one message
/// per vehicle passing the gate, then a remove message for every recorded
/// vehicle missing from the snapshot. Records of sent vehicles are updated;
/// records of removed vehicles are dropped, so a vehicle that comes back
/// counts as a first transmission again.
pub fn build_bundle(
    snapshot: &SceneSnapshot,
    records: &mut HashMap<String, OscVehicleRecord>,
    now: f64,
    gate: &GateThresholds,
    mapper: &CoordinateMapper,
    velocity_vector: bool,
) -> BuiltBundle {
    let mut elements = vec![OscPacket::Message(header_message(snapshot.stats.sim_time, snapshot))];
    let mut sent = Vec::new();
    for v in &snapshot.vehicles {
        let record = records.entry(v.id.clone()).or_default();
        if let Some(reason) = should_send(record, v.position, v.speed, now, gate) {
            elements.push(OscPacket::Message(vehicle_message(v, mapper, velocity_vector)));
            record.last_sent = Some(SentState { position: v.position, velocity: v.speed, time: now });
            sent.push((v.id.clone(), reason));
        }
    }

    let present: std::collections::HashSet<&str> = snapshot.vehicles.iter().map(|v| v.id.as_str()).collect();
    let mut removed: Vec<String> = records.keys().filter(|id| !present.contains(id.as_str())).cloned().collect();
    removed.sort();
    for id in &removed {
        records.remove(id);
        elements.push(OscPacket::Message(remove_message(id)));
    }
    BuiltBundle { bundle: OscBundle { timetag: IMMEDIATELY, elements }, sent, removed }
}

/// Splits `bundle` into bundles of at most `limit` encoded bytes. The first
/// element is treated as the header and repeated at the front of every
/// part. An element too large to fit even alone with the header gets a
/// part of its own.
pub fn split_bundle(bundle: &OscBundle, limit: usize) -> Result<Vec<OscBundle>, OscError> {
    let Some((header, rest)) = bundle.elements.split_first() else {
        return Ok(vec![bundle.clone()]);
    };
    let base = BUNDLE_OVERHEAD + element_size(header)?;
    let mut parts = Vec::new();
    let mut current: Vec<OscPacket> = vec![header.clone()];
    let mut size = base;
    for element in rest {
        let n = element_size(element)?;
        if size + n > limit && current.len() > 1 {
            parts.push(OscBundle { timetag: bundle.timetag, elements: std::mem::replace(&mut current, vec![header.clone()]) });
            size = base;
        }
        if base + n > limit {
            warn!("OSC element of {n} bytes exceeds the datagram limit of {limit}");
        }
        current.push(element.clone());
        size += n;
    }
    parts.push(OscBundle { timetag: bundle.timetag, elements: current });
    Ok(parts)
}

/// Fire-and-forget UDP transport.
#[derive(Debug)]
pub struct OscSender {
    socket: UdpSocket,
    destination: SocketAddr,
    limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SendOutcome {
    pub datagrams: usize,
    pub bytes: usize,
    pub failures: usize,
}

impl OscSender {
    pub fn new(destination: &str, limit: usize) -> Result<Self, OscError> {
        let destination = destination
            .to_socket_addrs()
            .map_err(|e| OscError::Destination(format!("{destination}: {e}")))?
            .next()
            .ok_or_else(|| OscError::Destination(format!("{destination}: no address")))?;
        let bind: SocketAddr = if destination.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
        let socket = UdpSocket::bind(bind).map_err(|e| OscError::Destination(e.to_string()))?;
        Ok(Self { socket, destination, limit })
    }

    pub fn destination(&self) -> SocketAddr {
        self.destination
    }

    /// Sends `bundle`, split to the datagram limit. Socket errors are logged
    /// and counted, never returned.
    pub fn send(&self, bundle: &OscBundle) -> SendOutcome {
        let mut out = SendOutcome::default();
        let parts = match split_bundle(bundle, self.limit) {
            Ok(p) => p,
            Err(e) => {
                warn!("dropping OSC bundle: {e}");
                out.failures += 1;
                return out;
            }
        };
        for part in parts {
            let bytes = match encode_osc(&OscPacket::Bundle(part)) {
                Ok(b) => b,
                Err(e) => {
                    warn!("dropping OSC bundle: {e}");
                    out.failures += 1;
                    continue;
                }
            };
            match self.socket.send_to(&bytes, self.destination) {
                Ok(n) => {
                    out.datagrams += 1;
                    out.bytes += n;
                }
                Err(e) => {
                    debug!("OSC send to {} failed: {e}", self.destination);
                    out.failures += 1;
                }
            }
        }
        out
    }
}

/// Runs the gate on the consumer's timeline: a bundle every
/// `send_interval` seconds.
#[derive(Debug)]
pub struct OscStreamer {
    config: OscConfig,
    gate: GateThresholds,
    mapper: CoordinateMapper,
    records: HashMap<String, OscVehicleRecord>,
    next_due: Option<f64>,
}

impl OscStreamer {
    pub fn new(config: OscConfig, mapper: CoordinateMapper) -> Self {
        let gate = GateThresholds::new(&config, mapper.units_per_meter);
        Self { config, gate, mapper, records: HashMap::new(), next_due: None }
    }

    pub fn records(&self) -> &HashMap<String, OscVehicleRecord> {
        &self.records
    }

    /// Builds a bundle if one is due at `now`. The schedule advances in
    /// whole intervals; if ticks are late it restarts from `now` rather
    /// than emitting a backlog.
    pub fn poll(&mut self, snapshot: &SceneSnapshot, now: f64) -> Option<BuiltBundle> {
        let due = self.next_due.unwrap_or(now);
        if now < due {
            return None;
        }
        let mut next = due + self.config.send_interval;
        if next <= now {
            next = now + self.config.send_interval;
        }
        self.next_due = Some(next);
        Some(build_bundle(snapshot, &mut self.records, now, &self.gate, &self.mapper, self.config.velocity_vector))
    }

    /// A bundle removing every vehicle still known downstream, for shutdown.
    pub fn finish(&mut self, sim_time: f64, snapshot: &SceneSnapshot) -> OscBundle {
        let mut ids: Vec<String> = self.records.drain().map(|(id, _)| id).collect();
        ids.sort();
        let mut elements = vec![OscPacket::Message(header_message(sim_time, snapshot))];
        elements.extend(ids.iter().map(|id| OscPacket::Message(remove_message(id))));
        OscBundle { timetag: IMMEDIATELY, elements }
    }
}
