//! SUMO road-network reader and traffic-light spawn planning.
//!
//! Only `net`, `junction`, `edge/lane` and `connection` elements are read;
//! everything else in the file is ignored.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CoordinateMapper, Point2, Point3};

pub const DEFAULT_HEIGHT_OFFSET: f64 = 3.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("malformed network XML: {0}")]
    MalformedXml(String),
    #[error("lane '{0}' has no parseable shape")]
    MissingShape(String),
    #[error("connection {from} -> {to}: linkIndex '{value}' is not a non-negative integer")]
    BadLinkIndex { from: String, to: String, value: String },
    #[error("connection for traffic light '{tl_id}' link {link_index} references missing lane '{lane}'")]
    DanglingLane { tl_id: String, link_index: u32, lane: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub shape: Vec<Point2>,
}

impl Lane {
    /// The final point and the one before it.
    pub fn last_points(&self) -> (Point2, Point2) {
        let n = self.shape.len();
        (self.shape[n - 1], self.shape[n - 2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlConnection {
    pub lane_in: String,
    pub lane_out: String,
    pub tl_id: String,
    pub link_index: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub lanes: HashMap<String, Lane>,
    pub tl_connections: Vec<TlConnection>,
    /// Ids of junctions whose type is `traffic_light` (or a variant of it).
    pub tl_junctions: Vec<String>,
    pub connection_count: usize,
}

fn parse_shape(text: &str) -> Option<Vec<Point2>> {
    let mut points: Vec<Point2> = Vec::new();
    for pair in text.split_whitespace() {
        let mut coords = pair.split(',');
        let x = coords.next()?.parse::<f64>().ok()?;
        let y = coords.next()?.parse::<f64>().ok()?;
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let p = Point2::new(x, y);
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    (points.len() >= 2).then_some(points)
}

/// Reads lanes and traffic-light connections from `.net.xml` bytes.
pub fn parse_network(xml: &[u8]) -> Result<Network, NetError> {
    let text = std::str::from_utf8(xml).map_err(|e| NetError::MalformedXml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| NetError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "net" {
        return Err(NetError::MalformedXml(format!("root element is <{}>, expected <net>", root.tag_name().name())));
    }

    let mut net = Network::default();
    let mut shapeless: Vec<String> = Vec::new();
    for child in root.children().filter(roxmltree::Node::is_element) {
        match child.tag_name().name() {
            "edge" => {
                for lane in child.children().filter(|n| n.has_tag_name("lane")) {
                    let Some(id) = lane.attribute("id") else { continue };
                    match lane.attribute("shape").and_then(parse_shape) {
                        Some(shape) => {
                            net.lanes.insert(id.to_owned(), Lane { id: id.to_owned(), shape });
                        }
                        None => shapeless.push(id.to_owned()),
                    }
                }
            }
            "junction" => {
                if let (Some(id), Some(kind)) = (child.attribute("id"), child.attribute("type")) {
                    if kind.starts_with("traffic_light") {
                        net.tl_junctions.push(id.to_owned());
                    }
                }
            }
            "connection" => {
                net.connection_count += 1;
                let (Some(tl), Some(link)) = (child.attribute("tl"), child.attribute("linkIndex")) else {
                    continue;
                };
                let lane_id = |edge: &str, lane: &str| {
                    format!("{}_{}", child.attribute(edge).unwrap_or(""), child.attribute(lane).unwrap_or(""))
                };
                let lane_in = lane_id("from", "fromLane");
                let lane_out = lane_id("to", "toLane");
                let link_index = link.trim().parse::<u32>().map_err(|_| NetError::BadLinkIndex {
                    from: lane_in.clone(),
                    to: lane_out.clone(),
                    value: link.to_owned(),
                })?;
                net.tl_connections.push(TlConnection { lane_in, lane_out, tl_id: tl.to_owned(), link_index });
            }
            _ => {}
        }
    }

    if let Some(c) = net.tl_connections.iter().find(|c| shapeless.contains(&c.lane_in)) {
        return Err(NetError::MissingShape(c.lane_in.clone()));
    }
    Ok(net)
}

/// Index into [`TrafficLightPlan::spawns`].
pub type SpawnHandle = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSpawn {
    pub tl_id: String,
    pub link_index: u32,
    pub position: Point3,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrafficLightPlan {
    pub spawns: Vec<LightSpawn>,
    /// Junction -> link index -> every signal head driven by that link.
    pub index: BTreeMap<String, BTreeMap<u32, Vec<SpawnHandle>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    /// Vertical offset above the lane end, in meters.
    pub height_offset: f64,
    /// Turns every light around so it faces back along the approach lane
    /// instead of along the direction of travel.
    pub face_approach: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { height_offset: DEFAULT_HEIGHT_OFFSET, face_approach: false }
    }
}

/// One light per controlled connection, placed at the end of its incoming
/// lane and oriented from the second-to-last toward the last shape point.
pub fn plan_traffic_lights(
    net: &Network,
    mapper: &CoordinateMapper,
    options: PlanOptions,
) -> Result<TrafficLightPlan, NetError> {
    let mut plan = TrafficLightPlan::default();
    for c in &net.tl_connections {
        let lane = net.lanes.get(&c.lane_in).ok_or_else(|| NetError::DanglingLane {
            tl_id: c.tl_id.clone(),
            link_index: c.link_index,
            lane: c.lane_in.clone(),
        })?;
        let (last, prev) = lane.last_points();
        let (last_e, prev_e) = (mapper.to_engine(last), mapper.to_engine(prev));
        let position = Point3::new(last_e.x, last_e.y, mapper.scale(options.height_offset));
        let mut yaw = mapper.yaw_of_engine_vector(last_e.x - prev_e.x, last_e.y - prev_e.y);
        if options.face_approach {
            yaw = crate::geo::normalize_degrees(yaw + 180.0);
        }
        let handle = plan.spawns.len();
        plan.spawns.push(LightSpawn { tl_id: c.tl_id.clone(), link_index: c.link_index, position, yaw });
        plan.index.entry(c.tl_id.clone()).or_default().entry(c.link_index).or_default().push(handle);
    }
    Ok(plan)
}

/// Signal of one controlled link, from one character of a state string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalState {
    Green,
    GreenMinor,
    Yellow,
    Red,
    Off,
    OffBlinking,
    RedYellow,
    Stop,
    Unknown,
}

impl SignalState {
    pub fn from_char(c: char) -> Self {
        match c {
            'G' => SignalState::Green,
            'g' => SignalState::GreenMinor,
            'y' | 'Y' => SignalState::Yellow,
            'r' | 'R' => SignalState::Red,
            'O' => SignalState::Off,
            'o' => SignalState::OffBlinking,
            'u' => SignalState::RedYellow,
            's' => SignalState::Stop,
            _ => SignalState::Unknown,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            SignalState::Green => 'G',
            SignalState::GreenMinor => 'g',
            SignalState::Yellow => 'y',
            SignalState::Red => 'r',
            SignalState::Off => 'O',
            SignalState::OffBlinking => 'o',
            SignalState::RedYellow => 'u',
            SignalState::Stop => 's',
            SignalState::Unknown => '?',
        }
    }
}

impl TrafficLightPlan {
    /// Pairs every signal head of `tl_id` with the character at its link
    /// index. Links past the end of the string are `Unknown`.
    pub fn apply_signal_string(&self, tl_id: &str, state: &str) -> Vec<(SpawnHandle, SignalState)> {
        let Some(links) = self.index.get(tl_id) else {
            warn!("signal state for unplanned traffic light '{tl_id}'");
            return Vec::new();
        };
        let chars: Vec<char> = state.chars().collect();
        links
            .iter()
            .flat_map(|(&link, handles)| {
                let s = chars.get(link as usize).map_or(SignalState::Unknown, |&c| SignalState::from_char(c));
                handles.iter().map(move |&h| (h, s))
            })
            .collect()
    }

    pub fn junction_ids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<net version="1.20">
    <location netOffset="0.00,0.00" convBoundary="0.00,0.00,20.00,0.00"/>
    <edge id="E0" from="A" to="J1" priority="1">
        <lane id="E0_0" index="0" speed="13.89" length="10.00" shape="0.00,0.00 10.00,0.00"/>
    </edge>
    <edge id="E1" from="J1" to="B" priority="1">
        <lane id="E1_0" index="0" speed="13.89" length="10.00" shape="10.00,0.00 20.00,0.00"/>
    </edge>
    <junction id="J1" type="traffic_light" x="10.00" y="0.00" incLanes="E0_0" intLanes="" shape=""/>
    <connection from="E0" to="E1" fromLane="0" toLane="0" tl="J1" linkIndex="0" dir="s" state="O"/>
</net>"#;

    #[test]
    fn minimal_network() {
        let net = parse_network(MINIMAL.as_bytes()).unwrap();
        assert_eq!(net.tl_connections.len(), 1);
        assert_eq!(
            net.tl_connections[0],
            TlConnection { lane_in: "E0_0".into(), lane_out: "E1_0".into(), tl_id: "J1".into(), link_index: 0 }
        );
        assert_eq!(net.lanes["E0_0"].shape, vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)]);
        assert_eq!(net.tl_junctions, vec!["J1".to_owned()]);
    }

    #[test]
    fn connections_without_tl_are_skipped() {
        let xml = MINIMAL.replace(r#" tl="J1" linkIndex="0""#, "");
        let net = parse_network(xml.as_bytes()).unwrap();
        assert!(net.tl_connections.is_empty());
        assert_eq!(net.connection_count, 1);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_network(b"<net><edge></net>"), Err(NetError::MalformedXml(_))));
        assert!(matches!(parse_network(b"<notnet/>"), Err(NetError::MalformedXml(_))));
        assert!(matches!(parse_network(&[0xff, 0xfe]), Err(NetError::MalformedXml(_))));
        let bad = MINIMAL.replace(r#"linkIndex="0""#, r#"linkIndex="zero""#);
        assert!(matches!(parse_network(bad.as_bytes()), Err(NetError::BadLinkIndex { .. })));
        let neg = MINIMAL.replace(r#"linkIndex="0""#, r#"linkIndex="-1""#);
        assert!(matches!(parse_network(neg.as_bytes()), Err(NetError::BadLinkIndex { .. })));
        let shapeless = MINIMAL.replace(r#"shape="0.00,0.00 10.00,0.00""#, r#"shape="0.00,0.00""#);
        assert_eq!(parse_network(shapeless.as_bytes()), Err(NetError::MissingShape("E0_0".into())));
    }

    #[test]
    fn duplicate_shape_points_are_collapsed() {
        assert_eq!(parse_shape("1,2 1,2 3,4").unwrap(), vec![Point2::new(1.0, 2.0), Point2::new(3.0, 4.0)]);
        assert_eq!(parse_shape("1,2,5.5 3,4,6").unwrap().len(), 2);
        assert!(parse_shape("1,2 1,2").is_none());
        assert!(parse_shape("a,b 1,2").is_none());
    }

    #[test]
    fn internal_lanes_are_kept() {
        let xml = MINIMAL.replace(
            "<junction",
            r#"<edge id=":J1_0" function="internal"><lane id=":J1_0_0" index="0" shape="10.00,0.00 10.50,0.00"/></edge>
    <junction"#,
        );
        let net = parse_network(xml.as_bytes()).unwrap();
        assert!(net.lanes.contains_key(":J1_0_0"));
    }

    #[test]
    fn plan_position_and_yaw() {
        let net = parse_network(MINIMAL.as_bytes()).unwrap();
        let mapper = CoordinateMapper::default();
        let plan = plan_traffic_lights(&net, &mapper, PlanOptions { height_offset: 3.0, face_approach: false }).unwrap();
        assert_eq!(plan.spawns.len(), 1);
        assert_eq!(plan.spawns[0].position, Point3::new(10.0, 0.0, 3.0));
        // (0,0) -> (10,0) points along +x, engine yaw 0
        assert_eq!(plan.spawns[0].yaw, 0.0);
        let flipped = plan_traffic_lights(&net, &mapper, PlanOptions { height_offset: 3.0, face_approach: true }).unwrap();
        assert_eq!(flipped.spawns[0].yaw, 180.0);
    }

    #[test]
    fn plan_yaw_on_north_bound_lane() {
        // moving +y in the simulation is -y in engine space: yaw 270
        let mut net = Network::default();
        net.lanes.insert("L".into(), Lane { id: "L".into(), shape: vec![Point2::new(0.0, 0.0), Point2::new(0.0, 5.0)] });
        net.tl_connections.push(TlConnection { lane_in: "L".into(), lane_out: "M".into(), tl_id: "J".into(), link_index: 0 });
        let plan = plan_traffic_lights(&net, &CoordinateMapper::default(), PlanOptions::default()).unwrap();
        assert_eq!(plan.spawns[0].yaw, 270.0);
        assert_eq!(plan.spawns[0].position, Point3::new(0.0, -5.0, DEFAULT_HEIGHT_OFFSET));
    }

    #[test]
    fn dangling_lane() {
        let mut net = parse_network(MINIMAL.as_bytes()).unwrap();
        net.lanes.remove("E0_0");
        assert!(matches!(
            plan_traffic_lights(&net, &CoordinateMapper::default(), PlanOptions::default()),
            Err(NetError::DanglingLane { .. })
        ));
    }

    fn four_link_plan() -> TrafficLightPlan {
        let mut net = Network::default();
        for i in 0..4u32 {
            let id = format!("L{i}");
            net.lanes.insert(id.clone(), Lane { id: id.clone(), shape: vec![Point2::new(0.0, i as f64), Point2::new(5.0, i as f64)] });
            net.tl_connections.push(TlConnection { lane_in: id, lane_out: "X".into(), tl_id: "J1".into(), link_index: i });
        }
        plan_traffic_lights(&net, &CoordinateMapper::default(), PlanOptions::default()).unwrap()
    }

    #[test]
    fn shared_junction_indexes_both_links() {
        let plan = four_link_plan();
        assert_eq!(plan.index["J1"].keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn signal_string_mapping() {
        use SignalState::*;
        let plan = four_link_plan();
        let states = |s: &str| plan.apply_signal_string("J1", s).into_iter().map(|(_, st)| st).collect::<Vec<_>>();
        assert_eq!(states("GrGr"), vec![Green, Red, Green, Red]);
        assert_eq!(states(""), vec![Unknown; 4]);
        assert_eq!(states("Gy"), vec![Green, Yellow, Unknown, Unknown]);
        assert_eq!(states("gouX"), vec![GreenMinor, OffBlinking, RedYellow, Unknown]);
        assert!(plan.apply_signal_string("nope", "GrGr").is_empty());
    }

    #[test]
    fn duplicate_link_index_fans_out() {
        let mut net = parse_network(MINIMAL.as_bytes()).unwrap();
        let mut dup = net.tl_connections[0].clone();
        dup.lane_out = "E9_0".into();
        net.tl_connections.push(dup);
        let plan = plan_traffic_lights(&net, &CoordinateMapper::default(), PlanOptions::default()).unwrap();
        assert_eq!(plan.index["J1"][&0], vec![0, 1]);
        assert_eq!(plan.apply_signal_string("J1", "y").len(), 2);
    }

    proptest! {
        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = parse_network(&bytes);
        }

        #[test]
        fn parser_survives_mutated_fixture(pos in 0usize..700, byte in any::<u8>()) {
            let mut bytes = MINIMAL.as_bytes().to_vec();
            let at = pos % bytes.len();
            bytes[at] = byte;
            let first = parse_network(&bytes);
            prop_assert_eq!(first, parse_network(&bytes));
        }

        #[test]
        fn signal_chars_never_panic(c in any::<char>()) {
            let s = SignalState::from_char(c);
            if s != SignalState::Unknown {
                prop_assert_eq!(SignalState::from_char(s.as_char()), s);
            }
        }
    }
}
