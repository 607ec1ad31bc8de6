//! Closed-form scenario kinematics.
//!
//! A vehicle's travelled distance is a function of time since its scheduled
//! departure only, so stepping never accumulates error: the state after `k`
//! steps equals [`VehicleTrack::state_at`] at `k * step_length`.

use std::collections::HashMap;

use crate::bridge::VehicleState;
use crate::geo::{normalize_degrees, Point2};

use super::scenario::{point, Scenario, ScenarioLight};

/// Tolerance for comparing step times against scheduled times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct VehicleTrack {
    pub id: String,
    pub vtype: String,
    pub depart: f64,
    waypoints: Vec<Point2>,
    /// Distance along the route at each waypoint.
    cumulative: Vec<f64>,
    /// `(start, speed, distance at start)` relative to departure.
    profile: Vec<(f64, f64, f64)>,
}

impl VehicleTrack {
    fn new(v: &super::scenario::ScenarioVehicle) -> Self {
        let mut waypoints: Vec<Point2> = Vec::with_capacity(v.route.len());
        for p in v.route.iter().map(|p| point(*p)) {
            if waypoints.last() != Some(&p) {
                waypoints.push(p);
            }
        }
        let mut cumulative = vec![0.0];
        for w in waypoints.windows(2) {
            cumulative.push(cumulative.last().unwrap() + w[0].distance(w[1]));
        }
        let mut profile = Vec::with_capacity(v.speeds.len());
        let mut dist = 0.0;
        for (i, [t, s]) in v.speeds.iter().copied().enumerate() {
            if i > 0 {
                let (pt, ps, _) = profile[i - 1];
                dist += ps * (t - pt);
            }
            profile.push((t, s, dist));
        }
        Self { id: v.id.clone(), vtype: v.vtype.clone(), depart: v.depart, waypoints, cumulative, profile }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment(&self, rel: f64) -> (f64, f64, f64) {
        let i = self.profile.partition_point(|p| p.0 <= rel).max(1) - 1;
        self.profile[i]
    }

    /// Distance travelled `rel` seconds after departure, not capped at the
    /// route length.
    pub fn distance_at(&self, rel: f64) -> f64 {
        if rel <= 0.0 {
            return 0.0;
        }
        let (start, speed, dist) = self.segment(rel);
        dist + speed * (rel - start)
    }

    pub fn speed_at(&self, rel: f64) -> f64 {
        self.segment(rel.max(0.0)).1
    }

    /// Position and TraCI heading (degrees clockwise from north) at a
    /// distance along the route.
    pub fn pose_at(&self, distance: f64) -> (Point2, f64) {
        let d = distance.clamp(0.0, self.length());
        let seg = (self.cumulative.partition_point(|c| *c <= d).max(1) - 1).min(self.waypoints.len() - 2);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let t = (d - self.cumulative[seg]) / (self.cumulative[seg + 1] - self.cumulative[seg]);
        let heading = normalize_degrees((b.x - a.x).atan2(b.y - a.y).to_degrees());
        (a.lerp(b, t), heading)
    }

    /// True once the vehicle has covered its whole route at time `t`.
    pub fn finished_at(&self, t: f64) -> bool {
        self.distance_at(t - self.depart) >= self.length() - TIME_EPS
    }

    /// The state the server reports at simulation time `t`, given the
    /// server's step length (used for the acceleration estimate).
    pub fn state_at(&self, t: f64, step_length: f64) -> VehicleState {
        let rel = t - self.depart;
        let (position, angle) = self.pose_at(self.distance_at(rel));
        let speed = self.speed_at(rel);
        let before = self.speed_at(rel - step_length);
        VehicleState {
            id: self.id.clone(),
            position,
            angle,
            speed,
            acceleration: (speed - before) / step_length,
            vtype: self.vtype.clone(),
            sim_time: t,
        }
    }
}

#[derive(Debug, Clone)]
struct LightProgram {
    phases: Vec<(String, f64)>,
    cycle: f64,
}

impl LightProgram {
    fn new(l: &ScenarioLight) -> Self {
        Self { phases: l.program.clone(), cycle: l.program.iter().map(|p| p.1).sum() }
    }

    fn state_at(&self, t: f64) -> &str {
        let mut into = (t + TIME_EPS).rem_euclid(self.cycle);
        for (state, duration) in &self.phases {
            if into < *duration {
                return state;
            }
            into -= duration;
        }
        &self.phases.last().unwrap().0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub departed: Vec<String>,
    pub arrived: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MockSim {
    step_length: f64,
    step: u64,
    tracks: Vec<VehicleTrack>,
    /// Track indices in departure order.
    schedule: Vec<usize>,
    next_departure: usize,
    active: Vec<usize>,
    by_id: HashMap<String, usize>,
    lights: Vec<(String, LightProgram)>,
    last_events: StepEvents,
}

impl MockSim {
    pub fn new(scenario: &Scenario) -> Self {
        let tracks: Vec<VehicleTrack> = scenario.vehicles.iter().map(VehicleTrack::new).collect();
        let mut schedule: Vec<usize> = (0..tracks.len()).collect();
        schedule.sort_by(|&a, &b| tracks[a].depart.total_cmp(&tracks[b].depart).then(a.cmp(&b)));
        let by_id = tracks.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        let lights = scenario.lights.iter().map(|l| (l.id.clone(), LightProgram::new(l))).collect();
        Self {
            step_length: scenario.step_length,
            step: 0,
            tracks,
            schedule,
            next_departure: 0,
            active: Vec::new(),
            by_id,
            lights,
            last_events: StepEvents::default(),
        }
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.step_length
    }

    pub fn tracks(&self) -> &[VehicleTrack] {
        &self.tracks
    }

    pub fn track(&self, id: &str) -> Option<&VehicleTrack> {
        self.by_id.get(id).map(|&i| &self.tracks[i])
    }

    /// Departures and arrivals of the most recent [`MockSim::advance_to`].
    pub fn last_events(&self) -> &StepEvents {
        &self.last_events
    }

    /// One step: time advances, due vehicles depart, finished ones arrive.
    pub fn advance(&mut self) -> StepEvents {
        self.step += 1;
        let t = self.time();
        let mut events = StepEvents::default();
        while let Some(&i) = self.schedule.get(self.next_departure) {
            if self.tracks[i].depart > t + TIME_EPS {
                break;
            }
            self.next_departure += 1;
            self.active.push(i);
            events.departed.push(self.tracks[i].id.clone());
        }
        let tracks = &self.tracks;
        self.active.retain(|&i| {
            let done = tracks[i].finished_at(t);
            if done {
                events.arrived.push(tracks[i].id.clone());
            }
            !done
        });
        events
    }

    /// Steps until `target` is reached, or exactly once when `target` is not
    /// ahead of the current time. Events accumulate over all steps taken.
    pub fn advance_to(&mut self, target: f64) -> &StepEvents {
        let mut events = self.advance();
        while self.time() < target - TIME_EPS {
            let more = self.advance();
            events.departed.extend(more.departed);
            events.arrived.extend(more.arrived);
        }
        self.last_events = events;
        &self.last_events
    }

    pub fn active_ids(&self) -> Vec<String> {
        self.active.iter().map(|&i| self.tracks[i].id.clone()).collect()
    }

    /// State of a vehicle currently in the simulation.
    pub fn vehicle(&self, id: &str) -> Option<VehicleState> {
        let &i = self.by_id.get(id)?;
        self.active.contains(&i).then(|| self.tracks[i].state_at(self.time(), self.step_length))
    }

    pub fn light_ids(&self) -> Vec<String> {
        self.lights.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn light_state(&self, id: &str) -> Option<&str> {
        let t = self.time();
        self.lights.iter().find(|(l, _)| l == id).map(|(_, p)| p.state_at(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::parse(
            r#"
step_length = 0.1
[[vehicles]]
id = "straight"
depart = 0.0
route = [[0.0, 0.0], [10.0, 0.0]]
speeds = [[0.0, 10.0]]
[[vehicles]]
id = "corner"
depart = 0.5
route = [[0.0, 0.0], [0.0, 10.0], [10.0, 10.0]]
speeds = [[0.0, 5.0], [1.0, 10.0]]
[[lights]]
id = "J"
program = [["GrGr", 5.0], ["rGrG", 5.0]]
"#,
        )
        .unwrap()
    }

    #[test]
    fn one_meter_per_step() {
        let mut sim = MockSim::new(&scenario());
        let mut last = sim.advance_to(0.0).clone();
        assert_eq!(last.departed, vec!["straight".to_owned()]);
        for k in 1..9 {
            let x = sim.vehicle("straight").unwrap().position.x;
            assert!((x - k as f64).abs() < 1e-9, "{k}: {x}");
            last = sim.advance_to(0.0).clone();
        }
        assert!(last.arrived.is_empty());
        // cumulative distance reaches 10 m at t = 1.0
        assert_eq!(sim.advance_to(0.0).arrived, vec!["straight".to_owned()]);
        assert!(sim.vehicle("straight").is_none());
    }

    #[test]
    fn heading_is_clockwise_from_north() {
        let s = scenario();
        let t = MockSim::new(&s).track("corner").unwrap().clone();
        assert_eq!(t.pose_at(1.0).1, 0.0);
        assert_eq!(t.pose_at(15.0).1, 90.0);
        assert_eq!(MockSim::new(&s).track("straight").unwrap().pose_at(5.0).1, 90.0);
    }

    #[test]
    fn piecewise_speed_and_acceleration() {
        let s = scenario();
        let sim = MockSim::new(&s);
        let t = sim.track("corner").unwrap();
        assert!((t.distance_at(2.0) - 15.0).abs() < 1e-12);
        let st = t.state_at(1.5, 0.1);
        assert_eq!(st.speed, 10.0);
        assert!((st.acceleration - 50.0).abs() < 1e-9);
        assert_eq!(t.state_at(2.0, 0.1).acceleration, 0.0);
    }

    #[test]
    fn light_program_cycles() {
        let mut sim = MockSim::new(&scenario());
        let mut seen = Vec::new();
        for _ in 0..200 {
            sim.advance();
            let t = sim.time();
            let expected = if (t + 1e-9) % 10.0 < 5.0 { "GrGr" } else { "rGrG" };
            assert_eq!(sim.light_state("J").unwrap(), expected, "t = {t}");
            seen.push(sim.light_state("J").unwrap().to_owned());
        }
        assert!(seen.contains(&"rGrG".to_owned()));
        assert_eq!(sim.light_state("nope"), None);
    }

    #[test]
    fn advance_to_accumulates_events() {
        let mut sim = MockSim::new(&scenario());
        let ev = sim.advance_to(1.0).clone();
        assert!((sim.time() - 1.0).abs() < 1e-9);
        assert_eq!(ev.departed, vec!["straight".to_owned(), "corner".to_owned()]);
        assert_eq!(ev.arrived, vec!["straight".to_owned()]);
    }
}
