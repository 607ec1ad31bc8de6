//! Simulation plane to engine space mapping and terrain height queries.
//!
//! Engine space keeps the simulation's x axis and inverts y. Engine yaw is
//! measured in degrees from +x toward +y in engine coordinates, normalised
//! to `[0, 360)`. With that convention a TraCI heading `a` (clockwise from
//! north) maps to `a - 90`, which is the default `yaw_offset`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// `(1 - t) * self + t * other`; exact at both ends.
    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2 { x: (1.0 - t) * self.x + t * other.x, y: (1.0 - t) * self.y + t * other.y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn horizontal_distance(self, other: Point3) -> f64 {
        self.xy().distance(other.xy())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Normalises an angle in degrees into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed shortest angular difference `to - from` in `(-180, 180]`.
pub fn shortest_arc(from: f64, to: f64) -> f64 {
    let d = normalize_degrees(to - from);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Interpolates between two headings along the shorter arc.
pub fn lerp_degrees(from: f64, to: f64, t: f64) -> f64 {
    if t >= 1.0 {
        return normalize_degrees(to);
    }
    normalize_degrees(from + shortest_arc(from, to) * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinateMapper {
    pub offset_x: f64,
    pub offset_y: f64,
    pub units_per_meter: f64,
    pub yaw_offset: f64,
    /// Negates every engine yaw, for engines whose rotation sense is the
    /// mirror of the convention documented at module level.
    pub flip_yaw_sign: bool,
}

impl Default for CoordinateMapper {
    fn default() -> Self {
        Self { offset_x: 0.0, offset_y: 0.0, units_per_meter: 1.0, yaw_offset: 90.0, flip_yaw_sign: false }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("units_per_meter must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("heightfield needs at least 2x2 samples, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("heightfield expects {expected} samples, found {found}")]
    SampleCount { expected: usize, found: usize },
    #[error("heightfield sample {0} is not a finite number")]
    BadSample(String),
    #[error("heightfield header must be `origin_x origin_y cell_size rows cols`: {0}")]
    BadHeader(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("wheelbase must be positive, got {0}")]
    InvalidWheelbase(f64),
}

impl CoordinateMapper {
    pub fn new(offset_x: f64, offset_y: f64, units_per_meter: f64) -> Result<Self, GeoError> {
        let m = Self { offset_x, offset_y, units_per_meter, ..Self::default() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.units_per_meter > 0.0 && self.units_per_meter.is_finite()) {
            return Err(GeoError::InvalidScale(self.units_per_meter));
        }
        Ok(())
    }

    pub fn to_engine(&self, raw: Point2) -> Point2 {
        Point2 {
            x: (raw.x - self.offset_x) * self.units_per_meter,
            y: -(raw.y - self.offset_y) * self.units_per_meter,
        }
    }

    pub fn from_engine(&self, engine: Point2) -> Point2 {
        Point2 {
            x: engine.x / self.units_per_meter + self.offset_x,
            y: -engine.y / self.units_per_meter + self.offset_y,
        }
    }

    /// Meters to engine units.
    pub fn scale(&self, meters: f64) -> f64 {
        meters * self.units_per_meter
    }

    pub fn to_engine_yaw(&self, sumo_angle: f64) -> f64 {
        let yaw = sumo_angle - self.yaw_offset;
        normalize_degrees(if self.flip_yaw_sign { -yaw } else { yaw })
    }

    /// Engine yaw of a direction vector given in engine coordinates.
    pub fn yaw_of_engine_vector(&self, dx: f64, dy: f64) -> f64 {
        let yaw = dy.atan2(dx).to_degrees();
        normalize_degrees(if self.flip_yaw_sign { -yaw } else { yaw })
    }

    /// Unit direction in the engine plane for an engine yaw.
    pub fn engine_direction(&self, yaw: f64) -> Point2 {
        let rad = if self.flip_yaw_sign { -yaw } else { yaw }.to_radians();
        Point2::new(rad.cos(), rad.sin())
    }
}

/// Elevation lookup standing in for a downward raycast against terrain.
///
/// Coordinates and elevations are engine units.
#[derive(Debug, Clone, PartialEq)]
pub enum HeightField {
    Flat { elevation: f64 },
    Grid(HeightGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    rows: usize,
    cols: usize,
    /// Row-major; row `r` lies at `origin_y + r * cell_size`.
    samples: Vec<f64>,
    max_elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightSample {
    pub elevation: f64,
    pub out_of_bounds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchSample {
    pub pitch: f64,
    pub out_of_bounds: bool,
}

impl Default for HeightField {
    fn default() -> Self {
        HeightField::Flat { elevation: 0.0 }
    }
}

impl HeightGrid {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        rows: usize,
        cols: usize,
        samples: Vec<f64>,
    ) -> Result<Self, GeoError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GeoError::InvalidCellSize(cell_size));
        }
        if rows < 2 || cols < 2 {
            return Err(GeoError::TooSmall { rows, cols });
        }
        if samples.len() != rows * cols {
            return Err(GeoError::SampleCount { expected: rows * cols, found: samples.len() });
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(GeoError::BadSample(bad.to_string()));
        }
        let max_elevation = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { origin_x, origin_y, cell_size, rows, cols, samples, max_elevation })
    }

    pub fn node(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.cols + col]
    }

    pub fn max_elevation(&self) -> f64 {
        self.max_elevation
    }

    /// Bilinear interpolation of the four surrounding nodes, `None` outside
    /// the sampled rectangle.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let gx = (x - self.origin_x) / self.cell_size;
        let gy = (y - self.origin_y) / self.cell_size;
        let max_c = (self.cols - 1) as f64;
        let max_r = (self.rows - 1) as f64;
        if !(gx >= 0.0 && gy >= 0.0 && gx <= max_c && gy <= max_r) {
            return None;
        }
        // the last row/column reuses the cell below it with t = 1
        let c0 = (gx.floor() as usize).min(self.cols - 2);
        let r0 = (gy.floor() as usize).min(self.rows - 2);
        let tx = gx - c0 as f64;
        let ty = gy - r0 as f64;
        let h00 = self.node(r0, c0);
        let h10 = self.node(r0, c0 + 1);
        let h01 = self.node(r0 + 1, c0);
        let h11 = self.node(r0 + 1, c0 + 1);
        let bottom = h00 + (h10 - h00) * tx;
        let top = h01 + (h11 - h01) * tx;
        Some(bottom + (top - bottom) * ty)
    }
}

impl HeightField {
    pub fn flat(elevation: f64) -> Self {
        HeightField::Flat { elevation }
    }

    /// Loads the plain-text grid format: a header line
    /// `origin_x origin_y cell_size rows cols` followed by `rows * cols`
    /// whitespace-separated elevations in row-major order. Lines starting
    /// with `#` are comments.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let mut header = Vec::with_capacity(5);
        for _ in 0..5 {
            header.push(tokens.next().ok_or_else(|| GeoError::BadHeader("too few fields".into()))?);
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| GeoError::BadHeader(format!("'{s}' is not a number")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| GeoError::BadHeader(format!("'{s}' is not a count")));
        let (ox, oy, cell) = (num(header[0])?, num(header[1])?, num(header[2])?);
        let (rows, cols) = (int(header[3])?, int(header[4])?);
        let samples = tokens
            .map(|t| t.parse::<f64>().map_err(|_| GeoError::BadSample(t.to_owned())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HeightField::Grid(HeightGrid::new(ox, oy, cell, rows, cols, samples)?))
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeoError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    /// Highest elevation a downward probe must start above.
    pub fn max_elevation(&self) -> f64 {
        match self {
            HeightField::Flat { elevation } => *elevation,
            HeightField::Grid(g) => g.max_elevation(),
        }
    }

    /// Surface elevation under `(x, y)` as seen by a vertical ray cast down
    /// from `probe_height`. Points outside the grid, or under a probe that
    /// starts below the surface, return `fallback` with the flag set.
    pub fn snap_height(&self, x: f64, y: f64, probe_height: f64, fallback: f64) -> HeightSample {
        let hit = match self {
            HeightField::Flat { elevation } => Some(*elevation),
            HeightField::Grid(g) => g.bilinear(x, y),
        };
        match hit {
            Some(h) if h <= probe_height => HeightSample { elevation: h, out_of_bounds: false },
            _ => HeightSample { elevation: fallback, out_of_bounds: true },
        }
    }

    /// Pitch from two probes half a wheelbase ahead of and behind `center`
    /// along `yaw`. Positive means nose up.
    pub fn snap_pitch(
        &self,
        mapper: &CoordinateMapper,
        center: Point2,
        yaw: f64,
        wheelbase: f64,
        probe_height: f64,
    ) -> Result<PitchSample, GeoError> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(GeoError::InvalidWheelbase(wheelbase));
        }
        let dir = mapper.engine_direction(yaw);
        let half = wheelbase / 2.0;
        let front = self.snap_height(center.x + dir.x * half, center.y + dir.y * half, probe_height, 0.0);
        let rear = self.snap_height(center.x - dir.x * half, center.y - dir.y * half, probe_height, 0.0);
        if front.out_of_bounds || rear.out_of_bounds {
            return Ok(PitchSample { pitch: 0.0, out_of_bounds: true });
        }
        let pitch = (front.elevation - rear.elevation).atan2(wheelbase).to_degrees();
        Ok(PitchSample { pitch, out_of_bounds: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp(slope_x: f64, slope_y: f64) -> HeightField {
        // 11x11 nodes, 10 m cells, h = slope_x * x + slope_y * y
        let mut samples = Vec::new();
        for r in 0..11 {
            for c in 0..11 {
                samples.push(slope_x * (c as f64 * 10.0) + slope_y * (r as f64 * 10.0));
            }
        }
        HeightField::Grid(HeightGrid::new(0.0, 0.0, 10.0, 11, 11, samples).unwrap())
    }

    #[test]
    fn origin_maps_to_origin() {
        let m = CoordinateMapper::new(1000.0, 2000.0, 1.0).unwrap();
        assert_eq!(m.to_engine(Point2::new(1000.0, 2000.0)), Point2::new(0.0, 0.0));
    }

    #[test]
    fn offsets_and_y_inversion() {
        let m = CoordinateMapper::new(1000.0, 2000.0, 1.0).unwrap();
        assert_eq!(m.to_engine(Point2::new(1010.0, 2005.0)), Point2::new(10.0, -5.0));
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(CoordinateMapper::new(0.0, 0.0, 0.0).is_err());
        assert!(CoordinateMapper::new(0.0, 0.0, -2.0).is_err());
    }

    #[test]
    fn yaw_offset_and_normalization() {
        let m = CoordinateMapper::default();
        assert_eq!(m.to_engine_yaw(90.0), 0.0);
        assert_eq!(m.to_engine_yaw(450.0), m.to_engine_yaw(90.0));
        assert_eq!(m.to_engine_yaw(0.0), 270.0);
        let flipped = CoordinateMapper { flip_yaw_sign: true, ..m };
        assert_eq!(flipped.to_engine_yaw(0.0), 90.0);
    }

    #[test]
    fn heading_matches_mapped_displacement() {
        // a TraCI heading a points along (sin a, cos a) in the simulation plane
        let m = CoordinateMapper { offset_x: 7.0, offset_y: -3.0, units_per_meter: 100.0, ..Default::default() };
        for deg in (0..360).step_by(15) {
            let a = deg as f64;
            let p0 = Point2::new(50.0, 20.0);
            let p1 = Point2::new(p0.x + a.to_radians().sin(), p0.y + a.to_radians().cos());
            let (e0, e1) = (m.to_engine(p0), m.to_engine(p1));
            let expected = m.yaw_of_engine_vector(e1.x - e0.x, e1.y - e0.y);
            assert!(shortest_arc(m.to_engine_yaw(a), expected).abs() < 1e-9, "heading {a}");
        }
    }

    #[test]
    fn flat_plane_snaps_everywhere() {
        let hf = HeightField::flat(0.0);
        for (x, y) in [(0.0, 0.0), (-1e6, 3.5), (42.0, 1e5)] {
            assert_eq!(hf.snap_height(x, y, 100.0, -1.0), HeightSample { elevation: 0.0, out_of_bounds: false });
        }
    }

    #[test]
    fn grid_node_returns_node_value() {
        let mut samples = vec![0.0; 9];
        samples[4] = 412.5;
        let hf = HeightField::Grid(HeightGrid::new(0.0, 0.0, 2.0, 3, 3, samples).unwrap());
        assert_eq!(hf.snap_height(2.0, 2.0, 1000.0, 0.0).elevation, 412.5);
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        // corners chosen so a bilinear surface is not planar
        let samples = vec![1.0, 4.0, 10.0, 2.0];
        let hf = HeightField::Grid(HeightGrid::new(0.0, 0.0, 1.0, 2, 2, samples).unwrap());
        let h = hf.snap_height(0.5, 0.5, 100.0, 0.0).elevation;
        assert_abs_diff_eq!(h, (1.0 + 4.0 + 10.0 + 2.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_uses_fallback() {
        let hf = ramp(0.1, 0.0);
        let s = hf.snap_height(-1.0, 5.0, 1000.0, -7.0);
        assert_eq!(s, HeightSample { elevation: -7.0, out_of_bounds: true });
        let s = hf.snap_height(100.0001, 5.0, 1000.0, -7.0);
        assert!(s.out_of_bounds);
        assert!(!hf.snap_height(100.0, 100.0, 1000.0, 0.0).out_of_bounds);
    }

    #[test]
    fn probe_below_surface_is_flagged() {
        let hf = HeightField::flat(50.0);
        assert!(hf.snap_height(0.0, 0.0, 10.0, 0.0).out_of_bounds);
    }

    #[test]
    fn pitch_cases() {
        let m = CoordinateMapper::default();
        let flat = HeightField::flat(3.0);
        assert_eq!(flat.snap_pitch(&m, Point2::new(1.0, 1.0), 33.0, 2.5, 100.0).unwrap().pitch, 0.0);

        // slope 1 means h_front - h_rear = wheelbase
        let hf = ramp(1.0, 0.0);
        let p = hf.snap_pitch(&m, Point2::new(50.0, 50.0), 0.0, 4.0, 1000.0).unwrap();
        assert_abs_diff_eq!(p.pitch, 45.0, epsilon = 1e-9);

        let hf = ramp(0.0, 0.05);
        let p = hf.snap_pitch(&m, Point2::new(50.0, 50.0), 90.0, 3.0, 1000.0).unwrap();
        assert_abs_diff_eq!(p.pitch, 0.05f64.atan().to_degrees(), epsilon = 1e-9);

        assert!(hf.snap_pitch(&m, Point2::new(0.5, 50.0), 0.0, 3.0, 1000.0).unwrap().out_of_bounds);
        assert!(hf.snap_pitch(&m, Point2::new(0.5, 50.0), 0.0, 0.0, 1000.0).is_err());
    }

    #[test]
    fn parse_text_grid() {
        let hf = HeightField::parse("# demo\n0 0 5 2 3\n1 2 3\n4 5 6\n").unwrap();
        assert_eq!(hf.snap_height(10.0, 5.0, 100.0, 0.0).elevation, 6.0);
        assert_eq!(hf.max_elevation(), 6.0);
        assert!(matches!(HeightField::parse("0 0 5 2 3\n1 2 3\n4 5"), Err(GeoError::SampleCount { .. })));
        assert!(matches!(HeightField::parse("0 0 -5 2 2\n1 2 3 4"), Err(GeoError::InvalidCellSize(_))));
        assert!(matches!(HeightField::parse("0 0 x 2 2"), Err(GeoError::BadHeader(_))));
    }

    fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
        (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)
    }

    proptest! {
        #[test]
        fn inverse_recovers_raw(ox in -1e6..1e6f64, oy in -1e6..1e6f64, s in 0.01..100.0f64,
                                x in -1e6..1e6f64, y in -1e6..1e6f64) {
            let m = CoordinateMapper::new(ox, oy, s).unwrap();
            let back = m.from_engine(m.to_engine(Point2::new(x, y)));
            prop_assert!((back.x - x).abs() < 1e-9 * (1.0 + x.abs().max(ox.abs())));
            prop_assert!((back.y - y).abs() < 1e-9 * (1.0 + y.abs().max(oy.abs())));
        }

        #[test]
        fn distances_scale(s in 0.01..100.0f64, ax in -1e4..1e4f64, ay in -1e4..1e4f64,
                           bx in -1e4..1e4f64, by in -1e4..1e4f64) {
            let m = CoordinateMapper::new(123.0, -456.0, s).unwrap();
            let (a, b) = (Point2::new(ax, ay), Point2::new(bx, by));
            let d_raw = a.distance(b);
            let d_eng = m.to_engine(a).distance(m.to_engine(b));
            prop_assert!((d_eng - s * d_raw).abs() <= 1e-9 * (1.0 + s * d_raw));
        }

        #[test]
        fn y_inversion_flips_orientation(pts in proptest::array::uniform6(-1e3..1e3f64)) {
            let m = CoordinateMapper::new(10.0, 20.0, 2.0).unwrap();
            let (a, b, c) = (Point2::new(pts[0], pts[1]), Point2::new(pts[2], pts[3]), Point2::new(pts[4], pts[5]));
            let before = signed_area(a, b, c);
            prop_assume!(before.abs() > 1e-3);
            let after = signed_area(m.to_engine(a), m.to_engine(b), m.to_engine(c));
            prop_assert!(before.signum() == -after.signum());
        }

        #[test]
        fn bilinear_stays_within_corners(samples in proptest::collection::vec(-500.0..500.0f64, 16),
                                         x in 0.0..30.0f64, y in 0.0..30.0f64) {
            let g = HeightGrid::new(0.0, 0.0, 10.0, 4, 4, samples.clone()).unwrap();
            let h = g.bilinear(x, y).unwrap();
            let c = ((x / 10.0).floor() as usize).min(2);
            let r = ((y / 10.0).floor() as usize).min(2);
            let corners = [g.node(r, c), g.node(r, c + 1), g.node(r + 1, c), g.node(r + 1, c + 1)];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(h >= lo - 1e-9 && h <= hi + 1e-9);
        }

        #[test]
        fn pitch_antisymmetric(yaw in 0.0..360.0f64, cx in 20.0..80.0f64, cy in 20.0..80.0f64,
                               sx in -0.5..0.5f64, sy in -0.5..0.5f64) {
            let m = CoordinateMapper::default();
            let hf = ramp(sx, sy);
            let a = hf.snap_pitch(&m, Point2::new(cx, cy), yaw, 3.0, 1e4).unwrap().pitch;
            let b = hf.snap_pitch(&m, Point2::new(cx, cy), yaw + 180.0, 3.0, 1e4).unwrap().pitch;
            prop_assert!((a + b).abs() < 1e-9);
        }

        #[test]
        fn angle_normalization_range(a in -1e6..1e6f64) {
            let n = normalize_degrees(a);
            prop_assert!((0.0..360.0).contains(&n));
        }
    }
}
