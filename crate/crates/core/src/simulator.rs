//! Ground-truth scenarios and a 2D scanning range sensor.
//!
//! Object motion is integrated here in closed form from circular-arc
//! geometry, independently of [`crate::kinematics`], so end-to-end tests
//! compare the tracker against a separate derivation.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::angle::wrap;
use crate::error::{Error, Result};
use crate::fitting::{Point, PointCluster, Pose2};

/// Constant speed / yaw-rate piece of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    pub speed: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

/// Piecewise arc trajectory of an object's rotation-axis point.
///
/// `(x, y)` is the object *center* at `t = 0`. After the last segment the
/// object keeps the motion of that segment; with no segments it is static.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub length: f64,
    pub width: f64,
    /// Signed rotation-axis offset from the center along the centerline.
    #[serde(default)]
    pub l_true: f64,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Clutter {
    Rect {
        x: f64,
        y: f64,
        #[serde(default)]
        heading: f64,
        length: f64,
        width: f64,
    },
    Pole {
        x: f64,
        y: f64,
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub fov: f64,
    pub angular_resolution: f64,
    pub max_range: f64,
    pub range_sigma: f64,
    pub dropout_prob: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { fov: TAU, angular_resolution: 0.25f64.to_radians(), max_range: 60.0, range_sigma: 0.05, dropout_prob: 0.01 }
    }
}

/// Rigid shift of one vehicle's returns over a run of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub vehicle: usize,
    pub start_frame: usize,
    pub frames: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub duration: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    pub ego: TrajectorySpec,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub clutter: Vec<Clutter>,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub corruptions: Vec<Corruption>,
    #[serde(default)]
    pub seed: u64,
}

fn default_frame_rate() -> f64 {
    10.0
}

fn field_err(field: &str, msg: &str) -> Error {
    Error::invalid(format!("{field}: {msg}"))
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(field_err("duration", "must be > 0"));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(field_err("frame_rate", "must be > 0"));
        }
        let s = &self.sensor;
        for (name, v) in [("sensor.fov", s.fov), ("sensor.angular_resolution", s.angular_resolution), ("sensor.max_range", s.max_range)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field_err(name, "must be > 0"));
            }
        }
        if s.range_sigma.is_nan() || s.range_sigma < 0.0 {
            return Err(field_err("sensor.range_sigma", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&s.dropout_prob) {
            return Err(field_err("sensor.dropout_prob", "must be in [0, 1)"));
        }
        let check_traj = |name: String, t: &TrajectorySpec| -> Result<()> {
            for (k, seg) in t.segments.iter().enumerate() {
                if !(seg.duration.is_finite() && seg.duration >= 0.0) {
                    return Err(field_err(&format!("{name}.segments[{k}].duration"), "must be >= 0"));
                }
                if !(seg.speed.is_finite() && seg.yaw_rate.is_finite()) {
                    return Err(field_err(&format!("{name}.segments[{k}]"), "speed and yaw_rate must be finite"));
                }
            }
            Ok(())
        };
        check_traj("ego".into(), &self.ego)?;
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(field_err(&format!("vehicles[{i}]"), "length and width must be > 0"));
            }
            check_traj(format!("vehicles[{i}].trajectory"), &v.trajectory)?;
        }
        for (i, c) in self.clutter.iter().enumerate() {
            let ok = match c {
                Clutter::Rect { length, width, .. } => *length > 0.0 && *width > 0.0,
                Clutter::Pole { radius, .. } => *radius > 0.0,
            };
            if !ok {
                return Err(field_err(&format!("clutter[{i}]"), "dimensions must be > 0"));
            }
        }
        for (i, c) in self.corruptions.iter().enumerate() {
            if c.vehicle >= self.vehicles.len() {
                return Err(field_err(&format!("corruptions[{i}].vehicle"), "no such vehicle"));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate + 1e-9).floor() as usize
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }

    pub fn object_count(&self) -> usize {
        self.vehicles.len() + self.clutter.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Vehicle,
    Clutter,
}

/// Ground truth of one object at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub id: u32,
    pub kind: ObjectKind,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    /// Speed of the rotation-axis point.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub l_true: f64,
}

/// Pose of the rotation-axis point plus current speed and yaw rate.
#[derive(Debug, Clone, Copy)]
struct AxleState {
    x: f64,
    y: f64,
    theta: f64,
    speed: f64,
    yaw_rate: f64,
}

fn advance(s: &mut AxleState, speed: f64, yaw_rate: f64, t: f64) {
    let th0 = s.theta;
    if yaw_rate.abs() < 1e-12 {
        s.x += speed * t * th0.cos();
        s.y += speed * t * th0.sin();
    } else {
        let radius = speed / yaw_rate;
        let th1 = th0 + yaw_rate * t;
        s.x += radius * (th1.sin() - th0.sin());
        s.y += radius * (th0.cos() - th1.cos());
        s.theta = th1;
    }
    s.speed = speed;
    s.yaw_rate = yaw_rate;
}

fn axle_at(traj: &TrajectorySpec, l: f64, t: f64) -> AxleState {
    let mut s = AxleState {
        x: traj.x + l * traj.heading.cos(),
        y: traj.y + l * traj.heading.sin(),
        theta: traj.heading,
        speed: 0.0,
        yaw_rate: 0.0,
    };
    let mut remaining = t;
    for (k, seg) in traj.segments.iter().enumerate() {
        let last = k + 1 == traj.segments.len();
        let dt = if last { remaining } else { remaining.min(seg.duration) };
        advance(&mut s, seg.speed, seg.yaw_rate, dt);
        remaining -= dt;
        if remaining <= 0.0 && !last {
            // report the motion of the segment we are in
            break;
        }
    }
    s
}

fn center_truth(id: u32, kind: ObjectKind, traj: &TrajectorySpec, l: f64, length: f64, width: f64, t: f64) -> TruthState {
    let a = axle_at(traj, l, t);
    let (s, c) = a.theta.sin_cos();
    // center = axle - l * u; its velocity adds -l * w * u_perp
    TruthState {
        id,
        kind,
        x: a.x - l * c,
        y: a.y - l * s,
        theta: wrap(a.theta),
        vx: a.speed * c + l * a.yaw_rate * s,
        vy: a.speed * s - l * a.yaw_rate * c,
        yaw_rate: a.yaw_rate,
        speed: a.speed,
        length,
        width,
        l_true: l,
    }
}

pub fn ego_pose(config: &ScenarioConfig, t: f64) -> Pose2 {
    let a = axle_at(&config.ego, 0.0, t);
    Pose2 { x: a.x, y: a.y, theta: wrap(a.theta) }
}

/// Exact poses and velocities of every vehicle and clutter object at `t`.
/// Vehicles come first (ids `0..n`), then clutter.
pub fn generate_truth(config: &ScenarioConfig, t: f64) -> Result<Vec<TruthState>> {
    if !(t >= 0.0 && t <= config.duration + 1e-9) {
        return Err(Error::invalid(format!("time {t} outside [0, {}]", config.duration)));
    }
    let mut out = Vec::with_capacity(config.object_count());
    for (i, v) in config.vehicles.iter().enumerate() {
        out.push(center_truth(i as u32, ObjectKind::Vehicle, &v.trajectory, v.l_true, v.length, v.width, t));
    }
    for (j, c) in config.clutter.iter().enumerate() {
        let id = (config.vehicles.len() + j) as u32;
        let (x, y, heading, length, width) = match *c {
            Clutter::Rect { x, y, heading, length, width } => (x, y, heading, length, width),
            Clutter::Pole { x, y, radius } => (x, y, 0.0, 2.0 * radius, 2.0 * radius),
        };
        let traj = TrajectorySpec { x, y, heading, segments: Vec::new() };
        out.push(center_truth(id, ObjectKind::Clutter, &traj, 0.0, length, width, t));
    }
    Ok(out)
}

/// One sensor sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub timestamp: f64,
    pub ego_pose: Pose2,
    pub points: Vec<Point>,
    /// Object id of each return (`None` for unlabeled logs).
    pub labels: Option<Vec<u32>>,
    pub truth: Vec<TruthState>,
}

enum Shape {
    Polygon([Vector2<f64>; 4]),
    Circle(Vector2<f64>, f64),
}

fn box_corners(x: f64, y: f64, theta: f64, length: f64, width: f64) -> [Vector2<f64>; 4] {
    let (s, c) = theta.sin_cos();
    let u = Vector2::new(c, s) * (0.5 * length);
    let n = Vector2::new(-s, c) * (0.5 * width);
    let p = Vector2::new(x, y);
    [p + u + n, p - u + n, p - u - n, p + u - n]
}

/// Distance along a unit ray to the segment `a..b`, if hit.
fn ray_segment(o: &Vector2<f64>, d: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<f64> {
    let e = b - a;
    let denom = d.x * e.y - d.y * e.x;
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = a - o;
    let s = (w.x * e.y - w.y * e.x) / denom;
    let u = (w.x * d.y - w.y * d.x) / denom;
    (s > 0.0 && (0.0..=1.0).contains(&u)).then_some(s)
}

fn ray_circle(o: &Vector2<f64>, d: &Vector2<f64>, c: &Vector2<f64>, r: f64) -> Option<f64> {
    let w = o - c;
    let b = w.dot(d);
    let disc = b * b - (w.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let s = -b - disc.sqrt();
    (s > 0.0).then_some(s)
}

fn shapes(config: &ScenarioConfig, truth: &[TruthState]) -> Vec<(u32, Shape)> {
    truth
        .iter()
        .map(|t| {
            let idx = t.id as usize;
            let shape = match (t.kind, config.clutter.get(idx.wrapping_sub(config.vehicles.len()))) {
                (ObjectKind::Clutter, Some(Clutter::Pole { x, y, radius })) => Shape::Circle(Vector2::new(*x, *y), *radius),
                _ => Shape::Polygon(box_corners(t.x, t.y, t.theta, t.length, t.width)),
            };
            (t.id, shape)
        })
        .collect()
}

/// Nearest hit along the ray and the id of the object hit.
fn cast(shapes: &[(u32, Shape)], o: &Vector2<f64>, d: &Vector2<f64>) -> Option<(f64, u32)> {
    let mut best: Option<(f64, u32)> = None;
    for (id, shape) in shapes {
        let hit = match shape {
            Shape::Polygon(c) => (0..4)
                .filter_map(|k| ray_segment(o, d, &c[k], &c[(k + 1) % 4]))
                .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s)))),
            Shape::Circle(c, r) => ray_circle(o, d, c, *r),
        };
        if let Some(s) = hit {
            if best.is_none_or(|b| s < b.0) {
                best = Some((s, *id));
            }
        }
    }
    best
}

/// Ray-casts one frame from the ego pose at `t`.
pub fn render_scan<R: Rng + ?Sized>(config: &ScenarioConfig, truth: &[TruthState], t: f64, rng: &mut R) -> ScanFrame {
    let ego = ego_pose(config, t);
    let sensor = &config.sensor;
    let origin = Vector2::new(ego.x, ego.y);
    let shapes = shapes(config, truth);
    let n_rays = (sensor.fov / sensor.angular_resolution).round() as usize;
    let noise = Normal::new(0.0, sensor.range_sigma.max(0.0)).expect("valid sigma");
    let start = ego.theta - 0.5 * sensor.fov;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for k in 0..n_rays {
        let a = start + k as f64 * sensor.angular_resolution;
        let d = Vector2::new(a.cos(), a.sin());
        let Some((range, id)) = cast(&shapes, &origin, &d) else { continue };
        if range > sensor.max_range {
            continue;
        }
        // draw noise and dropout for every hit so the random stream does not depend on them
        let r = if sensor.range_sigma > 0.0 { range + noise.sample(rng) } else { range };
        let dropped = rng.random::<f64>() < sensor.dropout_prob;
        if dropped || r <= 0.0 || r > sensor.max_range {
            continue;
        }
        points.push(Point::from(origin + d * r));
        labels.push(id);
    }
    ScanFrame { timestamp: t, ego_pose: ego, points, labels: Some(labels), truth: truth.to_vec() }
}

fn apply_corruptions(config: &ScenarioConfig, frame_index: usize, frame: &mut ScanFrame) {
    let Some(labels) = &frame.labels else { return };
    for c in &config.corruptions {
        if (c.start_frame..c.start_frame + c.frames).contains(&frame_index) {
            for (p, &id) in frame.points.iter_mut().zip(labels) {
                if id as usize == c.vehicle {
                    p.x += c.dx;
                    p.y += c.dy;
                }
            }
        }
    }
}

/// Renders every frame of a scenario. Each frame draws from its own stream of
/// the scenario seed, so frames are independent of rendering order.
pub fn simulate(config: &ScenarioConfig) -> Result<Vec<ScanFrame>> {
    config.validate()?;
    (0..config.frame_count())
        .map(|k| {
            let t = config.frame_time(k);
            let truth = generate_truth(config, t)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let mut frame = render_scan(config, &truth, t, &mut rng);
            apply_corruptions(config, k, &mut frame);
            Ok(frame)
        })
        .collect()
}

/// Single-linkage clustering with link distance `gap`; clusters with fewer
/// than 3 points are dropped. Clusters are ordered by their first point.
pub fn cluster_points(frame: &ScanFrame, gap: f64) -> Vec<PointCluster> {
    assert!(gap > 0.0, "gap must be positive");
    let cell = |p: &Point| ((p.x / gap).floor() as i64, (p.y / gap).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in frame.points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let mut assigned = vec![false; frame.points.len()];
    let mut out = Vec::new();
    let origin = Point::new(frame.ego_pose.x, frame.ego_pose.y);
    for seed in 0..frame.points.len() {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut cursor = 0;
        while cursor < members.len() {
            let p = frame.points[members[cursor]];
            cursor += 1;
            let (cx, cy) = cell(&p);
            for gx in cx - 1..=cx + 1 {
                for gy in cy - 1..=cy + 1 {
                    let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                    for &j in bucket {
                        if !assigned[j] && (frame.points[j] - p).norm() <= gap {
                            assigned[j] = true;
                            members.push(j);
                        }
                    }
                }
            }
        }
        if members.len() >= 3 {
            members.sort_unstable();
            let pts = members.iter().map(|&i| frame.points[i]).collect();
            out.push(PointCluster { points: pts, sensor_origin: origin, timestamp: frame.timestamp });
        }
    }
    out
}
