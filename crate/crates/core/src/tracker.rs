//! Kalman filtering, association, and the multi-hypothesis track manager.
//!
//! Every object starts as a single ISM track. Objects found to be moving get
//! extra VASM hypotheses that differ in how strictly they accept fits and how
//! much process noise they assume. All hypotheses of an object share the
//! associated cluster and fit; each builds its own measurement from its own
//! predicted pose. The ISM acts as the unconstrained fallback: it takes every
//! associated measurement, while VASM hypotheses reject measurements outside
//! the innovation gate and are reinitialized from the best hypothesis after
//! repeated rejections.

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use crate::angle::{diff, wrap};
use crate::error::{Error, Result};
use crate::fitting::{fit_cluster, measurement_from_fit, observation_matrix, CornerFit, Measurement, PointCluster, Pose2, RansacConfig};
use crate::kinematics::{
    ism_process_noise, ism_transition_matrix, vasm_process_noise, vasm_propagate, vasm_transition_matrix, Covariance6, IsmState,
    NoiseParams, StateVector6, VasmState, DEFAULT_L_MAX,
};
use crate::shape::{HistogramConfig, ShapeEstimate, ShapeTracker};

type Observation = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Ism,
    Vasm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ism => "ISM",
            ModelKind::Vasm => "VASM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisParams {
    /// Fraction of cluster points that must lie inside the fitted box.
    pub inlier_fraction: f64,
    /// Multiplier on the process noise.
    pub noise_scale: f64,
}

impl HypothesisParams {
    pub const UNCONSTRAINED: Self = Self { inlier_fraction: 0.0, noise_scale: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Chi-square gate for association and VASM measurement acceptance.
    pub gate_threshold: f64,
    pub mover_speed_threshold: f64,
    pub mover_sigma_count: f64,
    pub max_missed: u32,
    pub noise: NoiseParams,
    /// Number of NIS values kept per hypothesis.
    pub score_window: usize,
    /// VASM hypotheses added to a mover.
    pub vasm_hypotheses: Vec<HypothesisParams>,
    /// Keep the ISM when a mover is promoted.
    pub retain_ism: bool,
    pub ransac: RansacConfig,
    pub histogram: HistogramConfig,
    /// Dimension standard deviation used before a histogram matures [m].
    pub immature_dim_sigma: f64,
    /// A single-edge fit whose extent is within this of the mature dimension
    /// along it is taken as the whole side, fixing the center along the edge [m].
    pub full_edge_tolerance: f64,
    /// Standard deviation floors added to every measurement `(position m, heading rad)`.
    pub measurement_floor: (f64, f64),
    pub initial_speed_sigma: f64,
    pub initial_yaw_rate_sigma: f64,
    pub l_max: f64,
    pub prediction_steps: usize,
    pub prediction_dt: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_threshold: 11.34,
            mover_speed_threshold: 0.5,
            mover_sigma_count: 3.0,
            max_missed: 3,
            noise: NoiseParams::default(),
            score_window: 10,
            vasm_hypotheses: vec![
                HypothesisParams { inlier_fraction: 0.6, noise_scale: 1.0 },
                HypothesisParams { inlier_fraction: 0.8, noise_scale: 1.0 },
                HypothesisParams { inlier_fraction: 0.6, noise_scale: 4.0 },
            ],
            retain_ism: true,
            ransac: RansacConfig::default(),
            histogram: HistogramConfig::default(),
            immature_dim_sigma: 1.0,
            full_edge_tolerance: 0.3,
            measurement_floor: (0.1, 1f64.to_radians()),
            initial_speed_sigma: 5.0,
            initial_yaw_rate_sigma: 0.5,
            l_max: DEFAULT_L_MAX,
            prediction_steps: 10,
            prediction_dt: 0.1,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gate_threshold", self.gate_threshold),
            ("mover_speed_threshold", self.mover_speed_threshold),
            ("mover_sigma_count", self.mover_sigma_count),
            ("immature_dim_sigma", self.immature_dim_sigma),
            ("full_edge_tolerance", self.full_edge_tolerance),
            ("initial_speed_sigma", self.initial_speed_sigma),
            ("initial_yaw_rate_sigma", self.initial_yaw_rate_sigma),
            ("l_max", self.l_max),
            ("prediction_dt", self.prediction_dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        if self.max_missed == 0 || self.score_window == 0 {
            return Err(Error::invalid("max_missed and score_window must be >= 1"));
        }
        if !(self.measurement_floor.0 >= 0.0 && self.measurement_floor.1 >= 0.0) {
            return Err(Error::invalid("measurement_floor must be >= 0"));
        }
        if !self.retain_ism && self.vasm_hypotheses.is_empty() {
            return Err(Error::invalid("a mover needs at least one hypothesis"));
        }
        for p in &self.vasm_hypotheses {
            if !((0.0..=1.0).contains(&p.inlier_fraction) && p.noise_scale > 0.0) {
                return Err(Error::invalid("hypothesis inlier_fraction must be in [0, 1] and noise_scale > 0"));
            }
        }
        self.noise.validate()?;
        self.ransac.validate()
    }
}

/// One filtered model instance for an object.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub model: ModelKind,
    pub state: StateVector6,
    pub cov: Covariance6,
    pub shape: ShapeTracker,
    pub params: HypothesisParams,
    pub score_window: VecDeque<f64>,
    pub missed_frames: u32,
    pub updates: u32,
}

impl Track {
    pub fn new(model: ModelKind, state: StateVector6, cov: Covariance6, shape: ShapeTracker, params: HypothesisParams) -> Self {
        Self { model, state, cov, shape, params, score_window: VecDeque::new(), missed_frames: 0, updates: 0 }
    }

    fn idx(&self) -> (usize, usize, usize) {
        match self.model {
            ModelKind::Ism => (IsmState::X, IsmState::Y, IsmState::THETA),
            ModelKind::Vasm => (VasmState::X, VasmState::Y, VasmState::THETA),
        }
    }

    /// Vehicle center pose.
    pub fn pose(&self) -> Pose2 {
        let (x, y, t) = self.idx();
        Pose2 { x: self.state[x], y: self.state[y], theta: self.state[t] }
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        let (x, y, _) = self.idx();
        Matrix2::new(self.cov[(x, x)], self.cov[(x, y)], self.cov[(y, x)], self.cov[(y, y)])
    }

    /// World-frame velocity of the vehicle center.
    pub fn velocity(&self) -> Vector2<f64> {
        match self.model {
            ModelKind::Ism => Vector2::new(self.state[IsmState::XDOT], self.state[IsmState::YDOT]),
            ModelKind::Vasm => {
                let s = VasmState::from_vector(&self.state);
                let (sn, c) = s.theta.sin_cos();
                let lateral = -s.l * s.thetadot;
                Vector2::new(s.v * c - lateral * sn, s.v * sn + lateral * c)
            }
        }
    }

    pub fn observation(&self) -> Observation {
        match self.model {
            ModelKind::Ism => {
                let mut h = Observation::zeros();
                h[(0, IsmState::X)] = 1.0;
                h[(1, IsmState::Y)] = 1.0;
                h[(2, IsmState::THETA)] = 1.0;
                h
            }
            ModelKind::Vasm => observation_matrix(),
        }
    }

    pub fn mean_score(&self) -> Option<f64> {
        (!self.score_window.is_empty()).then(|| self.score_window.iter().sum::<f64>() / self.score_window.len() as f64)
    }

    fn push_score(&mut self, nis: f64, window: usize) {
        self.score_window.push_back(nis);
        while self.score_window.len() > window {
            self.score_window.pop_front();
        }
    }

    /// Mean-only prediction of the center pose at `dt, 2 dt, ..., steps dt`.
    pub fn predicted_trajectory(&self, steps: usize, dt: f64) -> Vec<Pose2> {
        let mut out = Vec::with_capacity(steps);
        match self.model {
            ModelKind::Ism => {
                let s = IsmState::from_vector(&self.state);
                for k in 1..=steps {
                    let t = k as f64 * dt;
                    out.push(Pose2 { x: s.x + s.xdot * t, y: s.y + s.ydot * t, theta: wrap(s.theta + s.thetadot * t) });
                }
            }
            ModelKind::Vasm => {
                let mut s = VasmState::from_vector(&self.state);
                for _ in 0..steps {
                    s = vasm_propagate(&s, dt);
                    out.push(Pose2 { x: s.x, y: s.y, theta: s.theta });
                }
            }
        }
        out
    }
}

fn symmetrize(p: &Covariance6) -> Covariance6 {
    0.5 * (p + p.transpose())
}

fn clamp_l(track: &mut Track, l_max: f64) {
    if track.model == ModelKind::Vasm {
        track.state[VasmState::L] = track.state[VasmState::L].clamp(-l_max, l_max);
    }
}

/// Time update. `noise` is scaled by the track's `noise_scale`.
pub fn kf_predict(track: &mut Track, dt: f64, noise: &NoiseParams) -> Result<()> {
    let (phi, q) = match track.model {
        ModelKind::Ism => {
            let phi = ism_transition_matrix(dt)?;
            let q = ism_process_noise(dt, noise)?;
            track.state = phi * track.state;
            track.state[IsmState::THETA] = wrap(track.state[IsmState::THETA]);
            (phi, q)
        }
        ModelKind::Vasm => {
            if !(dt.is_finite() && dt >= 0.0) {
                return Err(Error::invalid(format!("dt must be finite and >= 0, got {dt}")));
            }
            let s = VasmState::from_vector(&track.state);
            let phi = vasm_transition_matrix(&s, dt);
            let q = vasm_process_noise(&s, dt, noise);
            track.state = vasm_propagate(&s, dt).to_vector();
            (phi, q)
        }
    };
    track.cov = symmetrize(&(phi * track.cov * phi.transpose() + q * track.params.noise_scale));
    Ok(())
}

/// Innovation (heading wrapped) and its covariance.
pub fn innovation(track: &Track, meas: &Measurement) -> (Vector3<f64>, Matrix3<f64>) {
    let h = track.observation();
    let mut nu = meas.z - h * track.state;
    nu.z = wrap(nu.z);
    let s = h * track.cov * h.transpose() + meas.r;
    (nu, 0.5 * (s + s.transpose()))
}

/// Normalized innovation squared, or `None` when `S` is not positive definite.
pub fn nis(track: &Track, meas: &Measurement) -> Option<f64> {
    let (nu, s) = innovation(track, meas);
    let chol = s.cholesky()?;
    Some(nu.dot(&chol.solve(&nu)))
}

/// Measurement update in Joseph form. Returns the NIS of the innovation.
/// A singular innovation covariance rejects the update and counts a missed frame.
pub fn kf_update(track: &mut Track, meas: &Measurement) -> Result<f64> {
    let h = track.observation();
    let (nu, s) = innovation(track, meas);
    let Some(chol) = s.cholesky() else {
        track.missed_frames += 1;
        return Err(Error::Singular("innovation covariance"));
    };
    let nis = nu.dot(&chol.solve(&nu));
    // K = P H^T S^-1
    let k = chol.solve(&(h * track.cov)).transpose();
    track.state += k * nu;
    let (_, _, ti) = track.idx();
    track.state[ti] = wrap(track.state[ti]);
    let ikh = Covariance6::identity() - k * h;
    track.cov = symmetrize(&(ikh * track.cov * ikh.transpose() + k * meas.r * k.transpose()));
    Ok(nis)
}

/// True when speed exceeds the threshold by `mover_sigma_count` standard deviations.
pub fn detect_mover(track: &Track, config: &TrackerConfig) -> bool {
    if track.updates < 3 || track.model != ModelKind::Ism {
        return false;
    }
    let vel = Vector2::new(track.state[IsmState::XDOT], track.state[IsmState::YDOT]);
    let speed = vel.norm();
    if speed == 0.0 {
        return false;
    }
    let u = vel / speed;
    let (a, b) = (IsmState::XDOT, IsmState::YDOT);
    let pv = Matrix2::new(track.cov[(a, a)], track.cov[(a, b)], track.cov[(b, a)], track.cov[(b, b)]);
    let sigma = u.dot(&(pv * u)).max(0.0).sqrt();
    speed - config.mover_sigma_count * sigma > config.mover_speed_threshold
}

/// Heading among `theta`, `theta + 90deg` whose axis is closest to `target`.
fn snap_axis(theta: f64, target: f64) -> (f64, bool) {
    let d0 = diff(theta, target).abs();
    let d0 = d0.min(std::f64::consts::PI - d0);
    if d0 <= FRAC_PI_4 {
        (theta, false)
    } else {
        (wrap(theta + FRAC_PI_2), true)
    }
}

/// `theta` plus the multiple of a quarter turn that lands closest to `target`.
fn quarter_toward(theta: f64, target: f64) -> f64 {
    (0..4)
        .map(|k| wrap(theta + k as f64 * FRAC_PI_2))
        .min_by(|a, b| diff(*a, target).abs().total_cmp(&diff(*b, target).abs()))
        .unwrap_or(theta)
}

/// Shape tracker seen from a heading rotated by a quarter turn.
fn rotated_shape(shape: &ShapeTracker, quarter: bool) -> ShapeTracker {
    if quarter {
        ShapeTracker { length: shape.width.clone(), width: shape.length.clone() }
    } else {
        shape.clone()
    }
}

/// Maps an ISM state to VASM with heading `theta` and axis offset `l`.
fn ism_to_vasm(x: &StateVector6, p: &Covariance6, theta: f64, l: f64, l_var: f64) -> (StateVector6, Covariance6) {
    let s = IsmState::from_vector(x);
    let (sn, c) = theta.sin_cos();
    let v = s.xdot * c + s.ydot * sn;
    let out = VasmState { x: s.x, y: s.y, l, v, theta, thetadot: s.thetadot }.to_vector();
    let mut j = Covariance6::zeros();
    j[(VasmState::X, IsmState::X)] = 1.0;
    j[(VasmState::Y, IsmState::Y)] = 1.0;
    j[(VasmState::V, IsmState::XDOT)] = c;
    j[(VasmState::V, IsmState::YDOT)] = sn;
    j[(VasmState::V, IsmState::THETA)] = -s.xdot * sn + s.ydot * c;
    j[(VasmState::THETA, IsmState::THETA)] = 1.0;
    j[(VasmState::THETADOT, IsmState::THETADOT)] = 1.0;
    let mut cov = j * p * j.transpose();
    cov[(VasmState::L, VasmState::L)] = l_var;
    (out, symmetrize(&cov))
}

/// Maps a VASM state to ISM using the center velocity, then sets heading `theta`.
fn vasm_to_ism(x: &StateVector6, p: &Covariance6, theta: f64) -> (StateVector6, Covariance6) {
    let s = VasmState::from_vector(x);
    let (sn, c) = s.theta.sin_cos();
    let (v, l, w) = (s.v, s.l, s.thetadot);
    let xdot = v * c + l * w * sn;
    let ydot = v * sn - l * w * c;
    let out = IsmState { x: s.x, xdot, y: s.y, ydot, theta, thetadot: w }.to_vector();
    let mut j = Covariance6::zeros();
    j[(IsmState::X, VasmState::X)] = 1.0;
    j[(IsmState::Y, VasmState::Y)] = 1.0;
    j[(IsmState::XDOT, VasmState::V)] = c;
    j[(IsmState::XDOT, VasmState::L)] = w * sn;
    j[(IsmState::XDOT, VasmState::THETADOT)] = l * sn;
    j[(IsmState::XDOT, VasmState::THETA)] = -v * sn + l * w * c;
    j[(IsmState::YDOT, VasmState::V)] = sn;
    j[(IsmState::YDOT, VasmState::L)] = -w * c;
    j[(IsmState::YDOT, VasmState::THETADOT)] = -l * c;
    j[(IsmState::YDOT, VasmState::THETA)] = v * c + l * w * sn;
    j[(IsmState::THETA, VasmState::THETA)] = 1.0;
    j[(IsmState::THETADOT, VasmState::THETADOT)] = 1.0;
    (out, symmetrize(&(j * p * j.transpose())))
}

/// Keeps the observed corner fixed when the size estimate changes: the
/// center moves by half the change along the corner-to-center offset.
fn shift_for_shape_change(track: &mut Track, before: &ShapeEstimate, meas: &Measurement) {
    let after = track.shape.estimate();
    let (dl, dw) = (after.length - before.length, after.width - before.width);
    if dl == 0.0 && dw == 0.0 {
        return;
    }
    let (s, c) = track.pose().theta.sin_cos();
    let (a, b) = meas.offset_signs;
    let (ol, ow) = (0.5 * a * dl, 0.5 * b * dw);
    let (x, y, _) = track.idx();
    track.state[x] += c * ol - s * ow;
    track.state[y] += s * ol + c * ow;
}

/// Splits a mover's ISM into the configured hypothesis set. Each VASM takes
/// the ISM position and turn rate, a heading snapped by a quarter turn to the
/// axis nearest the velocity, the signed speed along that heading, and `L = 0`.
pub fn spawn_hypotheses(track: &Track, config: &TrackerConfig) -> Vec<Track> {
    let mut out = Vec::with_capacity(config.vasm_hypotheses.len() + 1);
    if config.retain_ism {
        out.push(track.clone());
    }
    let vel = track.velocity();
    let ism_theta = track.state[IsmState::THETA];
    let (theta, quarter) = if vel.norm() > 0.0 { snap_axis(ism_theta, vel.y.atan2(vel.x)) } else { (ism_theta, false) };
    let (state, cov) = ism_to_vasm(&track.state, &track.cov, theta, 0.0, 1.0);
    for params in &config.vasm_hypotheses {
        let mut t = Track::new(ModelKind::Vasm, state, cov, rotated_shape(&track.shape, quarter), *params);
        t.updates = track.updates;
        t.score_window = track.score_window.clone();
        out.push(t);
    }
    out
}

/// Index of the hypothesis with the lowest windowed mean NIS, penalized by
/// `gate_threshold` per missed frame. Ties go to a VASM, then the lowest index.
pub fn select_best(hypotheses: &[Track], gate_threshold: f64) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in hypotheses.iter().enumerate() {
        let Some(mean) = h.mean_score() else { continue };
        let score = mean + gate_threshold * h.missed_frames as f64;
        let better = match best {
            None => true,
            Some((j, s)) => score < s || (score == s && h.model == ModelKind::Vasm && hypotheses[j].model == ModelKind::Ism),
        };
        if better {
            best = Some((i, score));
        }
    }
    best.map_or(0, |b| b.0)
}

/// Copies the best hypothesis into every hypothesis that has missed
/// `max_missed` frames, converting between models and keeping each
/// hypothesis's own parameters, shape and (for VASM) axis offset.
pub fn reinitialize_failed(hypotheses: &mut [Track], config: &TrackerConfig) {
    if hypotheses.len() < 2 {
        return;
    }
    // only a hypothesis updated this frame can donate
    let fresh: Vec<Track> = hypotheses.iter().filter(|h| h.missed_frames == 0).cloned().collect();
    if fresh.is_empty() {
        return;
    }
    let donor = fresh[select_best(&fresh, config.gate_threshold)].clone();
    let best = hypotheses.iter().position(|h| *h == donor).expect("donor is one of the hypotheses");
    for (i, h) in hypotheses.iter_mut().enumerate() {
        if i == best || h.missed_frames < config.max_missed {
            continue;
        }
        let own_theta = h.state[h.idx().2];
        let theta = quarter_toward(donor.state[donor.idx().2], own_theta);
        let (state, cov) = match (donor.model, h.model) {
            (ModelKind::Ism, ModelKind::Ism) => {
                let mut s = donor.state;
                s[IsmState::THETA] = theta;
                (s, donor.cov)
            }
            (ModelKind::Vasm, ModelKind::Vasm) => (donor.state, donor.cov),
            (ModelKind::Ism, ModelKind::Vasm) => ism_to_vasm(&donor.state, &donor.cov, theta, h.state[VasmState::L], 1.0),
            (ModelKind::Vasm, ModelKind::Ism) => vasm_to_ism(&donor.state, &donor.cov, theta),
        };
        log::debug!("hypothesis {i} reinitialized from {best}");
        h.state = state;
        h.cov = cov;
        h.missed_frames = 0;
        h.score_window = donor.score_window.clone();
    }
}

/// Greedy nearest-neighbor assignment on a cost matrix `cost[track][cluster]`;
/// pairs with cost above `gate` are never assigned.
pub fn greedy_assign(cost: &[Vec<f64>], gate: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = cost
        .iter()
        .enumerate()
        .flat_map(|(t, row)| row.iter().enumerate().filter(|(_, c)| **c <= gate).map(move |(k, c)| (*c, t, k)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; cost.len()];
    let mut used_c = vec![false; cost.first().map_or(0, |r| r.len())];
    let mut out = Vec::new();
    for (c, t, k) in pairs {
        if !used_t[t] && !used_c[k] {
            used_t[t] = true;
            used_c[k] = true;
            out.push((t, k, c));
        }
    }
    out
}

/// All hypotheses for one physical object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: u64,
    pub hypotheses: Vec<Track>,
    pub best: usize,
    pub age: u32,
}

impl ObjectTrack {
    pub fn best_track(&self) -> &Track {
        &self.hypotheses[self.best]
    }

    pub fn is_mover(&self) -> bool {
        self.hypotheses.iter().any(|h| h.model == ModelKind::Vasm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// `(object id, cluster index, squared Mahalanobis distance)`.
    pub matches: Vec<(u64, usize, f64)>,
    /// Unmatched clusters inside the gate of a matched object, treated as
    /// fragments of that object's cluster: `(object id, cluster index)`.
    pub fragments: Vec<(u64, usize)>,
    /// Clusters outside every gate; each starts a new track.
    pub unassigned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub model: ModelKind,
    pub params: HypothesisParams,
    pub state: [f64; 6],
    pub cov_diag: [f64; 6],
    pub pose: Pose2,
    pub velocity: [f64; 2],
    pub score: Option<f64>,
    pub missed_frames: u32,
    /// Center poses over the prediction horizon.
    pub predicted: Vec<Pose2>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackReport {
    pub id: u64,
    pub best: usize,
    pub shape: ShapeEstimate,
    pub hypotheses: Vec<HypothesisReport>,
}

impl TrackReport {
    pub fn best(&self) -> &HypothesisReport {
        &self.hypotheses[self.best]
    }
}

#[derive(Debug, Clone)]
pub struct TrackManager {
    pub config: TrackerConfig,
    pub tracks: BTreeMap<u64, ObjectTrack>,
    next_id: u64,
    frame: u64,
}

impl TrackManager {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, tracks: BTreeMap::new(), next_id: 0, frame: 0 })
    }

    pub fn frame_count(&self) -> u64 {
        self.frame
    }

    fn shape_sigma(&self, mature: bool) -> f64 {
        if mature {
            self.config.histogram.bin_width
        } else {
            self.config.immature_dim_sigma
        }
    }

    /// Squared Mahalanobis distance of a cluster centroid to an object, taken
    /// as the minimum over its hypotheses. The centroid of a partial view can
    /// sit anywhere inside the box, so a spread of a quarter diagonal is added.
    pub fn centroid_distance(&self, object: &ObjectTrack, cluster: &PointCluster) -> f64 {
        let c = cluster.centroid().coords;
        object
            .hypotheses
            .iter()
            .map(|h| {
                let shape = h.shape.estimate();
                let spread = 0.25 * shape.length.hypot(shape.width);
                let p = h.pose();
                let d = c - Vector2::new(p.x, p.y);
                let s = h.position_cov() + Matrix2::identity() * (spread * spread);
                s.cholesky().map_or(f64::INFINITY, |ch| d.dot(&ch.solve(&d)))
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn associate(&self, clusters: &[PointCluster]) -> Association {
        let ids: Vec<u64> = self.tracks.keys().copied().collect();
        let cost: Vec<Vec<f64>> =
            ids.iter().map(|id| clusters.iter().map(|c| self.centroid_distance(&self.tracks[id], c)).collect()).collect();
        let gate = self.config.gate_threshold;
        let pairs = greedy_assign(&cost, gate);
        let mut assigned = vec![false; clusters.len()];
        let mut has_cluster = vec![false; ids.len()];
        let matches = pairs
            .into_iter()
            .map(|(t, k, d)| {
                assigned[k] = true;
                has_cluster[t] = true;
                (ids[t], k, d)
            })
            .collect();
        let mut fragments = Vec::new();
        let mut unassigned = Vec::new();
        for k in (0..clusters.len()).filter(|&k| !assigned[k]) {
            let nearest =
                (0..ids.len()).filter(|&t| has_cluster[t] && cost[t][k] <= gate).min_by(|&a, &b| cost[a][k].total_cmp(&cost[b][k]));
            match nearest {
                Some(t) => fragments.push((ids[t], k)),
                None => unassigned.push(k),
            }
        }
        Association { matches, fragments, unassigned }
    }

    /// Adds shape uncertainty and floors to a fit-derived measurement covariance.
    fn inflate(&self, meas: &mut Measurement, shape: &ShapeEstimate) {
        let th = meas.z.z;
        let hd = Vector2::new(th.cos(), th.sin());
        let hn = Vector2::new(-th.sin(), th.cos());
        let (a, b) = meas.offset_signs;
        let dl = hd * (0.5 * a);
        let dw = hn * (0.5 * b);
        let mut sl = self.shape_sigma(shape.length_mature);
        let mut sw = self.shape_sigma(shape.width_mature);

        // A lone edge spanning the full known side pins the center along it.
        let full_side = match (meas.observed_length, meas.observed_width) {
            (Some(ext), None) if shape.length_mature => Some((ext, meas.dims.0, hd * a)),
            (None, Some(ext)) if shape.width_mature => Some((ext, meas.dims.1, hn * b)),
            _ => None,
        };
        if let Some((ext, dim, e)) = full_side.filter(|f| (f.0 - f.1).abs() <= self.config.full_edge_tolerance) {
            let shift = e * (0.5 * (ext - dim));
            meas.z.x += shift.x;
            meas.z.y += shift.y;
            let u = Vector3::new(e.x, e.y, 0.0);
            let t = Matrix3::identity() - u * u.transpose();
            let s = 0.5 * ((ext - dim).abs() + self.config.histogram.bin_width);
            meas.r = t * meas.r * t + u * u.transpose() * (s * s);
            if meas.observed_length.is_some() {
                sl = 0.0;
            } else {
                sw = 0.0;
            }
        }

        let pos = dl * dl.transpose() * (sl * sl) + dw * dw.transpose() * (sw * sw);
        let (fp, fh) = self.config.measurement_floor;
        for i in 0..2 {
            for j in 0..2 {
                meas.r[(i, j)] += pos[(i, j)];
            }
            meas.r[(i, i)] += fp * fp;
        }
        meas.r[(2, 2)] += fh * fh;
    }

    fn rng_for(&self, cluster: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.frame.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(cluster as u64);
        rng
    }

    fn spawn(&mut self, cluster: &PointCluster, rng: &mut ChaCha8Rng) {
        let Ok(fit) = fit_cluster(cluster, &self.config.ransac, rng) else { return };
        let mut shape = ShapeTracker::new(self.config.histogram);
        let est = shape.estimate();
        let Ok(mut meas) = measurement_from_fit(cluster, &fit, &est, None, self.config.ransac.sigma) else { return };
        self.inflate(&mut meas, &est);
        shape.observe(meas.observed_length, meas.observed_width);
        let z = meas.z;
        let state = IsmState { x: z.x, xdot: 0.0, y: z.y, ydot: 0.0, theta: z.z, thetadot: 0.0 }.to_vector();
        let mut cov = Covariance6::zeros();
        let sel = [IsmState::X, IsmState::Y, IsmState::THETA];
        for (i, &a) in sel.iter().enumerate() {
            for (j, &b) in sel.iter().enumerate() {
                cov[(a, b)] = meas.r[(i, j)];
            }
        }
        let sv = self.config.initial_speed_sigma;
        let sw = self.config.initial_yaw_rate_sigma;
        cov[(IsmState::XDOT, IsmState::XDOT)] = sv * sv;
        cov[(IsmState::YDOT, IsmState::YDOT)] = sv * sv;
        cov[(IsmState::THETADOT, IsmState::THETADOT)] = sw * sw;
        let mut track = Track::new(ModelKind::Ism, state, cov, shape, HypothesisParams::UNCONSTRAINED);
        track.updates = 1;
        let id = self.next_id;
        self.next_id += 1;
        log::debug!("frame {} new track {id} at ({:.2}, {:.2})", self.frame, z.x, z.y);
        self.tracks.insert(id, ObjectTrack { id, hypotheses: vec![track], best: 0, age: 0 });
    }

    /// Updates one hypothesis from the shared fit, or says why the fit was rejected.
    fn update_hypothesis(&self, h: &mut Track, cluster: &PointCluster, fit: &CornerFit) -> std::result::Result<(), String> {
        let est = h.shape.estimate();
        let pred = h.pose();
        let mut meas = measurement_from_fit(cluster, fit, &est, Some(&pred), self.config.ransac.sigma).map_err(|e| e.to_string())?;
        if h.params.inlier_fraction > 0.0 {
            let inside = meas.fraction_inside(cluster, 3.0 * self.config.ransac.sigma);
            if inside < h.params.inlier_fraction {
                return Err(format!("only {:.0}% of points inside the box", 100.0 * inside));
            }
        }
        self.inflate(&mut meas, &est);
        if h.model == ModelKind::Vasm {
            match nis(h, &meas) {
                Some(v) if v <= self.config.gate_threshold => {}
                Some(v) => return Err(format!("innovation {v:.1} outside gate")),
                None => return Err("singular innovation covariance".into()),
            }
        }
        let score = kf_update(h, &meas).map_err(|e| e.to_string())?;
        clamp_l(h, self.config.l_max);
        h.push_score(score, self.config.score_window);
        h.shape.observe(meas.observed_length, meas.observed_width);
        shift_for_shape_change(h, &est, &meas);
        h.updates += 1;
        h.missed_frames = 0;
        Ok(())
    }

    /// Processes one frame of clusters taken `dt` after the previous frame.
    pub fn step(&mut self, clusters: &[PointCluster], dt: f64) -> Result<Vec<TrackReport>> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
        }
        let noise = self.config.noise;
        for obj in self.tracks.values_mut() {
            obj.age += 1;
            for h in &mut obj.hypotheses {
                kf_predict(h, dt, &noise)?;
                clamp_l(h, self.config.l_max);
            }
        }

        let assoc = self.associate(clusters);
        let mut matched: BTreeMap<u64, usize> = BTreeMap::new();
        for &(id, k, _) in &assoc.matches {
            matched.insert(id, k);
        }
        let mut merged: BTreeMap<u64, PointCluster> = BTreeMap::new();
        for (&id, &k) in &matched {
            let mut c = clusters[k].clone();
            for &(_, f) in assoc.fragments.iter().filter(|f| f.0 == id) {
                c.points.extend_from_slice(&clusters[f].points);
            }
            merged.insert(id, c);
        }
        let ids: Vec<u64> = self.tracks.keys().copied().collect();
        for id in &ids {
            let mut obj = self.tracks.remove(id).expect("id from key set");
            let fit = merged.get(id).and_then(|c| {
                let mut rng = self.rng_for(matched[id]);
                fit_cluster(c, &self.config.ransac, &mut rng).ok().map(|f| (c, f))
            });
            for (i, h) in obj.hypotheses.iter_mut().enumerate() {
                let res = match &fit {
                    Some((c, f)) => self.update_hypothesis(h, c, f),
                    None if matched.contains_key(id) => Err("fit failed".into()),
                    None => Err("no cluster".into()),
                };
                if let Err(why) = res {
                    log::debug!("frame {} track {id}/{i} {} missed: {why}", self.frame, h.model);
                    h.missed_frames += 1;
                }
            }
            if obj.hypotheses.len() == 1 && detect_mover(&obj.hypotheses[0], &self.config) {
                log::debug!("frame {} track {id} promoted to mover", self.frame);
                obj.hypotheses = spawn_hypotheses(&obj.hypotheses[0], &self.config);
            }
            reinitialize_failed(&mut obj.hypotheses, &self.config);
            if obj.hypotheses.iter().all(|h| h.missed_frames > self.config.max_missed) {
                log::debug!("frame {} track {id} dropped", self.frame);
                continue;
            }
            obj.best = select_best(&obj.hypotheses, self.config.gate_threshold);
            self.tracks.insert(*id, obj);
        }

        for &k in &assoc.unassigned {
            let mut rng = self.rng_for(k);
            self.spawn(&clusters[k], &mut rng);
        }
        self.frame += 1;
        Ok(self.reports())
    }

    pub fn reports(&self) -> Vec<TrackReport> {
        let steps = self.config.prediction_steps;
        let pdt = self.config.prediction_dt;
        self.tracks
            .values()
            .map(|obj| TrackReport {
                id: obj.id,
                best: obj.best,
                shape: obj.best_track().shape.estimate(),
                hypotheses: obj
                    .hypotheses
                    .iter()
                    .map(|h| {
                        let v = h.velocity();
                        HypothesisReport {
                            model: h.model,
                            params: h.params,
                            state: h.state.into(),
                            cov_diag: h.cov.diagonal().into(),
                            pose: h.pose(),
                            velocity: [v.x, v.y],
                            score: h.mean_score(),
                            missed_frames: h.missed_frames,
                            predicted: h.predicted_trajectory(steps, pdt),
                        }
                    })
                    .collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::Point;

    fn ism(x: f64, vx: f64) -> Track {
        let state = IsmState { x, xdot: vx, y: 0.0, ydot: 0.0, theta: 0.0, thetadot: 0.0 }.to_vector();
        Track::new(ModelKind::Ism, state, Covariance6::identity(), ShapeTracker::default(), HypothesisParams::UNCONSTRAINED)
    }

    fn meas(z: Vector3<f64>, r: f64) -> Measurement {
        Measurement {
            z,
            r: Matrix3::identity() * r,
            h: observation_matrix(),
            dims: (4.5, 2.0),
            offset_signs: (1.0, 1.0),
            observed_length: None,
            observed_width: None,
        }
    }

    #[test]
    fn predict_zero_dt_is_identity() {
        let mut t = ism(1.0, 2.0);
        let before = t.clone();
        kf_predict(&mut t, 0.0, &NoiseParams::default()).unwrap();
        assert_eq!(t.state, before.state);
        assert_eq!(t.cov, before.cov);
        assert!(kf_predict(&mut t, -1.0, &NoiseParams::default()).is_err());
    }

    #[test]
    fn update_with_tiny_r_snaps_to_measurement() {
        let mut t = ism(0.0, 0.0);
        let z = Vector3::new(1.0, -2.0, 0.3);
        kf_update(&mut t, &meas(z, 1e-12)).unwrap();
        assert_close!(t.state[0], 1.0, 1e-6);
        assert_close!(t.state[2], -2.0, 1e-6);
        assert_close!(t.state[4], 0.3, 1e-6);
    }

    #[test]
    fn half_gain_for_equal_variances() {
        let mut t = ism(0.0, 0.0);
        kf_update(&mut t, &meas(Vector3::new(2.0, 0.0, 0.0), 1.0)).unwrap();
        assert_close!(t.state[0], 1.0, 1e-12);
        assert_close!(t.cov[(0, 0)], 0.5, 1e-12);
    }

    #[test]
    fn angle_innovation_is_wrapped() {
        let mut a = ism(0.0, 0.0);
        a.state[4] = 3.0;
        let mut b = a.clone();
        let za = Vector3::new(0.0, 0.0, -3.0);
        let zb = Vector3::new(0.0, 0.0, -3.0 + std::f64::consts::TAU);
        kf_update(&mut a, &meas(za, 0.1)).unwrap();
        kf_update(&mut b, &meas(zb, 0.1)).unwrap();
        assert!((a.state - b.state).norm() < 1e-12);
    }

    #[test]
    fn singular_innovation_counts_miss() {
        let mut t = ism(0.0, 0.0);
        t.cov = Covariance6::zeros();
        assert!(kf_update(&mut t, &meas(Vector3::zeros(), 0.0)).is_err());
        assert_eq!(t.missed_frames, 1);
    }

    #[test]
    fn mover_rule() {
        let cfg = TrackerConfig::default();
        let mut t = ism(0.0, 5.0);
        t.updates = 3;
        t.cov[(1, 1)] = 0.04;
        assert!(detect_mover(&t, &cfg));
        t.cov[(1, 1)] = 4.0;
        assert!(!detect_mover(&t, &cfg));
        t.updates = 2;
        t.cov[(1, 1)] = 0.04;
        assert!(!detect_mover(&t, &cfg));
    }

    #[test]
    fn spawn_forward_and_reverse() {
        let cfg = TrackerConfig::default();
        let hyps = spawn_hypotheses(&ism(0.0, 5.0), &cfg);
        assert_eq!(hyps.len(), 4);
        assert_eq!(hyps[0].model, ModelKind::Ism);
        let v = VasmState::from_vector(&hyps[1].state);
        assert_close!(v.v, 5.0, 1e-12);
        assert_eq!(v.l, 0.0);
        assert_eq!(v.theta, 0.0);
        assert_eq!(hyps[3].params, HypothesisParams { inlier_fraction: 0.6, noise_scale: 4.0 });
        assert_eq!(hyps[1].cov[(2, 2)], 1.0);
        let rev = spawn_hypotheses(&ism(0.0, -3.0), &cfg);
        assert_close!(VasmState::from_vector(&rev[2].state).v, -3.0, 1e-12);
    }

    #[test]
    fn conversion_round_trip() {
        let s = VasmState { x: 1.0, y: 2.0, l: -1.3, v: 4.0, theta: 0.4, thetadot: 0.3 };
        let (ism_x, ism_p) = vasm_to_ism(&s.to_vector(), &Covariance6::identity(), s.theta);
        let (back, _) = ism_to_vasm(&ism_x, &ism_p, s.theta, s.l, 1.0);
        assert!((back - s.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn select_best_rules() {
        let mut a = ism(0.0, 0.0);
        let mut b = a.clone();
        assert_eq!(select_best(&[a.clone(), b.clone()], 11.34), 0);
        a.score_window = [2.0, 2.0].into();
        b.score_window = [9.0, 9.0].into();
        assert_eq!(select_best(&[a.clone(), b.clone()], 11.34), 0);
        b.score_window = [2.0, 2.0].into();
        b.model = ModelKind::Vasm;
        assert_eq!(select_best(&[a.clone(), b.clone()], 11.34), 1);
        b.missed_frames = 1;
        assert_eq!(select_best(&[a, b], 11.34), 0);
    }

    #[test]
    fn association_spawns_far_cluster() {
        let mut m = TrackManager::new(TrackerConfig::default()).unwrap();
        let pts = |x0: f64| (0..20).map(|i| Point::new(x0 + 0.2 * i as f64, 5.0)).collect::<Vec<_>>();
        let c0 = PointCluster::new(pts(0.0), Point::origin(), 0.0).unwrap();
        m.step(std::slice::from_ref(&c0), 0.1).unwrap();
        assert_eq!(m.tracks.len(), 1);
        let a = m.associate(&[c0.clone(), PointCluster::new(pts(60.0), Point::origin(), 0.1).unwrap()]);
        assert_eq!(a.matches.len(), 1);
        assert_eq!(a.unassigned, vec![1]);
    }

    #[test]
    fn empty_frame_increments_missed() {
        let mut m = TrackManager::new(TrackerConfig::default()).unwrap();
        let pts = (0..20).map(|i| Point::new(0.2 * i as f64, 5.0)).collect();
        m.step(&[PointCluster::new(pts, Point::origin(), 0.0).unwrap()], 0.1).unwrap();
        m.step(&[], 0.1).unwrap();
        assert_eq!(m.tracks.values().next().unwrap().hypotheses[0].missed_frames, 1);
    }
}
