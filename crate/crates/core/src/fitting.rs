//! Robust edge and corner ("L-shape") fitting of vehicle point clusters.
//!
//! A fit is parameterized by a corner `(xc, yc)` and an angle `phi`. Points on
//! edge 1 have residual `cos(phi)(x - xc) + sin(phi)(y - yc)`, so edge 1 runs
//! along `(-sin phi, cos phi)`; points on edge 2 have residual
//! `cos(phi)(y - yc) - sin(phi)(x - xc)`, so edge 2 runs along
//! `(cos phi, sin phi)`. The cost is half the sum of squared residuals.

use nalgebra::{Matrix3, Point2, SMatrix, SymmetricEigen, Vector2, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::angle::{diff, wrap};
use crate::error::{Error, Result};
use crate::shape::ShapeEstimate;

pub type Point = Point2<f64>;

/// Variance assigned to directions the fit does not observe [m^2].
pub const V_MAX: f64 = 100.0;

/// Observation matrix selecting `(x, y, theta)` from the arc-model state.
pub fn observation_matrix() -> SMatrix<f64, 3, 6> {
    let mut h = SMatrix::<f64, 3, 6>::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 4)] = 1.0;
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCluster {
    pub points: Vec<Point>,
    pub sensor_origin: Point,
    pub timestamp: f64,
}

impl PointCluster {
    pub fn new(points: Vec<Point>, sensor_origin: Point, timestamp: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a cluster needs at least 2 points"));
        }
        if !points.iter().chain(std::iter::once(&sensor_origin)).all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::invalid("cluster contains non-finite coordinates"));
        }
        Ok(Self { points, sensor_origin, timestamp })
    }

    pub fn centroid(&self) -> Point {
        let sum = self.points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.points.len() as f64)
    }

    /// Angle from the sensor to the cluster centroid.
    pub fn view_direction(&self) -> f64 {
        let d = self.centroid() - self.sensor_origin;
        d.y.atan2(d.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitKind {
    Edge,
    Corner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerFit {
    pub xc: f64,
    pub yc: f64,
    pub phi: f64,
    pub inliers_edge1: Vec<usize>,
    pub inliers_edge2: Vec<usize>,
    pub kind: FitKind,
    pub degenerate: bool,
}

impl CornerFit {
    pub fn corner(&self) -> Point {
        Point::new(self.xc, self.yc)
    }

    /// Unit normal of edge 1 (= direction of edge 2).
    fn n1(&self) -> Vector2<f64> {
        Vector2::new(self.phi.cos(), self.phi.sin())
    }

    /// Unit normal of edge 2 (= direction of edge 1).
    fn n2(&self) -> Vector2<f64> {
        Vector2::new(-self.phi.sin(), self.phi.cos())
    }

    fn inlier_count(&self) -> usize {
        self.inliers_edge1.len() + self.inliers_edge2.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub min_inlier_fraction: f64,
    pub slant_angle: f64,
    pub sigma: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let sigma = 0.05;
        Self { iterations: 200, inlier_threshold: 3.0 * sigma, min_inlier_fraction: 0.5, slant_angle: 10f64.to_radians(), sigma }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("ransac iterations must be >= 1"));
        }
        if !(self.inlier_threshold > 0.0 && self.sigma > 0.0) {
            return Err(Error::invalid("ransac thresholds must be > 0"));
        }
        if !(self.min_inlier_fraction > 0.0 && self.min_inlier_fraction <= 1.0) {
            return Err(Error::invalid("min_inlier_fraction must be in (0, 1]"));
        }
        if !(0.0..FRAC_PI_2).contains(&self.slant_angle) {
            return Err(Error::invalid("slant angle must be in [0, pi/2)"));
        }
        Ok(())
    }
}

/// Both edges of a corner are visible iff each outward edge direction is
/// within `90deg - s` of the viewing direction.
pub fn corner_visibility(theta_c: f64, theta_a: f64, theta_b: f64, s: f64) -> bool {
    let limit = FRAC_PI_2 - s;
    diff(theta_c, theta_a).abs() < limit && diff(theta_c, theta_b).abs() < limit
}

pub fn corner_cost(cluster: &PointCluster, fit: &CornerFit) -> f64 {
    let c = fit.corner().coords;
    let (n1, n2) = (fit.n1(), fit.n2());
    let e1: f64 = fit.inliers_edge1.iter().map(|&i| n1.dot(&(cluster.points[i].coords - c)).powi(2)).sum();
    let e2: f64 = fit.inliers_edge2.iter().map(|&i| n2.dot(&(cluster.points[i].coords - c)).powi(2)).sum();
    0.5 * (e1 + e2)
}

/// Residuals and their Jacobian rows with respect to `(xc, yc, phi)`.
fn residual_rows(cluster: &PointCluster, fit: &CornerFit) -> Vec<(f64, Vector3<f64>)> {
    let c = fit.corner().coords;
    let (n1, n2) = (fit.n1(), fit.n2());
    let mut rows = Vec::with_capacity(fit.inlier_count());
    for &i in &fit.inliers_edge1 {
        let d = cluster.points[i].coords - c;
        rows.push((n1.dot(&d), Vector3::new(-n1.x, -n1.y, n2.dot(&d))));
    }
    for &i in &fit.inliers_edge2 {
        let d = cluster.points[i].coords - c;
        rows.push((n2.dot(&d), Vector3::new(-n2.x, -n2.y, -n1.dot(&d))));
    }
    rows
}

fn normal_equations(rows: &[(f64, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    rows.iter().fold((Matrix3::zeros(), Vector3::zeros()), |(n, g), (r, a)| (n + a * a.transpose(), g + a * *r))
}

/// Minimum-norm solution of `n x = b` restricted to eigen-directions whose
/// eigenvalue exceeds `rel_tol * max_eigenvalue`. Returns the solution and
/// the numerical rank.
fn pseudo_solve(n: &Matrix3<f64>, b: &Vector3<f64>, rel_tol: f64) -> (Vector3<f64>, usize) {
    let eig = SymmetricEigen::new(*n);
    let max = eig.eigenvalues.max().max(0.0);
    let mut x = Vector3::zeros();
    let mut rank = 0;
    for k in 0..3 {
        let lambda = eig.eigenvalues[k];
        if max > 0.0 && lambda > rel_tol * max {
            let e = eig.eigenvectors.column(k);
            x += e * (e.dot(b) / lambda);
            rank += 1;
        }
    }
    (x, rank)
}

/// One Gauss-Newton step on `(xc, yc, phi)`.
///
/// The step is rejected if it would increase the cost. Rank-deficient input
/// comes back unchanged with `degenerate` set. For edge fits the translation
/// along the edge is unobserved and the step is the minimum-norm one.
pub fn gauss_newton_refine(cluster: &PointCluster, fit: &CornerFit) -> CornerFit {
    let (need_points, need_rank) = match fit.kind {
        FitKind::Corner => (3, 3),
        FitKind::Edge => (2, 2),
    };
    let degenerate = || CornerFit { degenerate: true, ..fit.clone() };
    if fit.inlier_count() < need_points {
        return degenerate();
    }
    let rows = residual_rows(cluster, fit);
    let (n, g) = normal_equations(&rows);
    let (step, rank) = pseudo_solve(&n, &(-g), 1e-12);
    if rank < need_rank {
        return degenerate();
    }
    let candidate = CornerFit { xc: fit.xc + step.x, yc: fit.yc + step.y, phi: wrap(fit.phi + step.z), degenerate: false, ..fit.clone() };
    if corner_cost(cluster, &candidate) <= corner_cost(cluster, fit) {
        candidate
    } else {
        CornerFit { degenerate: false, ..fit.clone() }
    }
}

struct Scored {
    fit: CornerFit,
    cost: f64,
}

impl Scored {
    fn beats(&self, other: &Option<Scored>) -> bool {
        match other {
            None => true,
            Some(o) => {
                let (a, b) = (self.fit.inlier_count(), o.fit.inlier_count());
                a > b || (a == b && self.cost < o.cost)
            }
        }
    }
}

fn angle_of(v: &Vector2<f64>) -> f64 {
    v.y.atan2(v.x)
}

fn line_hypothesis(cluster: &PointCluster, a: usize, b: usize, thr: f64) -> Option<Scored> {
    let pa = cluster.points[a].coords;
    let d = cluster.points[b].coords - pa;
    let len = d.norm();
    if len < 1e-9 {
        return None;
    }
    let dir = d / len;
    let normal = Vector2::new(dir.y, -dir.x);
    let inliers: Vec<usize> = (0..cluster.points.len()).filter(|&i| normal.dot(&(cluster.points[i].coords - pa)).abs() <= thr).collect();
    let fit = CornerFit {
        xc: pa.x,
        yc: pa.y,
        phi: angle_of(&normal),
        inliers_edge1: inliers,
        inliers_edge2: Vec::new(),
        kind: FitKind::Edge,
        degenerate: false,
    };
    let cost = corner_cost(cluster, &fit);
    Some(Scored { fit, cost })
}

/// Inlier partition of a corner with outward edge directions `e2` (along
/// `phi`) and `e1`. Points in the corner zone go to the edge they are closer
/// to. Also returns how many inliers of each edge lie beyond the corner zone.
fn corner_inliers(
    cluster: &PointCluster,
    corner: Vector2<f64>,
    e1: Vector2<f64>,
    e2: Vector2<f64>,
    thr: f64,
) -> (Vec<usize>, Vec<usize>, usize, usize) {
    let (mut in1, mut in2) = (Vec::new(), Vec::new());
    let (mut far1, mut far2) = (0, 0);
    for (i, p) in cluster.points.iter().enumerate() {
        let q = p.coords - corner;
        let t1 = q.dot(&e1);
        let t2 = q.dot(&e2);
        let on1 = t2.abs() <= thr && t1 >= -thr;
        let on2 = t1.abs() <= thr && t2 >= -thr;
        match (on1, on2) {
            (true, true) => {
                if t2.abs() <= t1.abs() {
                    in1.push(i)
                } else {
                    in2.push(i)
                }
            }
            (true, false) => {
                in1.push(i);
                if t1 > thr {
                    far1 += 1;
                }
            }
            (false, true) => {
                in2.push(i);
                if t2 > thr {
                    far2 += 1;
                }
            }
            _ => {}
        }
    }
    (in1, in2, far1, far2)
}

/// The three perpendicular corners defined by three points: one edge through
/// two of them, the perpendicular edge through the third.
fn corner_hypotheses(cluster: &PointCluster, idx: [usize; 3], config: &RansacConfig) -> Vec<Scored> {
    let theta_c = cluster.view_direction();
    let thr = config.inlier_threshold;
    let mut out = Vec::new();
    for lone in 0..3 {
        let a = cluster.points[idx[(lone + 1) % 3]].coords;
        let b = cluster.points[idx[(lone + 2) % 3]].coords;
        let p = cluster.points[idx[lone]].coords;
        let ab = b - a;
        let len = ab.norm();
        if len < 1e-9 {
            continue;
        }
        let u = ab / len;
        let foot = a + u * u.dot(&(p - a));
        let w = p - foot;
        let wl = w.norm();
        if wl <= thr {
            continue;
        }
        let e1 = w / wl;
        let mid = 0.5 * (a + b) - foot;
        let e2 = if mid.dot(&u) >= 0.0 { u } else { -u };
        if !corner_visibility(theta_c, angle_of(&e1), angle_of(&e2), config.slant_angle) {
            continue;
        }
        let (in1, in2, far1, far2) = corner_inliers(cluster, foot, e1, e2, thr);
        if far1 < 2 || far2 < 2 {
            continue;
        }
        let fit = CornerFit {
            xc: foot.x,
            yc: foot.y,
            phi: angle_of(&e2),
            inliers_edge1: in1,
            inliers_edge2: in2,
            kind: FitKind::Corner,
            degenerate: false,
        };
        let cost = corner_cost(cluster, &fit);
        out.push(Scored { fit, cost });
    }
    out
}

/// Outward direction and extent of each edge's inliers from the corner.
struct EdgeGeometry {
    e1: Vector2<f64>,
    e2: Vector2<f64>,
    extent1: f64,
    extent2: f64,
}

fn edge_geometry(cluster: &PointCluster, fit: &CornerFit) -> EdgeGeometry {
    let c = fit.corner().coords;
    let oriented = |dir: Vector2<f64>, idx: &[usize]| -> (Vector2<f64>, f64) {
        let t: Vec<f64> = idx.iter().map(|&i| dir.dot(&(cluster.points[i].coords - c))).collect();
        let mean = t.iter().sum::<f64>() / t.len().max(1) as f64;
        let sign = if mean >= 0.0 { 1.0 } else { -1.0 };
        let extent = t.iter().map(|x| x * sign).fold(0.0, f64::max);
        (dir * sign, extent)
    };
    let (e1, extent1) = oriented(fit.n2(), &fit.inliers_edge1);
    let (e2, extent2) = oriented(fit.n1(), &fit.inliers_edge2);
    EdgeGeometry { e1, e2, extent1, extent2 }
}

/// Moves an edge fit's corner to the lower end of its inlier extent.
fn anchor_edge(cluster: &PointCluster, fit: &mut CornerFit) {
    let c = fit.corner().coords;
    let d = fit.n2();
    let tmin = fit.inliers_edge1.iter().map(|&i| d.dot(&(cluster.points[i].coords - c))).fold(f64::INFINITY, f64::min);
    if tmin.is_finite() {
        let p = c + d * tmin;
        fit.xc = p.x;
        fit.yc = p.y;
    }
}

/// Demotes a corner to the edge with more support.
fn demote_to_edge(fit: &mut CornerFit) {
    if fit.inliers_edge2.len() > fit.inliers_edge1.len() {
        // edge 2 becomes edge 1 under phi + 90deg
        fit.phi = wrap(fit.phi + FRAC_PI_2);
        fit.inliers_edge1 = std::mem::take(&mut fit.inliers_edge2);
    }
    fit.inliers_edge2.clear();
    fit.kind = FitKind::Edge;
}

/// RANSAC over 2-point line and 3-point corner hypotheses, followed by one
/// Gauss-Newton step.
pub fn fit_cluster<R: Rng + ?Sized>(cluster: &PointCluster, config: &RansacConfig, rng: &mut R) -> Result<CornerFit> {
    config.validate()?;
    let n = cluster.points.len();
    if n < 2 {
        return Err(Error::invalid("a cluster needs at least 2 points"));
    }
    let thr = config.inlier_threshold;
    let mut best: Option<Scored> = None;
    for _ in 0..config.iterations {
        let pair = index::sample(rng, n, 2);
        if let Some(s) = line_hypothesis(cluster, pair.index(0), pair.index(1), thr) {
            if s.beats(&best) {
                best = Some(s);
            }
        }
        if n >= 3 {
            let tri = index::sample(rng, n, 3);
            for s in corner_hypotheses(cluster, [tri.index(0), tri.index(1), tri.index(2)], config) {
                if s.beats(&best) {
                    best = Some(s);
                }
            }
        }
    }
    let best = best.ok_or_else(|| Error::FitFailure("no valid hypothesis".into()))?;
    let needed = (config.min_inlier_fraction * n as f64).ceil() as usize;
    if best.fit.inlier_count() < needed {
        return Err(Error::FitFailure(format!("best hypothesis has {} of {} points, need {}", best.fit.inlier_count(), n, needed)));
    }

    let mut fit = gauss_newton_refine(cluster, &best.fit);
    if fit.kind == FitKind::Corner {
        let g = edge_geometry(cluster, &fit);
        let visible = corner_visibility(cluster.view_direction(), angle_of(&g.e1), angle_of(&g.e2), config.slant_angle);
        if fit.inliers_edge1.len() < 2 || fit.inliers_edge2.len() < 2 || !visible {
            demote_to_edge(&mut fit);
        }
    }
    if fit.kind == FitKind::Edge {
        anchor_edge(cluster, &mut fit);
    }
    Ok(fit)
}

/// Planar pose `(x, y, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// A center measurement derived from a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// `(x, y, theta)` of the vehicle center.
    pub z: Vector3<f64>,
    pub r: Matrix3<f64>,
    pub h: SMatrix<f64, 3, 6>,
    /// Length and width used to offset the corner to the center.
    pub dims: (f64, f64),
    /// Signs `(a, b)` such that `center = corner + R(theta) (a L/2, b W/2)`.
    pub offset_signs: (f64, f64),
    /// Visible extent along the length axis, when that side was fitted.
    pub observed_length: Option<f64>,
    /// Visible extent along the width axis, when that side was fitted.
    pub observed_width: Option<f64>,
}

impl Measurement {
    pub fn pose(&self) -> Pose2 {
        Pose2 { x: self.z.x, y: self.z.y, theta: self.z.z }
    }

    /// Fraction of the cluster within the box `(z, dims)` dilated by `margin`.
    pub fn fraction_inside(&self, cluster: &PointCluster, margin: f64) -> f64 {
        let (s, c) = self.z.z.sin_cos();
        let (hl, hw) = (0.5 * self.dims.0 + margin, 0.5 * self.dims.1 + margin);
        let inside = cluster
            .points
            .iter()
            .filter(|p| {
                let dx = p.x - self.z.x;
                let dy = p.y - self.z.y;
                (c * dx + s * dy).abs() <= hl && (-s * dx + c * dy).abs() <= hw
            })
            .count();
        inside as f64 / cluster.points.len() as f64
    }
}

/// Multiple of 90deg added to `phi` that best matches `target`.
fn nearest_quarter(phi: f64, target: f64) -> f64 {
    (0..4).map(|k| k as f64 * FRAC_PI_2).min_by(|a, b| diff(phi + a, target).abs().total_cmp(&diff(phi + b, target).abs())).unwrap_or(0.0)
}

fn parallel(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    a.dot(b).abs() > std::f64::consts::FRAC_1_SQRT_2
}

/// Converts a fit into a vehicle-center measurement `(x, y, theta)` with
/// covariance `sigma^2 (A^T A)^-1`, where `A` is the residual Jacobian taken
/// with respect to the center rather than the corner. Unobserved directions
/// are capped at [`V_MAX`].
pub fn measurement_from_fit(
    cluster: &PointCluster,
    fit: &CornerFit,
    dims: &ShapeEstimate,
    predicted: Option<&Pose2>,
    sigma: f64,
) -> Result<Measurement> {
    if fit.degenerate || fit.inliers_edge1.is_empty() {
        return Err(Error::Degenerate("cannot build a measurement from a degenerate fit".into()));
    }
    let (len, wid) = (dims.length, dims.width);
    let corner = fit.corner().coords;

    // heading, outward length/width directions from the box corner, and the corner itself
    let (theta, e_len, e_wid, box_corner, obs_len, obs_wid) = match fit.kind {
        FitKind::Corner => {
            let g = edge_geometry(cluster, fit);
            let tau = match predicted {
                Some(p) => nearest_quarter(fit.phi, p.theta),
                None if g.extent2 >= g.extent1 => 0.0,
                None => FRAC_PI_2,
            };
            let theta = wrap(fit.phi + tau);
            let hd = Vector2::new(theta.cos(), theta.sin());
            if parallel(&g.e2, &hd) {
                (theta, g.e2, g.e1, corner, Some(g.extent2), Some(g.extent1))
            } else {
                (theta, g.e1, g.e2, corner, Some(g.extent1), Some(g.extent2))
            }
        }
        FitKind::Edge => {
            let d = fit.n2();
            let t: Vec<f64> = fit.inliers_edge1.iter().map(|&i| d.dot(&(cluster.points[i].coords - corner))).collect();
            let tmin = t.iter().copied().fold(f64::INFINITY, f64::min);
            let tmax = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let extent = tmax - tmin;
            let n = fit.n1();
            let away = cluster.centroid() - cluster.sensor_origin;
            let e_in = if n.dot(&away) >= 0.0 { n } else { -n };
            let tau = match predicted {
                Some(p) => nearest_quarter(fit.phi, p.theta),
                None if extent > 0.5 * (len + wid) => FRAC_PI_2,
                None => 0.0,
            };
            let theta = wrap(fit.phi + tau);
            let hd = Vector2::new(theta.cos(), theta.sin());
            let along_length = parallel(&d, &hd);
            let ends = [(corner + d * tmin, d), (corner + d * tmax, -d)];
            let center_of = |(p, e): (Vector2<f64>, Vector2<f64>)| -> Vector2<f64> {
                if along_length {
                    p + e * (0.5 * len) + e_in * (0.5 * wid)
                } else {
                    p + e_in * (0.5 * len) + e * (0.5 * wid)
                }
            };
            let pick = match predicted {
                Some(pr) => {
                    let target = Vector2::new(pr.x, pr.y);
                    if (center_of(ends[0]) - target).norm() <= (center_of(ends[1]) - target).norm() {
                        0
                    } else {
                        1
                    }
                }
                None => {
                    let s = cluster.sensor_origin.coords;
                    if (ends[0].0 - s).norm() <= (ends[1].0 - s).norm() {
                        0
                    } else {
                        1
                    }
                }
            };
            let (p, e) = ends[pick];
            if along_length {
                (theta, e, e_in, p, Some(extent), None)
            } else {
                (theta, e_in, e, p, None, Some(extent))
            }
        }
    };

    let hd = Vector2::new(theta.cos(), theta.sin());
    let hn = Vector2::new(-theta.sin(), theta.cos());
    let a = if e_len.dot(&hd) >= 0.0 { 1.0 } else { -1.0 };
    let b = if e_wid.dot(&hn) >= 0.0 { 1.0 } else { -1.0 };
    let offset = e_len * (0.5 * len) + e_wid * (0.5 * wid);
    let center = box_corner + offset;

    // Residual Jacobian w.r.t. (center, theta): corner = center - offset(theta), phi = theta - tau.
    let shifted = CornerFit { xc: box_corner.x, yc: box_corner.y, ..fit.clone() };
    let rows = residual_rows(cluster, &shifted);
    let chain = Matrix3::new(1.0, 0.0, offset.y, 0.0, 1.0, -offset.x, 0.0, 0.0, 1.0);
    let info = rows.iter().fold(Matrix3::zeros(), |acc, (_, row)| {
        let a_c = chain.transpose() * row;
        acc + a_c * a_c.transpose()
    });
    let r = regularized_inverse(&info, sigma * sigma);

    Ok(Measurement {
        z: Vector3::new(center.x, center.y, theta),
        r,
        h: observation_matrix(),
        dims: (len, wid),
        offset_signs: (a, b),
        observed_length: obs_len,
        observed_width: obs_wid,
    })
}

/// `scale * info^-1` computed per eigen-direction, with variances capped at [`V_MAX`].
fn regularized_inverse(info: &Matrix3<f64>, scale: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(0.5 * (info + info.transpose()));
    let mut r = Matrix3::zeros();
    for k in 0..3 {
        let lambda = eig.eigenvalues[k];
        let var = if lambda > 0.0 { (scale / lambda).min(V_MAX) } else { V_MAX };
        let e = eig.eigenvectors.column(k);
        r += e * e.transpose() * var;
    }
    0.5 * (r + r.transpose())
}

/// Heading wrap helper used when comparing orientations modulo a half turn.
pub fn axis_diff(a: f64, b: f64) -> f64 {
    let d = diff(a, b);
    if d > FRAC_PI_2 {
        d - PI
    } else if d < -FRAC_PI_2 {
        d + PI
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l_shape(n_each: usize, len: f64, wid: f64) -> PointCluster {
        // corner at origin, edges along +x (length) and +y (width), viewed from (-10, -10)
        let mut pts = Vec::new();
        for i in 1..=n_each {
            pts.push(Point::new(len * i as f64 / n_each as f64, 0.0));
            pts.push(Point::new(0.0, wid * i as f64 / n_each as f64));
        }
        PointCluster::new(pts, Point::new(-10.0, -10.0), 0.0).unwrap()
    }

    fn exact_fit(c: &PointCluster) -> CornerFit {
        // edge 2 runs along +x (phi = 0) and holds the y = 0 points
        let (mut e1, mut e2) = (Vec::new(), Vec::new());
        for (i, p) in c.points.iter().enumerate() {
            if p.y == 0.0 {
                e2.push(i)
            } else {
                e1.push(i)
            }
        }
        CornerFit { xc: 0.0, yc: 0.0, phi: 0.0, inliers_edge1: e1, inliers_edge2: e2, kind: FitKind::Corner, degenerate: false }
    }

    #[test]
    fn visibility_examples() {
        let s = 10f64.to_radians();
        assert!(corner_visibility(0.0, 45f64.to_radians(), -45f64.to_radians(), s));
        assert!(!corner_visibility(0.0, 0.0, 90f64.to_radians(), s));
        // concave corner: edges point back at the sensor
        assert!(!corner_visibility(0.0, PI - 0.5, PI + 0.5, s));
    }

    #[test]
    fn cost_zero_on_exact_and_single_point() {
        let c = l_shape(10, 4.0, 2.0);
        let fit = exact_fit(&c);
        assert!(corner_cost(&c, &fit) < 1e-24);

        let single = PointCluster::new(vec![Point::new(0.3, 5.0), Point::new(9.0, 9.0)], Point::origin(), 0.0).unwrap();
        let f =
            CornerFit { xc: 0.0, yc: 0.0, phi: 0.0, inliers_edge1: vec![0], inliers_edge2: vec![], kind: FitKind::Edge, degenerate: false };
        assert_close!(corner_cost(&single, &f), 0.3 * 0.3 / 2.0, 1e-15);
        let empty = CornerFit { inliers_edge1: vec![], ..f };
        assert_eq!(corner_cost(&single, &empty), 0.0);
    }

    #[test]
    fn gauss_newton_is_stationary_at_optimum() {
        let c = l_shape(10, 4.0, 2.0);
        let fit = exact_fit(&c);
        let refined = gauss_newton_refine(&c, &fit);
        let step = ((refined.xc - fit.xc).powi(2) + (refined.yc - fit.yc).powi(2) + (refined.phi - fit.phi).powi(2)).sqrt();
        assert!(step <= 1e-9);
    }

    #[test]
    fn gauss_newton_converges_from_perturbation() {
        let c = l_shape(15, 4.5, 2.0);
        let truth = exact_fit(&c);
        let mut fit = CornerFit { xc: 0.02, yc: -0.02, phi: 1f64.to_radians(), ..truth.clone() };
        let first = gauss_newton_refine(&c, &fit);
        // a single step already removes most of the error
        assert!(first.xc.abs() < 0.02 && first.phi.abs() < 1e-3);
        for _ in 0..4 {
            fit = gauss_newton_refine(&c, &fit);
        }
        assert!(fit.xc.abs() < 1e-6 && fit.yc.abs() < 1e-6 && fit.phi.abs() < 1e-6);
    }

    #[test]
    fn gauss_newton_flags_rank_deficiency() {
        // all points at one location: nothing constrains the orientation
        let pts = vec![Point::new(1.0, 1.0); 4];
        let c = PointCluster::new(pts, Point::origin(), 0.0).unwrap();
        let fit = CornerFit {
            xc: 0.0,
            yc: 0.0,
            phi: 0.0,
            inliers_edge1: vec![0, 1],
            inliers_edge2: vec![2, 3],
            kind: FitKind::Corner,
            degenerate: false,
        };
        assert!(gauss_newton_refine(&c, &fit).degenerate);
        let thin = CornerFit { inliers_edge1: vec![0], inliers_edge2: vec![1], ..fit };
        assert!(gauss_newton_refine(&c, &thin).degenerate);
    }

    #[test]
    fn ransac_exact_l_shape() {
        let c = l_shape(15, 4.5, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_cluster(&c, &RansacConfig::default(), &mut rng).unwrap();
        assert_eq!(fit.kind, FitKind::Corner);
        assert_eq!(fit.inliers_edge1.len() + fit.inliers_edge2.len(), 30);
        assert!(corner_cost(&c, &fit) <= 1e-12);
        assert!(fit.xc.abs() < 1e-9 && fit.yc.abs() < 1e-9);
    }

    #[test]
    fn ransac_single_edge_never_corner() {
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 * 0.2, 5.0)).collect();
        let c = PointCluster::new(pts, Point::origin(), 0.0).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fit = fit_cluster(&c, &RansacConfig::default(), &mut rng).unwrap();
            assert_eq!(fit.kind, FitKind::Edge);
            assert!(fit.inliers_edge2.is_empty());
            assert_eq!(fit.inliers_edge1.len(), 20);
        }
    }

    #[test]
    fn ransac_reports_fit_failure() {
        // scattered points: no line or corner explains half of them
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..40).map(|_| Point::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
        let c = PointCluster::new(pts, Point::new(-10.0, 0.0), 0.0).unwrap();
        let cfg = RansacConfig { min_inlier_fraction: 0.9, ..Default::default() };
        assert!(matches!(fit_cluster(&c, &cfg, &mut rng), Err(Error::FitFailure(_))));
    }

    #[test]
    fn measurement_rear_right_corner() {
        // corner at origin, length along +x, width along +y: the box center is (2, 1)
        let c = l_shape(20, 4.0, 2.0);
        let fit = exact_fit(&c);
        let dims = ShapeEstimate::with_dims(4.0, 2.0);
        let m = measurement_from_fit(&c, &fit, &dims, Some(&Pose2 { x: 2.0, y: 1.0, theta: 0.0 }), 0.05).unwrap();
        assert_close!(m.z.x, 2.0, 1e-12);
        assert_close!(m.z.y, 1.0, 1e-12);
        assert_close!(m.z.z, 0.0, 1e-12);
        assert_eq!(m.observed_length, Some(4.0));
        assert_eq!(m.observed_width, Some(2.0));
        assert_eq!(m.h, observation_matrix());

        let m2 = measurement_from_fit(&c, &fit, &dims, Some(&Pose2 { x: 2.0, y: 1.0, theta: 0.0 }), 0.1).unwrap();
        assert!((m2.r - m.r * 4.0).abs().max() <= 1e-12 * m2.r.abs().max());
    }

    #[test]
    fn measurement_without_prediction_uses_longer_edge() {
        let c = l_shape(20, 2.0, 4.5);
        let fit = exact_fit(&c);
        let m = measurement_from_fit(&c, &fit, &ShapeEstimate::with_dims(4.5, 2.0), None, 0.05).unwrap();
        // the 4.5 m edge runs along +y, so the heading is +/-90deg
        assert_close!(axis_diff(m.z.z, FRAC_PI_2), 0.0, 1e-12);
        assert_close!(m.z.x, 1.0, 1e-12);
        assert_close!(m.z.y, 2.25, 1e-12);
    }

    #[test]
    fn measurement_rejects_degenerate() {
        let c = l_shape(5, 4.0, 2.0);
        let fit = CornerFit { degenerate: true, ..exact_fit(&c) };
        assert!(measurement_from_fit(&c, &fit, &ShapeEstimate::default(), None, 0.05).is_err());
    }

    #[test]
    fn edge_measurement_caps_along_edge_variance() {
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64 * 4.0 / 19.0, 5.0)).collect();
        let c = PointCluster::new(pts, Point::new(2.0, 0.0), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fit = fit_cluster(&c, &RansacConfig::default(), &mut rng).unwrap();
        let m = measurement_from_fit(&c, &fit, &ShapeEstimate::default(), None, 0.05).unwrap();
        let eig = SymmetricEigen::new(m.r);
        let k = eig.eigenvalues.imax();
        assert_close!(eig.eigenvalues[k], V_MAX, 1e-9);
        let v = eig.eigenvectors.column(k);
        let dir = Vector2::new(v[0], v[1]).normalize();
        assert!(dir.x.abs() > 1f64.to_radians().cos());
        // interior lies away from the sensor
        assert!(m.z.y > 5.0);
    }
}
