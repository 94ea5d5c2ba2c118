//! Vehicle motion models.
//!
//! Two six-state models are provided:
//!
//! * **ISM** (independent steering): constant velocity in `x`, `y` and
//!   heading, state ordered `(x, xdot, y, ydot, theta, thetadot)`.
//! * **VASM** (variable-axis Ackerman steering): the vehicle moves on an arc
//!   about a rotation axis located at signed offset `L` along the centerline
//!   from the vehicle center, state ordered `(x, y, L, v, theta, thetadot)`.
//!
//! `v` is the speed of the rotation-axis point, whose velocity is always
//! parallel to the heading. Positions are world frame; all headings are kept
//! wrapped to `(-pi, pi]`.

use nalgebra::{Matrix2, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::angle::wrap;
use crate::error::{Error, Result};

pub type StateVector6 = Vector6<f64>;
pub type Covariance6 = Matrix6<f64>;

/// Below this `|thetadot * dt|` the sinc family switches to Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

/// Default bound on the rotation-axis offset magnitude.
pub const DEFAULT_L_MAX: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsmState {
    pub x: f64,
    pub xdot: f64,
    pub y: f64,
    pub ydot: f64,
    pub theta: f64,
    pub thetadot: f64,
}

impl IsmState {
    pub const X: usize = 0;
    pub const XDOT: usize = 1;
    pub const Y: usize = 2;
    pub const YDOT: usize = 3;
    pub const THETA: usize = 4;
    pub const THETADOT: usize = 5;

    pub fn from_vector(v: &StateVector6) -> Self {
        Self { x: v[0], xdot: v[1], y: v[2], ydot: v[3], theta: wrap(v[4]), thetadot: v[5] }
    }

    pub fn to_vector(&self) -> StateVector6 {
        Vector6::new(self.x, self.xdot, self.y, self.ydot, self.theta, self.thetadot)
    }

    pub fn speed(&self) -> f64 {
        self.xdot.hypot(self.ydot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VasmState {
    pub x: f64,
    pub y: f64,
    /// Signed position of the rotation axis along the centerline, measured
    /// from the vehicle center (negative = behind the center).
    pub l: f64,
    /// Speed of the rotation-axis point along the heading.
    pub v: f64,
    pub theta: f64,
    pub thetadot: f64,
}

impl VasmState {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const L: usize = 2;
    pub const V: usize = 3;
    pub const THETA: usize = 4;
    pub const THETADOT: usize = 5;

    pub fn from_vector(v: &StateVector6) -> Self {
        Self { x: v[0], y: v[1], l: v[2], v: v[3], theta: wrap(v[4]), thetadot: v[5] }
    }

    pub fn to_vector(&self) -> StateVector6 {
        Vector6::new(self.x, self.y, self.l, self.v, self.theta, self.thetadot)
    }

    fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// White-noise intensities of both process models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Linear acceleration intensity (ISM x/y and VASM along-arc).
    pub alpha: f64,
    /// ISM angular acceleration intensity.
    pub beta: f64,
    /// VASM angular acceleration intensity.
    pub gamma: f64,
    /// Rotation-axis drift intensity, applied as `eps_l * dt`.
    pub eps_l: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, gamma: 0.5, eps_l: 0.01 }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, val) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("eps_l", self.eps_l)] {
            if !(val.is_finite() && val >= 0.0) {
                return Err(Error::invalid(format!("noise parameter {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("dt must be finite and >= 0, got {dt}")))
    }
}

/// `sin(x) / x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SMALL_ANGLE {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Derivative of [`sinc`], zero at the origin.
pub fn sinc_prime(x: f64) -> f64 {
    if x.abs() < SMALL_ANGLE {
        let x2 = x * x;
        -x / 3.0 + x * x2 / 30.0 - x * x2 * x2 / 840.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// World-frame transform `T(theta)`: rotates the position rows, identity elsewhere.
fn world_transform(theta: f64) -> Covariance6 {
    let mut t = Covariance6::identity();
    t.fixed_view_mut::<2, 2>(0, 0).copy_from(&rotation(theta));
    t
}

/// Constant-velocity transition matrix.
pub fn ism_transition_matrix(dt: f64) -> Result<Covariance6> {
    check_dt(dt)?;
    let mut phi = Covariance6::identity();
    for i in [0, 2, 4] {
        phi[(i, i + 1)] = dt;
    }
    Ok(phi)
}

/// Process noise of a white-noise acceleration on a `(pos, rate)` pair.
fn cv_block(q: f64, dt: f64) -> Matrix2<f64> {
    let dt2 = dt * dt;
    Matrix2::new(dt2 * dt / 3.0, dt2 / 2.0, dt2 / 2.0, dt) * q
}

pub fn ism_process_noise(dt: f64, params: &NoiseParams) -> Result<Covariance6> {
    check_dt(dt)?;
    params.validate()?;
    let mut q = Covariance6::zeros();
    q.fixed_view_mut::<2, 2>(0, 0).copy_from(&cv_block(params.alpha, dt));
    q.fixed_view_mut::<2, 2>(2, 2).copy_from(&cv_block(params.alpha, dt));
    q.fixed_view_mut::<2, 2>(4, 4).copy_from(&cv_block(params.beta, dt));
    Ok(q)
}

/// Displacement of the vehicle center after `dt`, expressed in the vehicle
/// frame at the start of the interval (x forward, y left).
pub fn vasm_local_displacement(v: f64, thetadot: f64, l: f64, dt: f64) -> Result<(f64, f64)> {
    if ![v, thetadot, l, dt].iter().all(|a| a.is_finite()) {
        return Err(Error::invalid("non-finite VASM displacement input"));
    }
    Ok(local_displacement(v, thetadot, l, dt))
}

fn local_displacement(v: f64, thetadot: f64, l: f64, dt: f64) -> (f64, f64) {
    let phi = thetadot * dt;
    let half = 0.5 * phi;
    let s_half = sinc(half);
    let cx = v * dt * sinc(phi) + 2.0 * l * half.sin().powi(2);
    let cy = 0.5 * v * thetadot * dt * dt * s_half * s_half - l * phi.sin();
    (cx, cy)
}

/// Heading offset and speed of the vehicle center's velocity.
///
/// The center moves with velocity `(v, -L * thetadot)` in the vehicle frame,
/// so `v_c` is the norm of that vector. For the all-zero case the angle is 0.
pub fn vasm_center_velocity(state: &VasmState) -> (f64, f64) {
    let lateral = -state.l * state.thetadot;
    if lateral == 0.0 && state.v == 0.0 {
        return (0.0, 0.0);
    }
    (lateral.atan2(state.v), state.v.hypot(lateral))
}

/// Nonlinear VASM propagation over `dt`.
pub fn vasm_propagate(state: &VasmState, dt: f64) -> VasmState {
    debug_assert!(dt >= 0.0 && state.is_finite());
    let (cx, cy) = local_displacement(state.v, state.thetadot, state.l, dt);
    let (s, c) = state.theta.sin_cos();
    VasmState { x: state.x + c * cx - s * cy, y: state.y + s * cx + c * cy, theta: wrap(state.theta + state.thetadot * dt), ..*state }
}

/// Jacobian of [`vasm_propagate`] with respect to the state.
pub fn vasm_transition_matrix(state: &VasmState, dt: f64) -> Covariance6 {
    let (v, w, l) = (state.v, state.thetadot, state.l);
    let (cx, cy) = local_displacement(v, w, l, dt);
    let phi = w * dt;
    let half = 0.5 * phi;
    let s_half = sinc(half);
    let dt2 = dt * dt;

    let dcx_dl = 2.0 * half.sin().powi(2);
    let dcy_dl = -phi.sin();
    let dcx_dv = dt * sinc(phi);
    let dcy_dv = 0.5 * w * dt2 * s_half * s_half;
    let dcx_dw = v * dt2 * sinc_prime(phi) + l * dt * phi.sin();
    let dcy_dw = v * dt2 * (s_half * half.cos() - 0.5 * s_half * s_half) - l * dt * phi.cos();

    let mut m = Covariance6::zeros();
    m[(0, 2)] = dcx_dl;
    m[(0, 3)] = dcx_dv;
    m[(0, 4)] = -cy;
    m[(0, 5)] = dcx_dw;
    m[(1, 2)] = dcy_dl;
    m[(1, 3)] = dcy_dv;
    m[(1, 4)] = cx;
    m[(1, 5)] = dcy_dw;
    m[(4, 5)] = dt;

    Covariance6::identity() + world_transform(state.theta) * m
}

/// Process noise in the local curvilinear frame, before rotation to world.
pub fn vasm_local_process_noise(state: &VasmState, dt: f64, params: &NoiseParams) -> Covariance6 {
    let (a, g) = (params.alpha, params.gamma);
    let av = state.v.abs();
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt3 * dt;
    let dt5 = dt4 * dt;

    let mut q = Covariance6::zeros();
    // along-arc position and speed
    q[(0, 0)] = a * dt3 / 3.0;
    q[(0, 3)] = a * dt2 / 2.0;
    q[(3, 0)] = q[(0, 3)];
    q[(3, 3)] = a * dt;
    // cross-arc position, heading, turn rate
    q[(1, 1)] = g * state.v * state.v * dt5 / 20.0;
    q[(1, 4)] = g * av * dt4 / 8.0;
    q[(4, 1)] = q[(1, 4)];
    q[(1, 5)] = g * av * dt3 / 6.0;
    q[(5, 1)] = q[(1, 5)];
    q[(4, 4)] = g * dt3 / 3.0;
    q[(4, 5)] = g * dt2 / 2.0;
    q[(5, 4)] = q[(4, 5)];
    q[(5, 5)] = g * dt;
    // rotation axis drift
    q[(2, 2)] = params.eps_l * dt;
    q
}

pub fn vasm_process_noise(state: &VasmState, dt: f64, params: &NoiseParams) -> Covariance6 {
    let t = world_transform(state.theta);
    let q = t * vasm_local_process_noise(state, dt, params) * t.transpose();
    0.5 * (q + q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn ism_identity_at_zero_dt() {
        assert_eq!(ism_transition_matrix(0.0).unwrap(), Covariance6::identity());
    }

    #[test]
    fn ism_unit_velocity() {
        let x = IsmState { x: 0.0, xdot: 1.0, y: 0.0, ydot: 0.0, theta: 0.0, thetadot: 0.0 };
        let out = ism_transition_matrix(1.0).unwrap() * x.to_vector();
        assert_eq!(out, Vector6::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn ism_rejects_bad_dt() {
        assert!(ism_transition_matrix(-0.1).is_err());
        assert!(ism_transition_matrix(f64::NAN).is_err());
        assert!(ism_process_noise(-1.0, &NoiseParams::default()).is_err());
    }

    #[test]
    fn ism_noise_unit_block() {
        let p = NoiseParams { alpha: 1.0, ..Default::default() };
        let q = ism_process_noise(1.0, &p).unwrap();
        assert_close!(q[(0, 0)], 1.0 / 3.0, 1e-15);
        assert_close!(q[(0, 1)], 0.5, 1e-15);
        assert_close!(q[(1, 1)], 1.0, 1e-15);
        assert_eq!(ism_process_noise(0.0, &p).unwrap(), Covariance6::zeros());
    }

    #[test]
    fn sinc_branches_meet() {
        for x in [0.99e-4f64, 1.01e-4, -0.99e-4, -1.01e-4] {
            let exact = x.sin() / x;
            assert_close!(sinc(x), exact, 1e-15);
            let exact_p = (x * x.cos() - x.sin()) / (x * x);
            // the closed form loses ~8 digits here; the series is the reference
            assert_close!(sinc_prime(x), -x / 3.0, 1e-9);
            assert_close!(exact_p, -x / 3.0, 1e-7);
        }
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(sinc_prime(0.0), 0.0);
    }

    #[test]
    fn straight_and_quarter_circle() {
        let (cx, cy) = vasm_local_displacement(1.0, 0.0, 0.0, 2.0).unwrap();
        assert_close!(cx, 2.0, 1e-15);
        assert_close!(cy, 0.0, 1e-15);
        let (cx, cy) = vasm_local_displacement(FRAC_PI_2, FRAC_PI_2, 0.0, 1.0).unwrap();
        assert_close!(cx, 1.0, 1e-14);
        assert_close!(cy, 1.0, 1e-14);
        assert!(vasm_local_displacement(f64::INFINITY, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn center_velocity_cases() {
        let s = VasmState { x: 0.0, y: 0.0, l: 0.0, v: 3.0, theta: 0.0, thetadot: 0.7 };
        assert_eq!(vasm_center_velocity(&s), (0.0, 3.0));
        let s = VasmState { l: 1.0, v: 1.0, thetadot: 1.0, ..s };
        let (d, vc) = vasm_center_velocity(&s);
        assert_close!(d, -FRAC_PI_4, 1e-15);
        assert_close!(vc, 2f64.sqrt(), 1e-15);
        let s = VasmState { l: 0.0, v: 0.0, thetadot: 0.0, ..s };
        assert_eq!(vasm_center_velocity(&s), (0.0, 0.0));
    }

    #[test]
    fn propagate_rotated_straight_line() {
        let s = VasmState { x: 1.0, y: 2.0, l: 0.5, v: 2.0, theta: FRAC_PI_2, thetadot: 0.0 };
        let out = vasm_propagate(&s, 1.0);
        assert_close!(out.x, 1.0, 1e-14);
        assert_close!(out.y, 4.0, 1e-14);
        assert_eq!(out.theta, s.theta);
        assert_eq!(vasm_propagate(&s, 0.0), s);
    }

    #[test]
    fn propagate_wraps_heading() {
        let s = VasmState { x: 0.0, y: 0.0, l: 0.0, v: 1.0, theta: PI - 0.05, thetadot: 1.0 };
        let out = vasm_propagate(&s, 0.1);
        assert_close!(out.theta, -PI + 0.05, 1e-12);
    }

    #[test]
    fn jacobian_identity_and_straight_limits() {
        let s = VasmState { x: 3.0, y: -1.0, l: 0.0, v: 4.0, theta: 0.3, thetadot: 0.0 };
        assert_eq!(vasm_transition_matrix(&s, 0.0), Covariance6::identity());
        let dt = 0.1;
        let phi = vasm_transition_matrix(&VasmState { theta: 0.0, ..s }, dt);
        assert_close!(phi[(0, 3)], dt, 1e-15);
        assert_close!(phi[(1, 3)], 0.0, 1e-15);
        assert_close!(phi[(0, 2)], 0.0, 1e-15);
        assert_close!(phi[(1, 2)], 0.0, 1e-15);
    }

    #[test]
    fn vasm_noise_reference_entries() {
        let p = NoiseParams { gamma: 1.0, ..Default::default() };
        let s = VasmState { x: 0.0, y: 0.0, l: 0.0, v: 1.0, theta: 0.0, thetadot: 0.0 };
        let q = vasm_process_noise(&s, 1.0, &p);
        assert_close!(q[(1, 1)], 1.0 / 20.0, 1e-15);
        assert_close!(q[(1, 4)], 1.0 / 8.0, 1e-15);
        assert_close!(q[(1, 5)], 1.0 / 6.0, 1e-15);
        assert_close!(q[(4, 4)], 1.0 / 3.0, 1e-15);
        assert_eq!(vasm_process_noise(&s, 0.0, &p), Covariance6::zeros());
    }
}
