//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::Matrix2;

/// RK4 integration of the rigid-body motion underlying the arc model.
///
/// The rotation-axis point moves at speed `v` along the heading while the
/// heading turns at `w`; the center sits `l` behind/ahead of it on the
/// centerline. Returns the final center `(x, y, theta)` (theta unwrapped).
#[allow(clippy::too_many_arguments)]
pub fn rk4_arc(x: f64, y: f64, l: f64, v: f64, theta: f64, w: f64, dt: f64, h: f64) -> (f64, f64, f64) {
    let f = |th: f64| -> [f64; 3] { [v * th.cos(), v * th.sin(), w] };
    let mut s = [x + l * theta.cos(), y + l * theta.sin(), theta];
    let n = (dt / h).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    for _ in 0..n {
        let k1 = f(s[2]);
        let k2 = f(s[2] + 0.5 * h * k1[2]);
        let k3 = f(s[2] + 0.5 * h * k2[2]);
        let k4 = f(s[2] + h * k3[2]);
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (s[0] - l * s[2].cos(), s[1] - l * s[2].sin(), s[2])
}

/// RK4 solution of `Qdot = F Q + Q F^T + diag(0, q)` from `Q(0) = 0`,
/// `F = [[0, 1], [0, 0]]`.
pub fn rk4_lyapunov(q: f64, dt: f64, h: f64) -> Matrix2<f64> {
    let fm = Matrix2::new(0.0, 1.0, 0.0, 0.0);
    let g = Matrix2::new(0.0, 0.0, 0.0, q);
    let rhs = |m: &Matrix2<f64>| fm * m + m * fm.transpose() + g;
    let n = (dt / h).round().max(1.0) as usize;
    let h = dt / n as f64;
    let mut m = Matrix2::zeros();
    for _ in 0..n {
        let k1 = rhs(&m);
        let k2 = rhs(&(m + k1 * (0.5 * h)));
        let k3 = rhs(&(m + k2 * (0.5 * h)));
        let k4 = rhs(&(m + k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    m
}

/// Points on the two sensor-facing sides of a `length x width` box plus
/// uniform outliers in the box dilated by 1 m. The sensor sits at the origin
/// and the box center at `center`. Range noise is applied along each ray.
/// Returns the cluster, the visible corner, and the heading of the box.
pub struct LShape {
    pub points: Vec<(f64, f64)>,
    pub corner: (f64, f64),
    pub heading: f64,
}

pub fn l_shape<R: rand::Rng>(
    rng: &mut R,
    center: (f64, f64),
    heading: f64,
    length: f64,
    width: f64,
    sigma: f64,
    outlier_fraction: f64,
) -> LShape {
    use rand_distr::{Distribution, Normal};
    let (s, c) = heading.sin_cos();
    let local = |a: f64, b: f64| (center.0 + c * a - s * b, center.1 + s * a + c * b);
    let corners = [
        local(0.5 * length, 0.5 * width),
        local(-0.5 * length, 0.5 * width),
        local(-0.5 * length, -0.5 * width),
        local(0.5 * length, -0.5 * width),
    ];
    let near = (0..4)
        .min_by(|&i, &j| {
            let di = corners[i].0.hypot(corners[i].1);
            let dj = corners[j].0.hypot(corners[j].1);
            di.total_cmp(&dj)
        })
        .unwrap();
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut points = Vec::new();
    for nb in [(near + 1) % 4, (near + 3) % 4] {
        let (a, b) = (corners[near], corners[nb]);
        let side = (b.0 - a.0).hypot(b.1 - a.1);
        let n = (side / 0.15).round() as usize;
        for k in 1..=n {
            let t = k as f64 / (n as f64 + 1.0);
            let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let r = p.0.hypot(p.1);
            let e = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            points.push((p.0 * (1.0 + e / r), p.1 * (1.0 + e / r)));
        }
    }
    let n_out = (outlier_fraction / (1.0 - outlier_fraction) * points.len() as f64).round() as usize;
    for _ in 0..n_out {
        let a = rng.random_range(-0.5 * length - 1.0..0.5 * length + 1.0);
        let b = rng.random_range(-0.5 * width - 1.0..0.5 * width + 1.0);
        points.push(local(a, b));
    }
    LShape { points, corner: corners[near], heading }
}
