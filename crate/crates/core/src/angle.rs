use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-PI, PI]`.
#[inline]
pub fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wrapped difference `a - b`.
#[inline]
pub fn diff(a: f64, b: f64) -> f64 {
    wrap(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap(TAU + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn diff_is_short_way_round() {
        assert!((diff(PI - 0.1, -PI + 0.1) + 0.2).abs() < 1e-12);
    }
}
