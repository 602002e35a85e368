//! Geometry helpers for radial functions in dimensions 1, 2 and 3.

use std::f64::consts::PI;

use crate::quadrature::{integrate, integrate_with_breaks, QuadratureError, Tolerance};

/// Surface measure of the unit sphere in R^d (2 for d = 1).
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {d}"),
    }
}

pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Average of the radial function `g` over the sphere of radius `rho`
/// centred at a point at distance `r` from the origin.
pub fn spherical_mean<G: Fn(f64) -> f64>(
    g: G,
    r: f64,
    rho: f64,
    d: usize,
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    if rho == 0.0 {
        return Ok(g(r));
    }
    if r == 0.0 {
        return Ok(g(rho));
    }
    let dist = |c: f64| (r * r + rho * rho - 2.0 * r * rho * c).max(0.0).sqrt();
    match d {
        1 => Ok(0.5 * (g((r - rho).abs()) + g(r + rho))),
        2 => {
            let v = integrate(|t: f64| g(dist(t.cos())), 0.0, PI, tol)?;
            Ok(v / PI)
        }
        3 => {
            // Substituting the chord length s for the polar cosine gives
            // (1 / 2 r rho) * integral of g(s) s ds over [|r - rho|, r + rho].
            let lo = (r - rho).abs();
            let hi = r + rho;
            let v = integrate_with_breaks(|s: f64| g(s) * s, lo, hi, &[], tol)?;
            Ok(v / (2.0 * r * rho))
        }
        _ => panic!("unsupported dimension {d}"),
    }
}

/// `∫ f(|x|) dx` over the shell `a <= |x| <= b` in R^d.
pub fn shell_integral<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    d: usize,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    let area = sphere_area(d);
    let v = integrate_with_breaks(|r: f64| f(r) * r.powi(d as i32 - 1), a, b, breaks, tol)?;
    Ok(area * v)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn volumes() {
        assert_relative_eq!(ball_volume(1), 2.0);
        assert_relative_eq!(ball_volume(2), PI);
        assert_relative_eq!(ball_volume(3), 4.0 * PI / 3.0);
    }

    #[test]
    fn newtonian_mean_value_property() {
        // 1/|x| in R^3 and log|x| in R^2 are harmonic away from the origin:
        // their spherical means equal the value at the larger radius.
        let tol = Tolerance::new(1e-12, 1e-14);
        for &(r, rho) in &[(2.0, 0.5), (0.5, 2.0), (1.0, 0.999)] {
            let m = spherical_mean(|s: f64| 1.0 / s, r, rho, 3, tol).unwrap();
            assert_relative_eq!(m, 1.0 / f64::max(r, rho), max_relative = 1e-10);
            let m = spherical_mean(|s: f64| s.ln(), r, rho, 2, tol).unwrap();
            assert_relative_eq!(m, f64::max(r, rho).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn quadratic_mean_adds_radius() {
        let tol = Tolerance::new(1e-13, 0.0);
        for d in 1..=3 {
            let m = spherical_mean(|s: f64| s * s, 1.3, 0.4, d, tol).unwrap();
            assert_relative_eq!(m, 1.3f64.powi(2) + 0.4f64.powi(2), max_relative = 1e-12);
        }
    }

    #[test]
    fn unit_ball_shell_integral() {
        for d in 1..=3 {
            let v = shell_integral(|_| 1.0, 0.0, 1.0, d, &[], Tolerance::default()).unwrap();
            assert_relative_eq!(v, ball_volume(d), max_relative = 1e-12);
        }
    }
}
