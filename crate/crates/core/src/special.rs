//! Exponentially scaled modified Bessel functions of the first kind.
//!
//! `i0e(z) = exp(-z) I0(z)` and `i1e(z) = exp(-z) I1(z)` for `z >= 0`: the
//! power series below `ASYMPTOTIC_FROM`, the Hankel expansion above it.

const ASYMPTOTIC_FROM: f64 = 25.0;

fn series(z: f64, order: u32) -> f64 {
    let q = 0.25 * z * z;
    let (mut term, mut k) = if order == 0 { (1.0, 0u32) } else { (0.5 * z, 0u32) };
    let mut sum = term;
    loop {
        k += 1;
        term *= q / (k as f64 * (k + order) as f64);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum * (-z).exp()
}

fn asymptotic(z: f64, order: u32) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term: f64 = 1.0;
    let mut sum: f64 = 1.0;
    let mut k = 0u32;
    loop {
        k += 1;
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * z);
        if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
            break;
        }
        term = next;
        sum += term;
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

pub fn i0e(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < ASYMPTOTIC_FROM {
        series(z, 0)
    } else {
        asymptotic(z, 0)
    }
}

pub fn i1e(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < ASYMPTOTIC_FROM {
        series(z, 1)
    } else {
        asymptotic(z, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, Tolerance};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    // Angular-average definitions, independent of the series above.
    fn i0e_oracle(z: f64) -> f64 {
        integrate(|t: f64| (z * (t.cos() - 1.0)).exp(), 0.0, PI, Tolerance::new(1e-13, 1e-16)).unwrap() / PI
    }
    fn i1e_oracle(z: f64) -> f64 {
        integrate(
            |t: f64| (z * (t.cos() - 1.0)).exp() * t.cos(),
            0.0,
            PI,
            Tolerance::new(1e-13, 1e-16),
        )
        .unwrap()
            / PI
    }

    #[test]
    fn known_values() {
        assert_eq!(i0e(0.0), 1.0);
        assert_eq!(i1e(0.0), 0.0);
        // I0(1) = 1.2660658777520082, I1(1) = 0.5651591039924851
        assert_relative_eq!(i0e(1.0) * 1f64.exp(), 1.266_065_877_752_008_2, max_relative = 1e-15);
        assert_relative_eq!(i1e(1.0) * 1f64.exp(), 0.565_159_103_992_485_1, max_relative = 1e-15);
    }

    #[test]
    fn matches_angular_integral_across_branches() {
        for &z in &[1e-3, 0.3, 2.0, 7.5, 19.0, 24.9, 25.1, 40.0, 300.0, 5e3] {
            assert_relative_eq!(i0e(z), i0e_oracle(z), max_relative = 1e-12);
            assert_relative_eq!(i1e(z), i1e_oracle(z), max_relative = 1e-12);
        }
    }
}
