//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! The embedded 7-point Gauss estimate and the 15-point Kronrod estimate are
//! compared on every subinterval; the interval with the largest disagreement
//! is bisected until the summed disagreement drops below the tolerance.
//! The relative tolerance is measured against `∫|f|`, so integrands with
//! heavy cancellation still terminate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not converge on [{a}, {b}]: estimate {estimate:e}, error {error:e} after {intervals} subintervals")]
pub struct QuadratureError {
    pub a: f64,
    pub b: f64,
    pub estimate: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-9,
            abs: 1e-14,
            max_intervals: 2000,
        }
    }
}

impl Tolerance {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerance {
            rel,
            abs,
            ..Default::default()
        }
    }
}

/// One application of the 15-point rule: (Kronrod estimate, |Kronrod - Gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let (v, e, _) = gk15_l1(f, a, b);
    (v, e)
}

fn gk15_l1<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut l1 = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let (fl, fr) = (f(center - dx), f(center + dx));
        let pair = fl + fr;
        kronrod += WGK[j] * pair;
        l1 += WGK[j] * (fl.abs() + fr.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs(), l1 * half.abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    l1: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, with the interval pre-split at `breaks`
/// (points outside `(a, b)` are ignored).
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut points: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    points.push(lo);
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut total_l1 = 0.0;
    for w in points.windows(2) {
        let (value, error, l1) = gk15_l1(&mut f, w[0], w[1]);
        total += value;
        total_err += error;
        total_l1 += l1;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
            l1,
        });
    }

    while total_err > tol.abs.max(tol.rel * total_l1) {
        if !total_err.is_finite() {
            return Err(QuadratureError {
                a: lo,
                b: hi,
                estimate: sign * total,
                error: total_err,
                intervals: heap.len(),
            });
        }
        if heap.len() >= tol.max_intervals {
            return Err(QuadratureError {
                a: lo,
                b: hi,
                estimate: sign * total,
                error: total_err,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval collapsed to adjacent floats; accept what we have.
            heap.push(worst);
            break;
        }
        let (v1, e1, l1) = gk15_l1(&mut f, worst.a, mid);
        let (v2, e2, l2) = gk15_l1(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        total_l1 += l1 + l2 - worst.l1;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
            l1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
            l1: l2,
        });
        // Periodically resum to keep the running totals honest.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
            total_l1 = heap.iter().map(|s| s.l1).sum();
        }
    }
    Ok(sign * total)
}

pub fn integrate<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    integrate_with_breaks(f, a, b, &[], tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kronrod_rule_is_exact_for_degree_22() {
        for deg in 0..=22 {
            let (v, _) = gk15(&mut |x: f64| x.powi(deg), 0.0, 1.0);
            assert_relative_eq!(v, 1.0 / (deg as f64 + 1.0), max_relative = 1e-14);
        }
    }

    #[test]
    fn gauss_rule_is_exact_for_degree_13() {
        // The error estimate is |K15 - G7|, so it vanishes when both are exact.
        for deg in 0..=13 {
            let (_, e) = gk15(&mut |x: f64| x.powi(deg), -1.0, 2.0);
            assert!(e < 1e-13, "degree {deg}: {e}");
        }
        let (_, e) = gk15(&mut |x: f64| x.powi(16), -1.0, 2.0);
        assert!(e > 1e-6);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = integrate(|x: f64| x.ln(), 0.0, 1.0, Tolerance::new(1e-12, 0.0)).unwrap();
        assert_relative_eq!(v, -1.0, max_relative = 1e-11);
        let v = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, Tolerance::new(1e-10, 0.0)).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn breaks_help_kinks() {
        let v = integrate_with_breaks(
            |x: f64| (x - 0.3).abs(),
            0.0,
            1.0,
            &[0.3],
            Tolerance::new(1e-14, 0.0),
        )
        .unwrap();
        assert_relative_eq!(v, 0.5 * (0.09 + 0.49), max_relative = 1e-13);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let v = integrate(|x: f64| x.exp(), 1.0, 0.0, Tolerance::default()).unwrap();
        assert_relative_eq!(v, 1.0 - 1f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn cancelling_integrand_converges() {
        let v = integrate(|x: f64| x.sin(), -3.0, 3.0, Tolerance::new(1e-12, 0.0)).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = Tolerance {
            rel: 1e-15,
            abs: 0.0,
            max_intervals: 4,
        };
        let err = integrate(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, tol).unwrap_err();
        assert_eq!(err.intervals, 4);
    }
}
