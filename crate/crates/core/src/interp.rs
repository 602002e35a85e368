//! Quintic Hermite interpolation from values and first two derivatives.
//!
//! The interpolant is C^2 across knots and reproduces the knot data exactly.

/// Knot layout; lookup of the containing cell is O(1) for both layouts.
#[derive(Debug, Clone, PartialEq)]
pub enum Knots {
    /// `x_i = x0 + i h`
    Uniform { x0: f64, h: f64 },
    /// `x_i = exp(u0 + i du)`
    Log { u0: f64, du: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    pub knots: Knots,
    pub xs: Vec<f64>,
    pub f: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Polynomial coefficients on the unit cell from end data scaled by `h`.
fn coefficients(f0: f64, g0: f64, s0: f64, f1: f64, g1: f64, s1: f64, h: f64) -> [f64; 6] {
    let c0 = f0;
    let c1 = h * g0;
    let c2 = 0.5 * h * h * s0;
    let delta = f1 - c0 - c1 - c2;
    let slope = h * g1 - c1 - 2.0 * c2;
    let curv = h * h * s1 - 2.0 * c2;
    [
        c0,
        c1,
        c2,
        10.0 * delta - 4.0 * slope + 0.5 * curv,
        -15.0 * delta + 7.0 * slope - curv,
        6.0 * delta - 3.0 * slope + 0.5 * curv,
    ]
}

impl HermiteTable {
    pub fn new(knots: Knots, xs: Vec<f64>, f: Vec<f64>, d1: Vec<f64>, d2: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == f.len() && f.len() == d1.len() && d1.len() == d2.len());
        HermiteTable { knots, xs, f, d1, d2 }
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn cell(&self, x: f64) -> usize {
        let raw = match self.knots {
            Knots::Uniform { x0, h } => (x - x0) / h,
            Knots::Log { u0, du } => (x.ln() - u0) / du,
        };
        let mut i = if raw.is_finite() && raw > 0.0 {
            (raw as usize).min(self.xs.len() - 2)
        } else {
            0
        };
        // Guard against rounding in the index computation.
        if x < self.xs[i] && i > 0 {
            i -= 1;
        } else if x > self.xs[i + 1] && i + 2 < self.xs.len() {
            i += 1;
        }
        i
    }

    /// (value, first derivative) of the interpolant; `x` is clamped to the
    /// table range by the caller.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.cell(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        if x == x1 {
            return (self.f[i + 1], self.d1[i + 1]);
        }
        let h = x1 - x0;
        let c = coefficients(
            self.f[i],
            self.d1[i],
            self.d2[i],
            self.f[i + 1],
            self.d1[i + 1],
            self.d2[i + 1],
            h,
        );
        let t = (x - x0) / h;
        let v = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let dv = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        (v, dv / h)
    }
}

/// Derivative of samples on a uniform grid by five-point stencils
/// (centered inside, one-sided at both ends). Needs at least five samples.
pub fn five_point_derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5);
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    }
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    let m = n - 1;
    out[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4])
        / (12.0 * h);
    out[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4])
        / (12.0 * h);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_for<F: Fn(f64) -> (f64, f64, f64)>(knots: Knots, xs: Vec<f64>, g: F) -> HermiteTable {
        let (mut f, mut d1, mut d2) = (vec![], vec![], vec![]);
        for &x in &xs {
            let (a, b, c) = g(x);
            f.push(a);
            d1.push(b);
            d2.push(c);
        }
        HermiteTable::new(knots, xs, f, d1, d2)
    }

    #[test]
    fn reproduces_quintics_exactly() {
        let p = |x: f64| {
            (
                1.0 - 2.0 * x + 0.5 * x.powi(3) + 0.1 * x.powi(5),
                -2.0 + 1.5 * x * x + 0.5 * x.powi(4),
                3.0 * x + 2.0 * x.powi(3),
            )
        };
        let xs: Vec<f64> = (0..6).map(|i| -1.0 + 0.4 * i as f64).collect();
        let t = table_for(Knots::Uniform { x0: -1.0, h: 0.4 }, xs, p);
        for k in 0..50 {
            let x = -1.0 + 2.0 * k as f64 / 49.0;
            let (v, dv) = t.eval(x);
            assert_relative_eq!(v, p(x).0, epsilon = 1e-12);
            assert_relative_eq!(dv, p(x).1, epsilon = 1e-11);
        }
    }

    #[test]
    fn knots_are_reproduced_on_log_grid() {
        let (u0, du) = (-3.0f64, 0.25);
        let xs: Vec<f64> = (0..30).map(|i| (u0 + du * i as f64).exp()).collect();
        let t = table_for(Knots::Log { u0, du }, xs.clone(), |x| (x.sin(), x.cos(), -x.sin()));
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(t.eval(x).0, t.f[i]);
        }
        let x = 0.7;
        assert_relative_eq!(t.eval(x).0, x.sin(), epsilon = 1e-8);
    }

    #[test]
    fn five_point_is_fourth_order() {
        let err = |h: f64| {
            let n = (0.8 / h).round() as usize + 1;
            let f: Vec<f64> = (0..n).map(|i| (h * i as f64).exp()).collect();
            let d = five_point_derivative(&f, h);
            d.iter()
                .enumerate()
                .map(|(i, v)| (v - (h * i as f64).exp()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }
}
