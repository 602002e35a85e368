//! Mollifiers, their autocorrelation `Φ = φ * φ`, and the tabulated
//! regularized kernel `K_ε = φ_ε * K * φ_ε = K * Φ_ε`.
//!
//! Width convention: `ε` is the spatial width of `φ_ε(x) = ε^-d φ(x/ε)`.
//! The heat mollifier of width `σ` is the heat kernel at time `t = σ²`,
//! `(4πσ²)^(-d/2) exp(-|x|²/4σ²)`, so each coordinate has variance `2σ²`
//! and `Φ_σ` is the heat kernel at time `2σ²`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::interp::{five_point_derivative, HermiteTable, Knots};
use crate::kernels::{HypothesisReport, KernelError, KernelSpec, RadialPart};
use crate::quadrature::{integrate, integrate_with_breaks, QuadratureError, Tolerance};
use crate::radial::{norm, sphere_area};
use crate::rng::SeededRng;
use crate::special::{i0e, i1e};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifyError {
    #[error("mollifier width must be positive and finite, got {0}")]
    InvalidWidth(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("mollifier/kernel pairing not allowed: {0}")]
    Pairing(String),
    #[error("tabulation failed at radius {radius:e}: {source}")]
    Tabulation {
        radius: f64,
        #[source]
        source: QuadratureError,
    },
    #[error("invalid tabulation parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MollifierKind {
    GaussianHeat,
    CompactBump,
}

impl MollifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            MollifierKind::GaussianHeat => "gaussian",
            MollifierKind::CompactBump => "bump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    kind: MollifierKind,
    width: f64,
}

impl MollifierSpec {
    pub fn new(kind: MollifierKind, width: f64) -> Result<Self, MollifyError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(MollifyError::InvalidWidth(width));
        }
        Ok(MollifierSpec { kind, width })
    }

    pub fn kind(&self) -> MollifierKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Heat time `t = σ²`.
    pub fn heat_time(&self) -> f64 {
        self.width * self.width
    }

    /// Power-law decay exponent `l` in `φ(x) <= C|x|^-l`; `+∞` for both
    /// kinds (Gaussian decay, compact support).
    pub fn decay_exponent(&self) -> f64 {
        f64::INFINITY
    }

    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            MollifierKind::GaussianHeat => None,
            MollifierKind::CompactBump => Some(self.width),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_radial(norm(x), x.len())
    }

    pub fn eval_radial(&self, r: f64, d: usize) -> f64 {
        let s = self.width;
        match self.kind {
            MollifierKind::GaussianHeat => {
                (4.0 * PI * s * s).powf(-(d as f64) / 2.0) * (-r * r / (4.0 * s * s)).exp()
            }
            MollifierKind::CompactBump => s.powi(-(d as i32)) * unit_bump(r / s, d),
        }
    }

    /// `∫ |x|² φ(x) dx`.
    pub fn second_moment(&self, d: usize) -> f64 {
        let s2 = self.width * self.width;
        match self.kind {
            MollifierKind::GaussianHeat => 2.0 * d as f64 * s2,
            MollifierKind::CompactBump => bump_constants(d).second_moment * s2,
        }
    }

    /// Draws a sample from `φ` into `out`.
    pub fn sample(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let d = out.len();
        match self.kind {
            MollifierKind::GaussianHeat => {
                let std = std::f64::consts::SQRT_2 * self.width;
                for o in out.iter_mut() {
                    *o = std * rng.normal();
                }
            }
            MollifierKind::CompactBump => loop {
                for o in out.iter_mut() {
                    *o = rng.uniform_in(-1.0, 1.0);
                }
                let s2: f64 = out.iter().map(|v| v * v).sum();
                if s2 >= 1.0 {
                    continue;
                }
                // Accept with probability exp(-1/(1-s²)) / exp(-1).
                if rng.uniform() < (1.0 - 1.0 / (1.0 - s2)).exp() {
                    for o in out.iter_mut() {
                        *o *= self.width;
                    }
                    debug_assert_eq!(out.len(), d);
                    return;
                }
            },
        }
    }
}

struct BumpConstants {
    normalization: f64,
    second_moment: f64,
}

fn bump_constants(d: usize) -> &'static BumpConstants {
    static CACHE: [OnceLock<BumpConstants>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CACHE[d - 1].get_or_init(|| {
        let tol = Tolerance::new(1e-14, 0.0);
        let raw = |s: f64, k: i32| (-1.0 / (1.0 - s * s)).exp() * s.powi(k);
        let mass = sphere_area(d) * integrate(|s| raw(s, d as i32 - 1), 0.0, 1.0, tol).unwrap();
        let m2 = sphere_area(d) * integrate(|s| raw(s, d as i32 + 1), 0.0, 1.0, tol).unwrap();
        BumpConstants {
            normalization: 1.0 / mass,
            second_moment: m2 / mass,
        }
    })
}

/// Unit-width normalized bump `C exp(-1/(1-s²))` on `s < 1`.
fn unit_bump(s: f64, d: usize) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        bump_constants(d).normalization * (-1.0 / (1.0 - s * s)).exp()
    }
}

fn unit_bump_derivative(s: f64, d: usize) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        unit_bump(s, d) * (-2.0 * s / (q * q))
    }
}

/// The autocorrelation `Φ_σ = φ_σ * φ_σ` as a radial profile.
#[derive(Debug, Clone)]
pub enum Autocorrelation {
    /// Centered Gaussian with per-coordinate standard deviation `std`.
    Gaussian { d: usize, std: f64 },
    /// `σ^-d Φ(r/σ)` with `Φ` tabulated on `[0, 2]`.
    Tabulated {
        d: usize,
        scale: f64,
        table: &'static HermiteTable,
    },
}

pub fn autocorrelation(m: &MollifierSpec, d: usize) -> Autocorrelation {
    match m.kind {
        MollifierKind::GaussianHeat => Autocorrelation::Gaussian {
            d,
            std: 2.0 * m.width,
        },
        MollifierKind::CompactBump => Autocorrelation::Tabulated {
            d,
            scale: m.width,
            table: unit_bump_autocorrelation(d),
        },
    }
}

impl Autocorrelation {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Autocorrelation::Gaussian { d, std } => {
                let v = std * std;
                (2.0 * PI * v).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * v)).exp()
            }
            Autocorrelation::Tabulated { d, scale, table } => {
                let t = r / scale;
                if t >= 2.0 {
                    0.0
                } else {
                    // Interpolation can undershoot in the flat tail near t = 2.
                    scale.powi(-(d as i32)) * table.eval(t).0.max(0.0)
                }
            }
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            Autocorrelation::Gaussian { std, .. } => -r / (std * std) * self.value(r),
            Autocorrelation::Tabulated { d, scale, table } => {
                let t = r / scale;
                if t >= 2.0 {
                    0.0
                } else {
                    scale.powi(-(d as i32) - 1) * table.eval(t).1
                }
            }
        }
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            Autocorrelation::Gaussian { .. } => f64::INFINITY,
            Autocorrelation::Tabulated { scale, .. } => 2.0 * scale,
        }
    }

    /// Heat time of a Gaussian autocorrelation (`std² / 2`).
    pub fn heat_time(&self) -> Option<f64> {
        match *self {
            Autocorrelation::Gaussian { std, .. } => Some(0.5 * std * std),
            Autocorrelation::Tabulated { .. } => None,
        }
    }

    /// `∫ |x|² Φ(x) dx`, twice the second moment of `φ`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            Autocorrelation::Gaussian { d, std } => d as f64 * std * std,
            Autocorrelation::Tabulated { d, scale, .. } => {
                2.0 * bump_constants(d).second_moment * scale * scale
            }
        }
    }

    fn dim(&self) -> usize {
        match *self {
            Autocorrelation::Gaussian { d, .. } | Autocorrelation::Tabulated { d, .. } => d,
        }
    }
}

const PHI_TABLE_POINTS: usize = 513;

fn unit_bump_autocorrelation(d: usize) -> &'static HermiteTable {
    static CACHE: [OnceLock<HermiteTable>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CACHE[d - 1].get_or_init(|| {
        let n = PHI_TABLE_POINTS;
        let h = 2.0 / (n - 1) as f64;
        let tol = Tolerance::new(1e-12, 1e-15);
        let xs: Vec<f64> = (0..n).map(|i| h * i as f64).collect();
        let data: Vec<(f64, f64)> = xs
            .par_iter()
            .map(|&t| {
                radial_convolution(
                    |s| unit_bump(s, d),
                    1.0,
                    |s| unit_bump(s, d),
                    |s| unit_bump_derivative(s, d),
                    1.0,
                    t,
                    d,
                    tol,
                )
                .expect("bump autocorrelation quadrature")
            })
            .collect();
        let mut f: Vec<f64> = data.iter().map(|p| p.0).collect();
        let mut d1: Vec<f64> = data.iter().map(|p| p.1).collect();
        f[n - 1] = 0.0;
        d1[0] = 0.0;
        d1[n - 1] = 0.0;
        // Φ' is odd about 0 and vanishes beyond 2: extend and difference.
        let mut ext = vec![-d1[2], -d1[1]];
        ext.extend_from_slice(&d1);
        ext.extend_from_slice(&[0.0, 0.0]);
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                let j = i + 2;
                (ext[j - 2] - 8.0 * ext[j - 1] + 8.0 * ext[j + 1] - ext[j + 2]) / (12.0 * h)
            })
            .collect();
        HermiteTable::new(Knots::Uniform { x0: 0.0, h }, xs, f, d1, d2)
    })
}

/// Spherical means of `g(|x - y|)` and of the radial component of
/// `∇_x g(|x - y|)` over `|y| = ρ`, for `|x| = r` and `g` vanishing beyond
/// `g_support`.
fn spherical_means<G, GD>(
    g: &G,
    gd: &GD,
    g_support: f64,
    r: f64,
    rho: f64,
    d: usize,
    want_derivative: bool,
    tol: Tolerance,
) -> Result<f64, QuadratureError>
where
    G: Fn(f64) -> f64,
    GD: Fn(f64) -> f64,
{
    if r == 0.0 {
        return Ok(if want_derivative { 0.0 } else { g(rho) });
    }
    match d {
        1 => {
            let near = (r - rho).abs();
            Ok(if want_derivative {
                0.5 * (gd(near) * (r - rho).signum() + gd(r + rho))
            } else {
                0.5 * (g(near) + g(r + rho))
            })
        }
        2 => {
            if (r - rho).abs() >= g_support {
                return Ok(0.0);
            }
            let theta_max = if r + rho <= g_support {
                PI
            } else {
                ((r * r + rho * rho - g_support * g_support) / (2.0 * r * rho))
                    .clamp(-1.0, 1.0)
                    .acos()
            };
            let dist = |theta: f64| {
                let s = (0.5 * theta).sin();
                ((r - rho) * (r - rho) + 4.0 * r * rho * s * s).sqrt()
            };
            let v = if want_derivative {
                integrate(
                    |theta: f64| {
                        let t = dist(theta);
                        if t == 0.0 {
                            0.0
                        } else {
                            gd(t) * (r - rho * theta.cos()) / t
                        }
                    },
                    0.0,
                    theta_max,
                    tol,
                )?
            } else {
                integrate(|theta: f64| g(dist(theta)), 0.0, theta_max, tol)?
            };
            Ok(v / PI)
        }
        3 => {
            let lo = (r - rho).abs();
            let hi = (r + rho).min(g_support);
            if lo >= hi {
                return Ok(0.0);
            }
            let v = if want_derivative {
                integrate(
                    |t: f64| gd(t) * (r * r + (t - rho) * (t + rho)) / (2.0 * r),
                    lo,
                    hi,
                    tol,
                )?
            } else {
                integrate(|t: f64| g(t) * t, lo, hi, tol)?
            };
            Ok(v / (2.0 * r * rho))
        }
        _ => panic!("unsupported dimension {d}"),
    }
}

/// `(f * g)(r)` and its radial derivative for radial `f` supported in
/// `[0, f_support]` and radial `g` (with derivative `gd`) supported in
/// `[0, g_support]`. The derivative is taken on the `g` side, so `f` may be
/// singular at the origin as long as `f(|x|)` is locally integrable.
#[allow(clippy::too_many_arguments)]
pub fn radial_convolution<F, G, GD>(
    f: F,
    f_support: f64,
    g: G,
    gd: GD,
    g_support: f64,
    r: f64,
    d: usize,
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
    GD: Fn(f64) -> f64,
{
    let lo = (r - g_support).max(0.0);
    let hi = (r + g_support).min(f_support);
    if lo >= hi {
        return Ok((0.0, 0.0));
    }
    let breaks = [r, g_support - r, r - g_support];
    // Inner integrals far out in the tail of g are negligible; bound their
    // absolute accuracy by the overall size of g and g'.
    let samples = 64;
    let (mut g_scale, mut gd_scale) = (0.0f64, 0.0f64);
    for k in 0..=samples {
        let t = g_support.min(50.0) * k as f64 / samples as f64;
        g_scale = g_scale.max(g(t).abs());
        gd_scale = gd_scale.max(gd(t).abs());
    }
    let area = sphere_area(d);
    let mut out = [0.0; 2];
    for (slot, want_derivative) in [(0, false), (1, true)] {
        if want_derivative && r == 0.0 {
            continue;
        }
        let scale = if want_derivative { gd_scale } else { g_scale };
        let inner_tol = Tolerance {
            rel: tol.rel * 1e-2,
            abs: tol.rel * 1e-4 * scale,
            max_intervals: tol.max_intervals,
        };
        let mut failure: Option<QuadratureError> = None;
        let v = integrate_with_breaks(
            |rho: f64| {
                if failure.is_some() {
                    return 0.0;
                }
                match spherical_means(&g, &gd, g_support, r, rho, d, want_derivative, inner_tol) {
                    Ok(m) if m == 0.0 => 0.0,
                    Ok(m) => f(rho) * rho.powi(d as i32 - 1) * m,
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                }
            },
            lo,
            hi,
            &breaks,
            tol,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        out[slot] = area * v;
    }
    Ok((out[0], out[1]))
}

/// `e^-z sinh(z) / z`.
fn scaled_sinhc(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        -(-2.0 * z).exp_m1() / (2.0 * z)
    }
}

/// `e^-z (z cosh z - sinh z) / z²`, the scaled derivative of `sinh(z)/z`.
fn scaled_sinhc_derivative(z: f64) -> f64 {
    if z < 0.5 {
        // sum_{k>=1} 2k z^(2k-1) / (2k+1)!
        let z2 = z * z;
        let mut power = z;
        let mut fact = 6.0;
        let mut sum = 0.0;
        for k in 1..=10 {
            sum += 2.0 * k as f64 * power / fact;
            power *= z2;
            let m = (2 * k + 2) as f64;
            fact *= m * (m + 1.0);
        }
        sum * (-z).exp()
    } else {
        let e = (-2.0 * z).exp();
        (z * (1.0 + e) - (1.0 - e)) / (2.0 * z * z)
    }
}

/// `(f * G_s)(r)` and its radial derivative for a centered Gaussian `G_s`
/// with per-coordinate standard deviation `s`. The angular average is done
/// in closed form (hyperbolic in d=3, Bessel in d=2, two-point in d=1); the
/// remaining radial integral is truncated at ten standard deviations.
pub fn gaussian_radial_convolution<F: Fn(f64) -> f64>(
    f: F,
    s: f64,
    r: f64,
    d: usize,
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError> {
    let lo = (r - 10.0 * s).max(0.0);
    let hi = r + 10.0 * s;
    let s2 = s * s;
    let breaks = [r];
    let gauss = |rho: f64| (-(r - rho) * (r - rho) / (2.0 * s2)).exp();
    let (value, deriv) = match d {
        1 => {
            let c = 1.0 / (s * (2.0 * PI).sqrt());
            let far = |rho: f64| (-(r + rho) * (r + rho) / (2.0 * s2)).exp();
            let v = integrate_with_breaks(|rho| f(rho) * (gauss(rho) + far(rho)), lo, hi, &breaks, tol)?;
            let dv = if r == 0.0 {
                0.0
            } else {
                integrate_with_breaks(
                    |rho| f(rho) * (-(r - rho) * gauss(rho) - (r + rho) * far(rho)),
                    lo,
                    hi,
                    &breaks,
                    tol,
                )? / s2
            };
            (c * v, c * dv)
        }
        2 => {
            let v = integrate_with_breaks(
                |rho| rho * f(rho) * gauss(rho) * i0e(r * rho / s2),
                lo,
                hi,
                &breaks,
                tol,
            )?;
            let dv = if r == 0.0 {
                0.0
            } else {
                integrate_with_breaks(
                    |rho| {
                        let z = r * rho / s2;
                        rho * f(rho) * gauss(rho) * (rho * i1e(z) - r * i0e(z))
                    },
                    lo,
                    hi,
                    &breaks,
                    tol,
                )?
            };
            (v / s2, dv / (s2 * s2))
        }
        3 => {
            let c = 2.0 / (s * (2.0 * PI).sqrt());
            let v = integrate_with_breaks(
                |rho| rho * rho * f(rho) * gauss(rho) * scaled_sinhc(r * rho / s2),
                lo,
                hi,
                &breaks,
                tol,
            )?;
            let dv = if r == 0.0 {
                0.0
            } else {
                integrate_with_breaks(
                    |rho| {
                        let z = r * rho / s2;
                        rho * rho
                            * f(rho)
                            * gauss(rho)
                            * (rho * scaled_sinhc_derivative(z) - r * scaled_sinhc(z))
                    },
                    lo,
                    hi,
                    &breaks,
                    tol,
                )?
            };
            (c * v / s2, c * dv / (s2 * s2))
        }
        _ => panic!("unsupported dimension {d}"),
    };
    Ok((value, deriv))
}

/// Convolution of the radial function `f` with `Φ` at radius `r`:
/// `(value, d/dr value)`.
pub fn convolve_with(
    f: &dyn Fn(f64) -> f64,
    phi: &Autocorrelation,
    r: f64,
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError> {
    let d = phi.dim();
    match *phi {
        Autocorrelation::Gaussian { std, .. } => gaussian_radial_convolution(f, std, r, d, tol),
        Autocorrelation::Tabulated { .. } => radial_convolution(
            f,
            f64::INFINITY,
            |t| phi.value(t),
            |t| phi.derivative(t),
            phi.support_radius(),
            r,
            d,
            tol,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulationParams {
    pub n_tab: usize,
    /// `r_min = r_min_factor * ε`.
    pub r_min_factor: f64,
    pub r_max: f64,
    /// Requested far-field switch `tail_factor * ε`, doubled until the
    /// analytic tail is verified.
    pub tail_factor: f64,
    pub rel_tol: f64,
    pub tail_tol: f64,
}

impl Default for TabulationParams {
    fn default() -> Self {
        TabulationParams {
            n_tab: 2048,
            r_min_factor: 1e-4,
            r_max: 1e3,
            tail_factor: 50.0,
            rel_tol: 1e-9,
            tail_tol: 1e-8,
        }
    }
}

impl TabulationParams {
    fn validate(&self, eps: f64) -> Result<(), MollifyError> {
        if self.n_tab < 16 {
            return Err(MollifyError::Params(format!("n_tab must be >= 16, got {}", self.n_tab)));
        }
        let r_min = self.r_min_factor * eps;
        if !(r_min > 0.0 && r_min < self.r_max && self.tail_factor * eps > r_min) {
            return Err(MollifyError::Params(format!(
                "need 0 < r_min < tail switch and r_min < r_max (r_min = {r_min}, r_max = {})",
                self.r_max
            )));
        }
        if !(self.rel_tol > 0.0 && self.tail_tol > 0.0) {
            return Err(MollifyError::Params("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Far-field model `f + c Δf` with `c = M₂(Φ_ε) / 2d`; exact for quadratic
/// and harmonic parts.
#[derive(Debug, Clone)]
struct Tail {
    part: RadialPart,
    coeff: f64,
    d: usize,
}

impl Tail {
    fn eval(&self, r: f64) -> (f64, f64) {
        (
            self.part.value(r) + self.coeff * self.part.laplacian(r, self.d),
            self.part.derivative(r) + self.coeff * self.part.laplacian_derivative(r, self.d),
        )
    }
}

#[derive(Debug, Clone)]
struct PartTable {
    table: HermiteTable,
    origin: f64,
    blend: (f64, f64),
    tail_switch: f64,
    tail: Tail,
}

#[derive(Debug, Clone)]
enum MollifiedPart {
    Zero,
    /// `|x|²/2 * Φ_ε = |x|²/2 + shift`
    HalfSquare { shift: f64 },
    Tabulated(PartTable),
}

impl MollifiedPart {
    fn eval(&self, r: f64) -> (f64, f64) {
        match self {
            MollifiedPart::Zero => (0.0, 0.0),
            MollifiedPart::HalfSquare { shift } => (0.5 * r * r + shift, r),
            MollifiedPart::Tabulated(t) => {
                let r_min = t.table.x_min();
                if r < r_min {
                    let (a, b) = t.blend;
                    let r2 = r * r;
                    (t.origin + a * r2 + b * r2 * r2, 2.0 * a * r + 4.0 * b * r2 * r)
                } else if r >= t.tail_switch {
                    t.tail.eval(r)
                } else {
                    t.table.eval(r)
                }
            }
        }
    }

    fn origin(&self) -> f64 {
        match self {
            MollifiedPart::Zero => 0.0,
            MollifiedPart::HalfSquare { shift } => *shift,
            MollifiedPart::Tabulated(t) => t.origin,
        }
    }

    fn tail_switch(&self) -> f64 {
        match self {
            MollifiedPart::Tabulated(t) => t.tail_switch,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub max_rel_error: f64,
    pub worst_radius: f64,
    pub nodes: usize,
}

/// The regularized kernel `K_ε` tabulated on a log-spaced radial grid.
#[derive(Debug, Clone)]
pub struct MollifiedKernel {
    base: KernelSpec,
    mollifier: MollifierSpec,
    params: TabulationParams,
    report: HypothesisReport,
    radii: Vec<f64>,
    values: Vec<f64>,
    dvalues: Vec<f64>,
    origin_value: f64,
    lambda_estimate: f64,
    tail_switch_radius: f64,
    attractive: MollifiedPart,
    repulsive: MollifiedPart,
}

fn log_grid(params: &TabulationParams, eps: f64) -> (f64, f64, Vec<f64>) {
    let u0 = (params.r_min_factor * eps).ln();
    let u1 = params.r_max.ln();
    let du = (u1 - u0) / (params.n_tab - 1) as f64;
    let radii = (0..params.n_tab).map(|i| (u0 + du * i as f64).exp()).collect();
    (u0, du, radii)
}

fn tabulate_part(
    part: &RadialPart,
    phi: &Autocorrelation,
    eps: f64,
    params: &TabulationParams,
) -> Result<MollifiedPart, MollifyError> {
    if part.is_zero() {
        return Ok(MollifiedPart::Zero);
    }
    if part.is_half_square() {
        return Ok(MollifiedPart::HalfSquare {
            shift: 0.5 * phi.second_moment(),
        });
    }
    let d = phi.dim();
    let tol = Tolerance::new(params.rel_tol, 1e-300);
    let f = |rho: f64| part.value(rho);
    let conv = |r: f64| {
        convolve_with(&f, phi, r, tol).map_err(|source| MollifyError::Tabulation { radius: r, source })
    };
    let tail = Tail {
        part: part.clone(),
        coeff: phi.second_moment() / (2.0 * d as f64),
        d,
    };

    let (u0, du, radii) = log_grid(params, eps);
    let mut switch = params.tail_factor * eps;
    loop {
        if switch >= params.r_max {
            warn!("analytic tail not verified below r_max = {}; tabulating to r_max", params.r_max);
            switch = params.r_max;
            break;
        }
        let (v, dv) = conv(switch)?;
        let (tv, tdv) = tail.eval(switch);
        let ok_v = (v - tv).abs() <= params.tail_tol * v.abs().max(1.0);
        let ok_d = (dv - tdv).abs() <= params.tail_tol * dv.abs().max(1.0);
        if ok_v && ok_d {
            break;
        }
        switch *= 2.0;
    }
    let last = radii
        .iter()
        .position(|&r| r >= switch)
        .unwrap_or(radii.len() - 1)
        .max(5);
    let active = &radii[..=last];
    let data: Vec<(f64, f64)> = active
        .par_iter()
        .map(|&r| conv(r))
        .collect::<Result<_, _>>()?;
    let f_vals: Vec<f64> = data.iter().map(|p| p.0).collect();
    let d1: Vec<f64> = data.iter().map(|p| p.1).collect();
    let d1_u = five_point_derivative(&d1, du);
    let d2: Vec<f64> = d1_u.iter().zip(active).map(|(g, r)| g / r).collect();
    let origin = conv(0.0)?.0;
    let r_min = active[0];
    let delta = f_vals[0] - origin;
    let slope = d1[0];
    let b = (0.5 * slope * r_min - delta) / r_min.powi(4);
    let a = (slope - 4.0 * b * r_min.powi(3)) / (2.0 * r_min);
    Ok(MollifiedPart::Tabulated(PartTable {
        table: HermiteTable::new(Knots::Log { u0, du }, active.to_vec(), f_vals, d1, d2),
        origin,
        blend: (a, b),
        tail_switch: active[last],
        tail,
    }))
}

impl MollifiedKernel {
    /// Tabulates `K * Φ_ε` for the mollifier `kind` at width `eps`.
    ///
    /// The kernel must satisfy the power-law regime or the general
    /// hypothesis list; the heat mollifier is only paired with power-law
    /// regime kernels.
    pub fn build(
        kernel: &KernelSpec,
        kind: MollifierKind,
        eps: f64,
        params: &TabulationParams,
    ) -> Result<Self, MollifyError> {
        let mollifier = MollifierSpec::new(kind, eps)?;
        params.validate(eps)?;
        let report = kernel.validate()?;
        if kind == MollifierKind::GaussianHeat && !report.power_law_regime() {
            return Err(MollifyError::Pairing(
                "the heat mollifier requires a power-law kernel with 2-d <= p < 0 < q <= 2; \
                 use the compactly supported bump"
                    .into(),
            ));
        }
        let d = kernel.dim();
        let phi = autocorrelation(&mollifier, d);
        let (attr, rep) = kernel.split();
        let attractive = tabulate_part(&attr, &phi, eps, params)?;
        let repulsive = tabulate_part(&rep, &phi, eps, params)?;

        let (_, du, radii) = log_grid(params, eps);
        let (values, dvalues): (Vec<f64>, Vec<f64>) = radii
            .iter()
            .map(|&r| {
                let (a, da) = attractive.eval(r);
                let (b, db) = repulsive.eval(r);
                (a + b, da + db)
            })
            .unzip();
        let origin_value = attractive.origin() + repulsive.origin();
        let tail_switch_radius = attractive.tail_switch().max(repulsive.tail_switch());

        let second = five_point_derivative(&dvalues, du);
        let mut lambda = f64::INFINITY;
        for i in 0..radii.len() {
            let r = radii[i];
            lambda = lambda.min(second[i] / r).min(dvalues[i] / r);
        }
        let mut mk = MollifiedKernel {
            base: kernel.clone(),
            mollifier,
            params: params.clone(),
            report,
            radii,
            values,
            dvalues,
            origin_value,
            lambda_estimate: 0.0,
            tail_switch_radius,
            attractive,
            repulsive,
        };
        // Curvature across the origin: K_ε''(0) from the even blend.
        let h = 0.5 * mk.radii[0];
        let curvature_at_origin = 2.0 * (mk.value(h) - origin_value) / (h * h);
        mk.lambda_estimate = lambda.min(curvature_at_origin).min(0.0);
        Ok(mk)
    }

    pub fn base(&self) -> &KernelSpec {
        &self.base
    }

    pub fn mollifier(&self) -> &MollifierSpec {
        &self.mollifier
    }

    pub fn eps(&self) -> f64 {
        self.mollifier.width()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn params(&self) -> &TabulationParams {
        &self.params
    }

    pub fn hypotheses(&self) -> &HypothesisReport {
        &self.report
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dvalues(&self) -> &[f64] {
        &self.dvalues
    }

    pub fn origin_value(&self) -> f64 {
        self.origin_value
    }

    /// Sampled lower bound on the Hessian eigenvalues of `K_ε`, clipped at 0.
    pub fn lambda_estimate(&self) -> f64 {
        self.lambda_estimate
    }

    /// `C` in `λ_ε = -C ε^-d`.
    pub fn convexity_constant(&self) -> f64 {
        -self.lambda_estimate * self.eps().powi(self.dim() as i32)
    }

    pub fn tail_switch_radius(&self) -> f64 {
        self.tail_switch_radius
    }

    /// `K_ε(r)`, or `dK_ε/dr` when `derivative` is set.
    pub fn eval(&self, r: f64, derivative: bool) -> f64 {
        let (v, dv) = self.eval_both(r);
        if derivative {
            dv
        } else {
            v
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval_both(r).0
    }

    pub fn derivative(&self, r: f64) -> f64 {
        self.eval_both(r).1
    }

    pub fn eval_both(&self, r: f64) -> (f64, f64) {
        let (a, da) = self.attractive.eval(r);
        let (b, db) = self.repulsive.eval(r);
        (a + b, da + db)
    }

    /// `(K^a_ε(r), K^r_ε(r))`.
    pub fn eval_parts(&self, r: f64) -> (f64, f64) {
        (self.attractive.eval(r).0, self.repulsive.eval(r).0)
    }

    /// `(dK^a_ε/dr, dK^r_ε/dr)`.
    pub fn eval_part_derivatives(&self, r: f64) -> (f64, f64) {
        (self.attractive.eval(r).1, self.repulsive.eval(r).1)
    }

    /// `∇K_ε(x)`; zero at the origin.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        if r == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = self.derivative(r) / r;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
    }

    /// Compares `dvalues` with five-point differences of `values` (in
    /// `ln r`) on interior nodes `0.01 ε <= r < tail switch`. Closer to the
    /// origin `K_ε` is flat to within rounding and differences of values
    /// carry no information. Relative errors use the floor
    /// `1e-6 max|dK_ε/dr|` so the sign change at the critical radius does
    /// not divide by zero.
    pub fn derivative_consistency(&self) -> DerivativeCheck {
        let r = &self.radii;
        let du = (r[1] / r[0]).ln();
        let v = &self.values;
        let floor = 1e-6 * self.dvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lo = 0.01 * self.eps();
        let mut check = DerivativeCheck {
            max_rel_error: 0.0,
            worst_radius: f64::NAN,
            nodes: 0,
        };
        for i in 2..r.len() - 2 {
            if r[i] < lo || r[i + 2] >= self.tail_switch_radius {
                continue;
            }
            let fd = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * du * r[i]);
            let exact = self.dvalues[i];
            let rel = (fd - exact).abs() / (exact.abs() + floor);
            check.nodes += 1;
            if rel > check.max_rel_error || check.worst_radius.is_nan() {
                check.max_rel_error = rel;
                check.worst_radius = r[i];
            }
        }
        check
    }

    /// Radius where `dK_ε/dr` changes sign from negative to positive.
    pub fn critical_radius(&self) -> Option<f64> {
        let i = self
            .dvalues
            .windows(2)
            .position(|w| w[0] < 0.0 && w[1] >= 0.0)?;
        let (mut lo, mut hi) = (self.radii[i], self.radii[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.derivative(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(if self.derivative(lo).abs() < self.derivative(hi).abs() {
            lo
        } else {
            hi
        })
    }
}
