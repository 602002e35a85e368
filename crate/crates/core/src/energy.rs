//! Interaction energies of particle measures, the blob-method velocity
//! field, the metric slope and a grid quadrature for analytic densities.
//!
//! Pair sums split the outer index into a fixed number of interleaved
//! chunks, each accumulated in index order, and combine the chunk partials
//! in chunk order. The result is bit-identical whether the chunks run on
//! one thread or many.

use std::f64::consts::SQRT_2;

use log::warn;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::kernels::{KernelSpec, RadialPart};
use crate::measures::{DensitySpec, ParticleMeasure};
use crate::mollification::{MollifiedKernel, MollifierSpec};
use crate::quadrature::Tolerance;
use crate::radial::{ball_volume, shell_integral, sphere_area};
use crate::rng::SeededRng;

const CHUNKS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("the diagonal i = j term is infinite for an unmollified kernel; use ExcludeDiagonal")]
    DiagonalNeedsMollifier,
    #[error("measure lives in dimension {measure} but the kernel in dimension {kernel}")]
    DimensionMismatch { measure: usize, kernel: usize },
    #[error("omega is defined for x >= 0, got {0}")]
    Domain(f64),
    #[error("reference energy: {0}")]
    Reference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalPolicy {
    ExcludeDiagonal,
    IncludeDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub attractive: f64,
    pub repulsive: f64,
    pub diagonal_policy: DiagonalPolicy,
    /// Set when the energy of a single particle was requested without its
    /// diagonal term; the returned value 0 is a convention.
    pub degenerate: bool,
}

/// Either the analytic kernel or its tabulated regularization.
#[derive(Debug, Clone, Copy)]
pub enum EnergyKernel<'a> {
    Exact(&'a KernelSpec),
    Mollified(&'a MollifiedKernel),
}

impl<'a> From<&'a KernelSpec> for EnergyKernel<'a> {
    fn from(k: &'a KernelSpec) -> Self {
        EnergyKernel::Exact(k)
    }
}

impl<'a> From<&'a MollifiedKernel> for EnergyKernel<'a> {
    fn from(k: &'a MollifiedKernel) -> Self {
        EnergyKernel::Mollified(k)
    }
}

impl EnergyKernel<'_> {
    fn dim(&self) -> usize {
        match self {
            EnergyKernel::Exact(k) => k.dim(),
            EnergyKernel::Mollified(k) => k.dim(),
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs `row(i, acc)` for every `i` over interleaved chunks and returns the
/// chunk partials summed in chunk order.
fn chunked_sum<const W: usize, F>(n: usize, row: F) -> [f64; W]
where
    F: Fn(usize, &mut [f64; W]) + Sync,
{
    let chunks = CHUNKS.min(n.max(1));
    let partials: Vec<[f64; W]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = [0.0; W];
            let mut i = c;
            while i < n {
                row(i, &mut acc);
                i += chunks;
            }
            acc
        })
        .collect();
    let mut total = [0.0; W];
    for p in partials {
        for k in 0..W {
            total[k] += p[k];
        }
    }
    total
}

/// `Σ_{i,j} K(x_i - x_j) m_i m_j`, each unordered pair evaluated once.
pub fn energy_particles<'a>(
    mu: &ParticleMeasure,
    kernel: impl Into<EnergyKernel<'a>>,
    policy: DiagonalPolicy,
) -> Result<EnergyBreakdown, EnergyError> {
    let kernel = kernel.into();
    if kernel.dim() != mu.dim() {
        return Err(EnergyError::DimensionMismatch {
            measure: mu.dim(),
            kernel: kernel.dim(),
        });
    }
    if policy == DiagonalPolicy::IncludeDiagonal && matches!(kernel, EnergyKernel::Exact(_)) {
        return Err(EnergyError::DiagonalNeedsMollifier);
    }
    let n = mu.len();
    if n == 1 && policy == DiagonalPolicy::ExcludeDiagonal {
        warn!("energy of a single particle without its diagonal term is reported as 0");
        return Ok(EnergyBreakdown {
            total: 0.0,
            attractive: 0.0,
            repulsive: 0.0,
            diagonal_policy: policy,
            degenerate: true,
        });
    }
    let w = mu.weights();
    let split = match kernel {
        EnergyKernel::Exact(k) => Some(k.split()),
        EnergyKernel::Mollified(_) => None,
    };
    let parts = |r: f64| -> (f64, f64) {
        match (&kernel, &split) {
            (EnergyKernel::Mollified(mk), _) => mk.eval_parts(r),
            (_, Some((a, b))) => (a.value(r), b.value(r)),
            _ => unreachable!(),
        }
    };
    let [attr_off, rep_off] = chunked_sum::<2, _>(n, |i, acc| {
        let xi = mu.position(i);
        let mut row = [0.0; 2];
        for j in i + 1..n {
            let (a, b) = parts(distance(xi, mu.position(j)));
            row[0] += a * w[j];
            row[1] += b * w[j];
        }
        acc[0] += row[0] * w[i];
        acc[1] += row[1] * w[i];
    });
    let (mut attractive, mut repulsive) = (2.0 * attr_off, 2.0 * rep_off);
    if policy == DiagonalPolicy::IncludeDiagonal {
        let (a0, b0) = parts(0.0);
        let m2: f64 = w.iter().map(|m| m * m).sum();
        attractive += a0 * m2;
        repulsive += b0 * m2;
    }
    Ok(EnergyBreakdown {
        total: attractive + repulsive,
        attractive,
        repulsive,
        diagonal_policy: policy,
        degenerate: false,
    })
}

/// `v_i = -2 Σ_j ∇K_ε(x_i - x_j) m_j`, flattened like the positions.
pub fn velocity_field(mu: &ParticleMeasure, mk: &MollifiedKernel) -> Vec<f64> {
    let n = mu.len();
    let d = mu.dim();
    let w = mu.weights();
    let chunks = CHUNKS.min(n.max(1));
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; n * d];
            let mut diff = [0.0; 3];
            let mut i = c;
            while i < n {
                let xi = mu.position(i);
                for j in i + 1..n {
                    let xj = mu.position(j);
                    let mut r2 = 0.0;
                    for k in 0..d {
                        diff[k] = xi[k] - xj[k];
                        r2 += diff[k] * diff[k];
                    }
                    if r2 == 0.0 {
                        continue;
                    }
                    let r = r2.sqrt();
                    let s = mk.derivative(r) / r;
                    for k in 0..d {
                        let g = s * diff[k];
                        acc[i * d + k] += g * w[j];
                        acc[j * d + k] -= g * w[i];
                    }
                }
                i += chunks;
            }
            acc
        })
        .collect();
    let mut v = vec![0.0; n * d];
    for p in &partials {
        for (o, x) in v.iter_mut().zip(p) {
            *o += x;
        }
    }
    for o in &mut v {
        *o *= -2.0;
    }
    v
}

/// `Σ m_i |v_i|²`, which equals the squared metric slope.
pub fn kinetic_energy(mu: &ParticleMeasure, velocity: &[f64]) -> f64 {
    let d = mu.dim();
    mu.weights()
        .iter()
        .enumerate()
        .map(|(i, m)| m * velocity[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `2 ‖∇K_ε * μ‖_{L²(μ)}`.
pub fn metric_slope(mu: &ParticleMeasure, mk: &MollifiedKernel) -> f64 {
    kinetic_energy(mu, &velocity_field(mu, mk)).sqrt()
}

/// The modulus `ω`: `x |log x|` up to `e^{-1-√2}`, then
/// `sqrt(x² + 2(1+√2) e^{-1-√2} x)`.
pub fn omega(x: f64) -> Result<f64, EnergyError> {
    if !(x >= 0.0) {
        return Err(EnergyError::Domain(x));
    }
    let a = 1.0 + SQRT_2;
    let brk = (-a).exp();
    if x == 0.0 {
        Ok(0.0)
    } else if x <= brk {
        Ok(x * x.ln().abs())
    } else {
        Ok((x * x + 2.0 * a * brk * x).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Estimates `E(μ * φ_ε)` from `samples` independent pairs `(X, Y)` drawn
/// from `μ * φ_ε`, averaging `K(X - Y)`.
pub fn monte_carlo_energy(
    mu: &ParticleMeasure,
    mollifier: &MollifierSpec,
    kernel: &KernelSpec,
    samples: usize,
    rng: &mut SeededRng,
) -> MonteCarloEstimate {
    let d = mu.dim();
    let cumulative: Vec<f64> = mu
        .weights()
        .iter()
        .scan(0.0, |s, w| {
            *s += w;
            Some(*s)
        })
        .collect();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut zx = vec![0.0; d];
    let mut zy = vec![0.0; d];
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        let i = rng.pick(&cumulative);
        let j = rng.pick(&cumulative);
        mollifier.sample(rng, &mut zx);
        mollifier.sample(rng, &mut zy);
        for k in 0..d {
            x[k] = mu.position(i)[k] + zx[k];
            y[k] = mu.position(j)[k] + zy[k];
        }
        let v = kernel.value_unchecked(distance(&x, &y));
        sum += v;
        sum2 += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples,
    }
}

/// Cell resolution of [`energy_density_reference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceQuadrature {
    /// Cells along the longest side of the bounding box.
    pub cells: usize,
    /// Sub-samples per axis used to average the density over a cell.
    pub subsamples: usize,
}

impl ReferenceQuadrature {
    pub fn new(cells: usize) -> Self {
        ReferenceQuadrature { cells, subsamples: 4 }
    }
}

/// Mean of a kernel part over the ball of radius `a` about the origin.
fn ball_mean(part: &RadialPart, a: f64, d: usize) -> Result<f64, EnergyError> {
    let vol = ball_volume(d) * a.powi(d as i32);
    let area = sphere_area(d);
    let df = d as f64;
    match *part {
        RadialPart::Zero => Ok(0.0),
        RadialPart::Power { coeff, exponent } => {
            if exponent <= -df {
                return Err(EnergyError::Reference(format!(
                    "r^{exponent} is not locally integrable in dimension {d}"
                )));
            }
            Ok(coeff * area * a.powf(exponent + df) / (exponent + df) / vol)
        }
        RadialPart::Log { coeff } => {
            let ad = a.powi(d as i32);
            Ok(coeff * area * (ad * a.ln() / df - ad / (df * df)) / vol)
        }
        _ => shell_integral(|r| part.value(r), 0.0, a, d, &[], Tolerance::new(1e-12, 1e-15))
            .map(|v| v / vol)
            .map_err(|e| EnergyError::Reference(e.to_string())),
    }
}

fn fft_nd(data: &mut [Complex<f64>], shape: &[usize], inverse: bool, planner: &mut FftPlanner<f64>) {
    let total: usize = shape.iter().product();
    let mut stride = 1;
    for axis in (0..shape.len()).rev() {
        let len = shape[axis];
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        let mut line = vec![Complex::new(0.0, 0.0); len];
        let outer = total / (len * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                for k in 0..len {
                    line[k] = data[base + k * stride];
                }
                fft.process(&mut line);
                for k in 0..len {
                    data[base + k * stride] = line[k];
                }
            }
        }
        stride *= len;
    }
}

/// `∬ K(x - y) ρ(x) ρ(y) dx dy` by midpoint quadrature on a cubic grid.
///
/// Cell masses are cell averages of `ρ` (normalized to total mass one).
/// The pair sum is `Σ_o K(o h) A(o)` with `A` the autocorrelation of the
/// cell masses, computed by a zero-padded FFT. On the zero offset the kernel
/// is replaced by its mean over the ball with the cell's volume, which is
/// closed form for powers and logarithms.
pub fn energy_density_reference(
    rho: &DensitySpec,
    kernel: &KernelSpec,
    quad: ReferenceQuadrature,
) -> Result<f64, EnergyError> {
    let d = rho.dim();
    if kernel.dim() != d {
        return Err(EnergyError::DimensionMismatch {
            measure: d,
            kernel: kernel.dim(),
        });
    }
    if quad.cells < 2 || quad.subsamples < 1 {
        return Err(EnergyError::Reference("need at least 2 cells and 1 sub-sample".into()));
    }
    let (lo, hi) = rho.bounding_box();
    let longest = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let h = longest / quad.cells as f64;
    let counts: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (((b - a) / h) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let padded: Vec<usize> = counts.iter().map(|c| 2 * c).collect();
    let total: usize = padded.iter().product();
    let ncells: usize = counts.iter().product();

    // Cell masses, laid out in the padded array (row-major, last axis fastest).
    let s = quad.subsamples;
    let sub_total = s.pow(d as u32);
    let masses: Vec<(usize, f64)> = (0..ncells)
        .into_par_iter()
        .map(|c| {
            let mut idx = vec![0usize; d];
            let mut rem = c;
            for k in (0..d).rev() {
                idx[k] = rem % counts[k];
                rem /= counts[k];
            }
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            for t in 0..sub_total {
                let mut r = t;
                for k in 0..d {
                    let sk = r % s;
                    r /= s;
                    x[k] = lo[k] + h * (idx[k] as f64 + (sk as f64 + 0.5) / s as f64);
                }
                acc += rho.density(&x);
            }
            let mut flat = 0;
            for k in 0..d {
                flat = flat * padded[k] + idx[k];
            }
            (flat, acc / sub_total as f64)
        })
        .collect();
    let mass: f64 = masses.iter().map(|m| m.1).sum();
    if !(mass > 0.0) {
        return Err(EnergyError::Reference("density has no mass on the grid".into()));
    }
    let mut buf = vec![Complex::new(0.0, 0.0); total];
    for &(flat, m) in &masses {
        buf[flat] = Complex::new(m / mass, 0.0);
    }
    let mut planner = FftPlanner::new();
    fft_nd(&mut buf, &padded, false, &mut planner);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    fft_nd(&mut buf, &padded, true, &mut planner);

    let (attr, rep) = kernel.split();
    let a = (h.powi(d as i32) / ball_volume(d)).powf(1.0 / d as f64);
    let centre = ball_mean(&attr, a, d)? + ball_mean(&rep, a, d)?;
    let scale = 1.0 / total as f64;
    let energy: f64 = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut r2 = 0.0;
            for k in (0..d).rev() {
                let i = rem % padded[k];
                rem /= padded[k];
                let o = if i >= counts[k] { i as f64 - padded[k] as f64 } else { i as f64 };
                r2 += (o * h) * (o * h);
            }
            let kv = if r2 == 0.0 { centre } else { kernel.value_unchecked(r2.sqrt()) };
            kv * buf[flat].re * scale
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(energy)
}
