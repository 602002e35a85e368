//! Discrete probability measures `Σ m_i δ_{x_i}`, their initialization from
//! analytic densities, moments, mollification and CSV I/O.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use log::warn;
use thiserror::Error;

use crate::mollification::MollifierSpec;
use crate::quadrature::{integrate, Tolerance};
use crate::radial::{ball_volume, norm, sphere_area};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("density is negative ({value:e}) at {point:?}")]
    NegativeDensity { point: Vec<f64>, value: f64 },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    /// `positions` is row-major, `N × d`.
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if !(1..=3).contains(&dim) {
            return Err(MeasureError::Invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if weights.is_empty() || positions.len() != dim * weights.len() {
            return Err(MeasureError::Invalid(format!(
                "{} coordinates do not describe {} points in dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(MeasureError::Invalid(format!("negative or NaN weight {w}")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::Invalid("non-finite position".into()));
        }
        let total: f64 = weights.iter().sum();
        // Summing N equal weights 1/N drifts by up to about N ulps.
        let tol = 1e-12f64.max(4.0 * weights.len() as f64 * f64::EPSILON);
        if (total - 1.0).abs() > tol {
            return Err(MeasureError::Invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(ParticleMeasure {
            dim,
            positions,
            weights,
        })
    }

    /// Rescales nonnegative `weights` to unit mass.
    pub fn normalized(dim: usize, positions: Vec<f64>, mut weights: Vec<f64>) -> Result<Self, MeasureError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(MeasureError::Invalid(format!("total weight {total} cannot be normalized")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(dim, positions, weights)
    }

    /// Equal weights `1/N`.
    pub fn uniform(dim: usize, positions: Vec<f64>) -> Result<Self, MeasureError> {
        let n = positions.len() / dim.max(1);
        Self::new(dim, positions, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self::new(point.len(), point.to_vec(), vec![1.0]).expect("valid Dirac mass")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same weights at new positions (used by integrators).
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self, MeasureError> {
        if positions.len() != self.positions.len() {
            return Err(MeasureError::Invalid("position count changed".into()));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::Invalid("non-finite position".into()));
        }
        Ok(ParticleMeasure {
            dim: self.dim,
            positions,
            weights: self.weights.clone(),
        })
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.dim);
        let positions = self
            .positions
            .chunks(self.dim)
            .flat_map(|x| x.iter().zip(v).map(|(a, b)| a + b))
            .collect();
        ParticleMeasure {
            dim: self.dim,
            positions,
            weights: self.weights.clone(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.positions
            .chunks(self.dim)
            .zip(&self.weights)
            .map(|(x, w)| w * x.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn center_of_mass(&self) -> Vec<f64> {
        let mut com = vec![0.0; self.dim];
        for (x, w) in self.positions.chunks(self.dim).zip(&self.weights) {
            for (c, xi) in com.iter_mut().zip(x) {
                *c += w * xi;
            }
        }
        com
    }

    /// `max_i |x_i - com|`.
    pub fn support_radius(&self) -> f64 {
        let com = self.center_of_mass();
        self.positions
            .chunks(self.dim)
            .map(|x| {
                x.iter()
                    .zip(&com)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "{},w", header.join(","))?;
        for (x, w) in self.positions.chunks(self.dim).zip(&self.weights) {
            for xi in x {
                write!(out, "{xi:?},")?;
            }
            writeln!(out, "{w:?}")?;
        }
        Ok(())
    }

    /// Reads the format written by [`ParticleMeasure::write_csv`]. Weights
    /// off unit mass by at most 1e-6 are renormalized with a warning.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, MeasureError> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(MeasureError::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = (1..=dim).map(|k| format!("x{k}")).chain(["w".to_string()]).collect();
        if !(1..=3).contains(&dim) || cols != expected {
            return Err(MeasureError::Csv {
                line: 1,
                message: format!("expected header x1[,x2[,x3]],w, got '{header}'"),
            });
        }
        let (mut positions, mut weights) = (Vec::new(), Vec::new());
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(MeasureError::Csv {
                    line: idx + 1,
                    message: format!("expected {} fields, got {}", dim + 1, fields.len()),
                });
            }
            for (k, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| MeasureError::Csv {
                    line: idx + 1,
                    message: format!("'{f}' is not a number"),
                })?;
                if k < dim {
                    positions.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 && (total - 1.0).abs() <= 1e-6 {
            warn!("weights sum to {total}; renormalizing");
            return Self::normalized(dim, positions, weights);
        }
        Self::new(dim, positions, weights)
    }
}

/// A user-supplied density on a bounding box.
#[derive(Clone)]
pub struct CustomDensity {
    pub profile: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Upper bound on the profile, for rejection sampling.
    pub max_value: f64,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("max_value", &self.max_value)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum DensityKind {
    UniformBall { radius: f64 },
    /// `C (1 - |x|²)_+²`
    Figure1Polynomial,
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Custom(CustomDensity),
}

/// A probability density with bounded support; the normalization constant
/// is fixed at construction.
#[derive(Debug, Clone)]
pub struct DensitySpec {
    kind: DensityKind,
    dim: usize,
    constant: f64,
}

fn nested_box_integral(f: &dyn Fn(&[f64]) -> f64, lower: &[f64], upper: &[f64], tol: Tolerance) -> f64 {
    fn rec(f: &dyn Fn(&[f64]) -> f64, lower: &[f64], upper: &[f64], x: &mut Vec<f64>, tol: Tolerance) -> f64 {
        let k = x.len();
        if k == lower.len() {
            return f(x);
        }
        let mut inner = |t: f64| {
            x.push(t);
            let v = rec(f, lower, upper, x, tol);
            x.pop();
            v
        };
        integrate(&mut inner, lower[k], upper[k], tol).unwrap_or_else(|e| e.estimate)
    }
    rec(f, lower, upper, &mut Vec::with_capacity(lower.len()), tol)
}

impl DensitySpec {
    pub fn new(kind: DensityKind, dim: usize) -> Result<Self, MeasureError> {
        if !(1..=3).contains(&dim) {
            return Err(MeasureError::Invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        let constant = match &kind {
            DensityKind::UniformBall { radius } => {
                if !(*radius > 0.0) {
                    return Err(MeasureError::Invalid(format!("ball radius must be positive, got {radius}")));
                }
                1.0 / (ball_volume(dim) * radius.powi(dim as i32))
            }
            DensityKind::Figure1Polynomial => {
                let raw = integrate(
                    |r: f64| (1.0 - r * r).powi(2) * r.powi(dim as i32 - 1),
                    0.0,
                    1.0,
                    Tolerance::new(1e-15, 0.0),
                )
                .expect("polynomial moment");
                1.0 / (sphere_area(dim) * raw)
            }
            DensityKind::UniformBox { lower, upper } => {
                if lower.len() != dim || upper.len() != dim || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                    return Err(MeasureError::Invalid("box bounds must satisfy lower < upper in every axis".into()));
                }
                1.0 / lower.iter().zip(upper).map(|(a, b)| b - a).product::<f64>()
            }
            DensityKind::Custom(c) => {
                if c.lower.len() != dim || c.upper.len() != dim {
                    return Err(MeasureError::Invalid("custom density bounds have the wrong dimension".into()));
                }
                let mass = nested_box_integral(&*c.profile, &c.lower, &c.upper, Tolerance::new(1e-10, 1e-14));
                if !(mass > 0.0) {
                    return Err(MeasureError::Invalid(format!("custom density has mass {mass}")));
                }
                1.0 / mass
            }
        };
        Ok(DensitySpec { kind, dim, constant })
    }

    pub fn uniform_ball(dim: usize, radius: f64) -> Result<Self, MeasureError> {
        Self::new(DensityKind::UniformBall { radius }, dim)
    }

    pub fn figure1(dim: usize) -> Result<Self, MeasureError> {
        Self::new(DensityKind::Figure1Polynomial, dim)
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The normalization constant (`C` for the polynomial disk profile).
    pub fn normalization(&self) -> f64 {
        self.constant
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::UniformBall { radius } => {
                if norm(x) <= *radius {
                    self.constant
                } else {
                    0.0
                }
            }
            DensityKind::Figure1Polynomial => {
                let s = 1.0 - x.iter().map(|v| v * v).sum::<f64>();
                if s > 0.0 {
                    self.constant * s * s
                } else {
                    0.0
                }
            }
            DensityKind::UniformBox { lower, upper } => {
                let inside = x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v >= a && v <= b);
                if inside {
                    self.constant
                } else {
                    0.0
                }
            }
            DensityKind::Custom(c) => self.constant * (c.profile)(x),
        }
    }

    /// Axis-aligned box containing the support.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        match &self.kind {
            DensityKind::UniformBall { radius } => (vec![-radius; d], vec![*radius; d]),
            DensityKind::Figure1Polynomial => (vec![-1.0; d], vec![1.0; d]),
            DensityKind::UniformBox { lower, upper } => (lower.clone(), upper.clone()),
            DensityKind::Custom(c) => (c.lower.clone(), c.upper.clone()),
        }
    }

    /// Volume of the support (the bounding box for custom densities).
    pub fn support_volume(&self) -> f64 {
        match &self.kind {
            DensityKind::UniformBall { radius } => ball_volume(self.dim) * radius.powi(self.dim as i32),
            DensityKind::Figure1Polynomial => ball_volume(self.dim),
            _ => {
                let (lo, hi) = self.bounding_box();
                lo.iter().zip(&hi).map(|(a, b)| b - a).product()
            }
        }
    }

    fn max_density(&self) -> f64 {
        match &self.kind {
            DensityKind::Custom(c) => self.constant * c.max_value,
            _ => self.constant,
        }
    }

    /// `∫ |x|² ρ(x) dx` by quadrature (radial for the ball profiles).
    pub fn second_moment(&self) -> f64 {
        let d = self.dim;
        match &self.kind {
            DensityKind::UniformBall { radius } => d as f64 / (d as f64 + 2.0) * radius * radius,
            DensityKind::Figure1Polynomial => {
                sphere_area(d)
                    * self.constant
                    * integrate(
                        |r: f64| (1.0 - r * r).powi(2) * r.powi(d as i32 + 1),
                        0.0,
                        1.0,
                        Tolerance::new(1e-15, 0.0),
                    )
                    .expect("polynomial moment")
            }
            _ => {
                let (lo, hi) = self.bounding_box();
                nested_box_integral(
                    &|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() * self.density(x),
                    &lo,
                    &hi,
                    Tolerance::new(1e-10, 1e-14),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Lattice covering the support; node weight is the cell-averaged
    /// density times the cell volume.
    GridWeighted,
    MonteCarlo { seed: u64 },
}

/// Sub-samples per axis when averaging the density over a lattice cell.
const CELL_SUBSAMPLES: usize = 8;

pub fn init_particles(rho: &DensitySpec, n: usize, mode: InitMode) -> Result<ParticleMeasure, MeasureError> {
    if n == 0 {
        return Err(MeasureError::Invalid("particle count must be at least 1".into()));
    }
    let d = rho.dim();
    let (lo, hi) = rho.bounding_box();
    let checked = |x: &[f64]| -> Result<f64, MeasureError> {
        let v = rho.density(x);
        if v < 0.0 || v.is_nan() {
            Err(MeasureError::NegativeDensity {
                point: x.to_vec(),
                value: v,
            })
        } else {
            Ok(v)
        }
    };
    match mode {
        InitMode::GridWeighted => {
            let box_volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
            let fill = (rho.support_volume() / box_volume).min(1.0);
            let per_axis = ((n as f64 / fill).powf(1.0 / d as f64).round() as usize).max(1);
            let widths: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / per_axis as f64).collect();
            let cell_volume: f64 = widths.iter().product();
            let sub = CELL_SUBSAMPLES;
            let sub_total = sub.pow(d as u32);
            let (mut positions, mut weights) = (Vec::new(), Vec::new());
            let mut center = vec![0.0; d];
            let mut x = vec![0.0; d];
            for idx in 0..per_axis.pow(d as u32) {
                let mut rem = idx;
                let mut cell = [0usize; 3];
                for k in 0..d {
                    cell[k] = rem % per_axis;
                    rem /= per_axis;
                }
                for k in 0..d {
                    center[k] = lo[k] + (cell[k] as f64 + 0.5) * widths[k];
                }
                let mut acc = 0.0;
                for s in 0..sub_total {
                    let mut srem = s;
                    for k in 0..d {
                        let j = srem % sub;
                        srem /= sub;
                        x[k] = lo[k] + (cell[k] as f64 + (j as f64 + 0.5) / sub as f64) * widths[k];
                    }
                    acc += checked(&x)?;
                }
                let w = acc / sub_total as f64 * cell_volume;
                if w >= 1e-16 {
                    positions.extend_from_slice(&center);
                    weights.push(w);
                }
            }
            ParticleMeasure::normalized(d, positions, weights)
        }
        InitMode::MonteCarlo { seed } => {
            let mut rng = SeededRng::new(seed);
            let bound = rho.max_density();
            let mut positions = Vec::with_capacity(n * d);
            let mut x = vec![0.0; d];
            let mut accepted = 0;
            while accepted < n {
                for k in 0..d {
                    x[k] = rng.uniform_in(lo[k], hi[k]);
                }
                let v = checked(&x)?;
                if rng.uniform() * bound < v {
                    positions.extend_from_slice(&x);
                    accepted += 1;
                }
            }
            ParticleMeasure::uniform(d, positions)
        }
    }
}

/// `x ↦ Σ m_i φ_ε(x - x_i)`.
#[derive(Debug, Clone)]
pub struct MollifiedDensity {
    pub measure: ParticleMeasure,
    pub mollifier: MollifierSpec,
}

impl MollifiedDensity {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.measure.dim();
        let mut diff = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..self.measure.len() {
            for (k, v) in diff.iter_mut().enumerate() {
                *v = x[k] - self.measure.position(i)[k];
            }
            total += self.measure.weights()[i] * self.mollifier.eval(&diff);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MollifyMode {
    Sampled { count: usize, seed: u64 },
    DensityEvaluator,
}

#[derive(Debug, Clone)]
pub enum MollifiedMeasure {
    Samples(ParticleMeasure),
    Density(MollifiedDensity),
}

/// `count` equal-weight samples of `μ * φ_ε`: a particle is chosen with
/// probability `m_i`, then displaced by a draw from `φ_ε`.
pub fn sample_mollified(mu: &ParticleMeasure, m: &MollifierSpec, count: usize, rng: &mut SeededRng) -> ParticleMeasure {
    let d = mu.dim();
    let mut cumulative = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for w in mu.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let mut positions = vec![0.0; count * d];
    let mut noise = vec![0.0; d];
    for p in positions.chunks_mut(d) {
        let i = rng.pick(&cumulative);
        m.sample(rng, &mut noise);
        for k in 0..d {
            p[k] = mu.position(i)[k] + noise[k];
        }
    }
    ParticleMeasure::uniform(d, positions).expect("samples form a probability measure")
}

pub fn mollify_measure(mu: &ParticleMeasure, m: &MollifierSpec, mode: MollifyMode) -> MollifiedMeasure {
    match mode {
        MollifyMode::Sampled { count, seed } => {
            MollifiedMeasure::Samples(sample_mollified(mu, m, count, &mut SeededRng::new(seed)))
        }
        MollifyMode::DensityEvaluator => MollifiedMeasure::Density(MollifiedDensity {
            measure: mu.clone(),
            mollifier: *m,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_cell_interval() {
        let rho = DensitySpec::uniform_ball(1, 1.0).unwrap();
        let mu = init_particles(&rho, 2, InitMode::GridWeighted).unwrap();
        assert_eq!(mu.positions(), &[-0.5, 0.5]);
        assert_eq!(mu.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn weights_sum_to_one() {
        for d in 1..=3 {
            for rho in [DensitySpec::uniform_ball(d, 1.3).unwrap(), DensitySpec::figure1(d).unwrap()] {
                for mode in [InitMode::GridWeighted, InitMode::MonteCarlo { seed: 5 }] {
                    let mu = init_particles(&rho, 300, mode).unwrap();
                    let total: f64 = mu.weights().iter().sum();
                    assert!((total - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn figure1_constant_is_three_over_pi() {
        let rho = DensitySpec::figure1(2).unwrap();
        assert_relative_eq!(rho.normalization(), 3.0 / std::f64::consts::PI, max_relative = 1e-14);
    }

    #[test]
    fn moment_examples() {
        let mu = ParticleMeasure::dirac(&[0.0, 0.0]);
        assert_eq!(mu.second_moment(), 0.0);
        assert_eq!(mu.center_of_mass(), vec![0.0, 0.0]);
        let pair = ParticleMeasure::uniform(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(pair.second_moment(), 1.0);
        assert_eq!(pair.center_of_mass(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(ParticleMeasure::new(2, vec![0.0; 4], vec![0.5, 0.6]).is_err());
        assert!(ParticleMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(ParticleMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(init_particles(&DensitySpec::figure1(2).unwrap(), 0, InitMode::GridWeighted).is_err());
    }

    #[test]
    fn negative_density_is_an_input_error() {
        let custom = CustomDensity {
            profile: Arc::new(|x: &[f64]| x[0]),
            lower: vec![-0.1],
            upper: vec![1.0],
            max_value: 1.0,
        };
        let rho = DensitySpec::new(DensityKind::Custom(custom), 1).unwrap();
        assert!(matches!(
            init_particles(&rho, 10, InitMode::GridWeighted),
            Err(MeasureError::NegativeDensity { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = SeededRng::new(9);
        let positions: Vec<f64> = (0..30).map(|_| rng.normal() * 1e-3 + rng.uniform() * 1e5).collect();
        let mu = ParticleMeasure::uniform(3, positions).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2,x3,w\n"));
        let back = ParticleMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back, mu);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = ParticleMeasure::read_csv(&b"x1,w\n0.5,0.5\nabc,0.5\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(ParticleMeasure::read_csv(&b"x,w\n0,1\n"[..]).is_err());
    }
}
