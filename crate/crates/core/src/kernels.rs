//! Radial interaction kernels: repulsive–attractive power laws (including
//! logarithmic repulsion), Morse potentials and user-supplied radial profiles.
//!
//! Energies are normalized without a factor 1/2, so the particle velocity is
//! `-2 ∇K * μ`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::Tolerance;
use crate::radial::spherical_mean;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel evaluated at negative radius {0}")]
    NegativeRadius(f64),
    #[error("kernel gradient is singular at the origin")]
    SingularGradient,
    #[error("invalid kernel parameters: {0}")]
    InvalidParameters(String),
    #[error("kernel outside the supported regime: {0}")]
    Inadmissible(String),
}

/// Short-range behaviour of the repulsive part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Repulsion {
    /// `-|x|^p / p`
    Power(f64),
    /// `-log |x|`, only for d >= 2.
    Log,
}

impl fmt::Display for Repulsion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repulsion::Power(p) => write!(f, "{p:?}"),
            Repulsion::Log => write!(f, "log"),
        }
    }
}

/// A radial profile `r ↦ f(r)` supplied by the caller.
pub trait RadialProfile: Send + Sync + fmt::Debug {
    fn value(&self, r: f64) -> f64;
    fn derivative(&self, r: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Singularity {
    /// Bounded and continuous at the origin.
    None,
    /// Behaves like `r^e` with `e < 0`.
    Power(f64),
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseParams {
    pub c_r: f64,
    pub c_a: f64,
    pub l_r: f64,
    pub l_a: f64,
}

#[derive(Debug, Clone)]
pub struct GeneralRadial {
    pub profile: Arc<dyn RadialProfile>,
    pub singularity: Singularity,
    pub growth_exponent: f64,
    /// Optional explicit (attractive, repulsive) decomposition.
    pub split: Option<(Arc<dyn RadialProfile>, Arc<dyn RadialProfile>)>,
}

#[derive(Debug, Clone)]
pub enum Family {
    PowerLaw { p: Repulsion, q: f64 },
    Morse(MorseParams),
    GeneralRadial(GeneralRadial),
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    dim: usize,
    family: Family,
}

/// One additive piece of a kernel, as returned by [`KernelSpec::split`].
#[derive(Debug, Clone)]
pub enum RadialPart {
    Zero,
    /// `coeff * r^exponent`
    Power { coeff: f64, exponent: f64 },
    /// `coeff * ln r`
    Log { coeff: f64 },
    /// `amplitude * exp(-r / length)`
    Exponential { amplitude: f64, length: f64 },
    Profile(Arc<dyn RadialProfile>),
}

impl RadialPart {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialPart::Zero => 0.0,
            RadialPart::Power { coeff, exponent } => {
                if r == 0.0 {
                    if exponent > 0.0 {
                        0.0
                    } else {
                        coeff.signum() * f64::INFINITY
                    }
                } else {
                    coeff * r.powf(exponent)
                }
            }
            RadialPart::Log { coeff } => {
                if r == 0.0 {
                    -coeff.signum() * f64::INFINITY
                } else {
                    coeff * r.ln()
                }
            }
            RadialPart::Exponential { amplitude, length } => amplitude * (-r / length).exp(),
            RadialPart::Profile(ref p) => p.value(r),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            RadialPart::Zero => 0.0,
            RadialPart::Power { coeff, exponent } => coeff * exponent * r.powf(exponent - 1.0),
            RadialPart::Log { coeff } => coeff / r,
            RadialPart::Exponential { amplitude, length } => -amplitude / length * (-r / length).exp(),
            RadialPart::Profile(ref p) => p.derivative(r),
        }
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        match *self {
            RadialPart::Zero => 0.0,
            RadialPart::Power { coeff, exponent } => {
                coeff * exponent * (exponent - 1.0) * r.powf(exponent - 2.0)
            }
            RadialPart::Log { coeff } => -coeff / (r * r),
            RadialPart::Exponential { amplitude, length } => {
                amplitude / (length * length) * (-r / length).exp()
            }
            RadialPart::Profile(ref p) => {
                let h = 1e-4 * r.max(1e-3);
                (p.derivative(r + h) - p.derivative(r - h)) / (2.0 * h)
            }
        }
    }

    /// `Δ f(|x|)` at `|x| = r` in R^d.
    pub fn laplacian(&self, r: f64, d: usize) -> f64 {
        self.second_derivative(r) + (d as f64 - 1.0) * self.derivative(r) / r
    }

    /// `d/dr Δ f(|x|)`.
    pub fn laplacian_derivative(&self, r: f64, d: usize) -> f64 {
        let dm1 = d as f64 - 1.0;
        match *self {
            RadialPart::Zero => 0.0,
            RadialPart::Power { coeff, exponent: e } => {
                coeff * e * (e + dm1 - 1.0) * (e - 2.0) * r.powf(e - 3.0)
            }
            RadialPart::Log { coeff } => -2.0 * coeff * (dm1 - 1.0) / (r * r * r),
            _ => {
                let h = 1e-4 * r.max(1e-3);
                (self.laplacian(r + h, d) - self.laplacian(r - h, d)) / (2.0 * h)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RadialPart::Zero)
    }

    /// Exactly `|x|^2 / 2`.
    pub fn is_half_square(&self) -> bool {
        matches!(*self, RadialPart::Power { coeff, exponent } if exponent == 2.0 && coeff == 0.5)
    }

    /// Finite at the origin.
    pub fn is_bounded_at_origin(&self) -> bool {
        self.value(0.0).is_finite()
    }
}

impl KernelSpec {
    /// `|x|^q/q - |x|^p/p` (or `|x|^q/q - log|x|`). Only structural checks
    /// are made here; use [`KernelSpec::check_hypotheses`] for the regime.
    pub fn power_law(dim: usize, p: Repulsion, q: f64) -> Result<Self, KernelError> {
        check_dim(dim)?;
        if !q.is_finite() || q == 0.0 {
            return Err(KernelError::InvalidParameters(format!(
                "attraction exponent q must be finite and nonzero, got {q}"
            )));
        }
        match p {
            Repulsion::Power(p) if !p.is_finite() || p == 0.0 => {
                return Err(KernelError::InvalidParameters(format!(
                    "repulsion exponent p must be finite and nonzero, got {p}"
                )))
            }
            Repulsion::Log if dim < 2 => {
                return Err(KernelError::InvalidParameters(
                    "logarithmic repulsion requires dimension >= 2".into(),
                ))
            }
            _ => {}
        }
        Ok(KernelSpec {
            dim,
            family: Family::PowerLaw { p, q },
        })
    }

    pub fn morse(dim: usize, params: MorseParams) -> Result<Self, KernelError> {
        check_dim(dim)?;
        let MorseParams { c_r, c_a, l_r, l_a } = params;
        if !(0.0 < l_r && l_r < l_a) {
            return Err(KernelError::InvalidParameters(format!(
                "Morse lengths must satisfy 0 < l_r < l_a, got l_r = {l_r}, l_a = {l_a}"
            )));
        }
        if !(0.0 < c_a && c_a < c_r) {
            return Err(KernelError::InvalidParameters(format!(
                "Morse amplitudes must satisfy 0 < C_a < C_r, got C_r = {c_r}, C_a = {c_a}"
            )));
        }
        if c_r / c_a >= (l_r / l_a).powi(-(dim as i32)) {
            return Err(KernelError::InvalidParameters(format!(
                "Morse parameters must satisfy C_r/C_a < (l_r/l_a)^-d, got {} >= {}",
                c_r / c_a,
                (l_r / l_a).powi(-(dim as i32))
            )));
        }
        Ok(KernelSpec {
            dim,
            family: Family::Morse(params),
        })
    }

    pub fn general(dim: usize, radial: GeneralRadial) -> Result<Self, KernelError> {
        check_dim(dim)?;
        Ok(KernelSpec {
            dim,
            family: Family::GeneralRadial(radial),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn singularity(&self) -> Singularity {
        match &self.family {
            Family::PowerLaw { p: Repulsion::Log, .. } => Singularity::Log,
            Family::PowerLaw { p: Repulsion::Power(p), .. } if *p < 0.0 => Singularity::Power(*p),
            Family::PowerLaw { .. } | Family::Morse(_) => Singularity::None,
            Family::GeneralRadial(g) => g.singularity,
        }
    }

    /// `K(r)`; `+∞` at the origin for singular kernels.
    pub fn value(&self, r: f64) -> Result<f64, KernelError> {
        if r < 0.0 || r.is_nan() {
            return Err(KernelError::NegativeRadius(r));
        }
        Ok(self.value_unchecked(r))
    }

    pub(crate) fn value_unchecked(&self, r: f64) -> f64 {
        match &self.family {
            Family::GeneralRadial(g) => g.profile.value(r),
            _ => {
                let (a, rep) = self.split();
                a.value(r) + rep.value(r)
            }
        }
    }

    /// `dK/dr` for `r > 0`.
    pub fn radial_derivative(&self, r: f64) -> f64 {
        match &self.family {
            Family::PowerLaw { p, q } => {
                let attr = r.powf(q - 1.0);
                let rep = match p {
                    Repulsion::Power(p) => -r.powf(p - 1.0),
                    Repulsion::Log => -1.0 / r,
                };
                attr + rep
            }
            Family::Morse(m) => {
                -m.c_r / m.l_r * (-r / m.l_r).exp() + m.c_a / m.l_a * (-r / m.l_a).exp()
            }
            Family::GeneralRadial(g) => g.profile.derivative(r),
        }
    }

    /// `∇K(x)`, written into `out`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<(), KernelError> {
        let r = crate::radial::norm(x);
        if r == 0.0 {
            return Err(KernelError::SingularGradient);
        }
        let scale = self.radial_derivative(r) / r;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
        Ok(())
    }

    /// Attractive and repulsive parts; they sum to the kernel for `r > 0`.
    pub fn split(&self) -> (RadialPart, RadialPart) {
        match &self.family {
            Family::PowerLaw { p, q } => {
                let attractive = RadialPart::Power {
                    coeff: 1.0 / q,
                    exponent: *q,
                };
                let repulsive = match p {
                    Repulsion::Power(p) => RadialPart::Power {
                        coeff: -1.0 / p,
                        exponent: *p,
                    },
                    Repulsion::Log => RadialPart::Log { coeff: -1.0 },
                };
                (attractive, repulsive)
            }
            Family::Morse(m) => (
                RadialPart::Exponential {
                    amplitude: -m.c_a,
                    length: m.l_a,
                },
                RadialPart::Exponential {
                    amplitude: m.c_r,
                    length: m.l_r,
                },
            ),
            Family::GeneralRadial(g) => match &g.split {
                Some((a, r)) => (RadialPart::Profile(a.clone()), RadialPart::Profile(r.clone())),
                None if g.singularity == Singularity::None => {
                    (RadialPart::Profile(g.profile.clone()), RadialPart::Zero)
                }
                None => (RadialPart::Zero, RadialPart::Profile(g.profile.clone())),
            },
        }
    }

    /// Largest radius where `K' <= 0` on a log scan of `[1e-3, 1e3]`.
    fn critical_radius(&self) -> f64 {
        let n = 4000;
        let mut last = 0.0;
        for i in 0..=n {
            let r = 1e-3 * 1e6f64.powf(i as f64 / n as f64);
            if self.radial_derivative(r) <= 0.0 {
                last = r;
            }
        }
        last
    }

    pub fn check_hypotheses(&self) -> HypothesisReport {
        HypothesisReport::evaluate(self)
    }

    /// Fails unless the kernel satisfies the power-law regime or the general
    /// hypothesis list; the error names the first violated hypothesis.
    pub fn validate(&self) -> Result<HypothesisReport, KernelError> {
        let report = self.check_hypotheses();
        if report.admissible() {
            Ok(report)
        } else {
            let msg = report
                .first_violation()
                .map(|c| format!("({}) {}", c.hypothesis.label(), c.witness))
                .unwrap_or_else(|| "hypotheses could not be verified".into());
            Err(KernelError::Inadmissible(msg))
        }
    }
}

fn check_dim(dim: usize) -> Result<(), KernelError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(KernelError::InvalidParameters(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Kernel is the power law `|x|^q/q - |x|^p/p`.
    PowerLawForm,
    /// `2 - d <= p < 0 < q <= 2`.
    PowerLawRegime,
    Even,
    /// Locally integrable, C^1 away from a ball, gradient of linear growth.
    LocalIntegrability,
    /// Strictly increasing in each coordinate outside a ball, unbounded.
    CoordinateMonotone,
    /// Repulsive part superharmonic for a continuous attractive part.
    SuperharmonicSplit,
    QuadraticGrowth,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 7] = [
        Hypothesis::PowerLawForm,
        Hypothesis::PowerLawRegime,
        Hypothesis::Even,
        Hypothesis::LocalIntegrability,
        Hypothesis::CoordinateMonotone,
        Hypothesis::SuperharmonicSplit,
        Hypothesis::QuadraticGrowth,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::PowerLawForm => "E1",
            Hypothesis::PowerLawRegime => "E2",
            Hypothesis::Even => "H1",
            Hypothesis::LocalIntegrability => "H2",
            Hypothesis::CoordinateMonotone => "H3",
            Hypothesis::SuperharmonicSplit => "H4",
            Hypothesis::QuadraticGrowth => "H5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Satisfied,
    Violated,
    NotApplicable,
    NotChecked,
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub hypothesis: Hypothesis,
    pub status: Status,
    pub witness: String,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    /// Radius outside of which monotonicity and growth were sampled.
    pub radius: f64,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn status(&self, h: Hypothesis) -> Status {
        self.checks
            .iter()
            .find(|c| c.hypothesis == h)
            .map(|c| c.status)
            .unwrap_or(Status::NotChecked)
    }

    /// Power-law form and regime both hold.
    pub fn power_law_regime(&self) -> bool {
        self.status(Hypothesis::PowerLawForm) == Status::Satisfied
            && self.status(Hypothesis::PowerLawRegime) == Status::Satisfied
    }

    /// Every item of the general hypothesis list holds.
    pub fn general_regime(&self) -> bool {
        Hypothesis::ALL[2..]
            .iter()
            .all(|&h| self.status(h) == Status::Satisfied)
    }

    pub fn admissible(&self) -> bool {
        self.power_law_regime() || self.general_regime()
    }

    pub fn first_violation(&self) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.status == Status::Violated)
    }

    fn evaluate(k: &KernelSpec) -> HypothesisReport {
        let d = k.dim;
        let radius = (2.0 * k.critical_radius()).max(2.0);
        let lattice = annulus_lattice(d, radius);
        let mut checks = Vec::with_capacity(7);
        let mut push = |hypothesis, status, witness: String| {
            checks.push(HypothesisCheck {
                hypothesis,
                status,
                witness,
            })
        };

        // Power-law form and regime.
        match &k.family {
            Family::PowerLaw { p: Repulsion::Power(p), q } => {
                push(
                    Hypothesis::PowerLawForm,
                    Status::Satisfied,
                    format!("power law with p = {p}, q = {q}"),
                );
                let lower = 2.0 - d as f64;
                let (status, witness) = if !(*q > 0.0) {
                    (Status::Violated, format!("requires q > 0, got q = {q}"))
                } else if *q > 2.0 {
                    (Status::Violated, format!("requires q <= 2, got q = {q}"))
                } else if !(*p < 0.0) {
                    (Status::Violated, format!("requires p < 0, got p = {p}"))
                } else if *p < lower {
                    (
                        Status::Violated,
                        format!("requires p >= 2 - d = {lower}, got p = {p}"),
                    )
                } else {
                    (Status::Satisfied, format!("{lower} <= {p} < 0 < {q} <= 2"))
                };
                push(Hypothesis::PowerLawRegime, status, witness);
            }
            Family::PowerLaw { p: Repulsion::Log, q } => {
                push(
                    Hypothesis::PowerLawForm,
                    Status::NotApplicable,
                    "logarithmic repulsion".into(),
                );
                let (status, witness) = if *q > 0.0 && *q <= 2.0 {
                    (Status::NotApplicable, "logarithmic repulsion".into())
                } else {
                    (Status::Violated, format!("requires 0 < q <= 2, got q = {q}"))
                };
                push(Hypothesis::PowerLawRegime, status, witness);
            }
            _ => {
                push(
                    Hypothesis::PowerLawForm,
                    Status::NotApplicable,
                    "not a power-law kernel".into(),
                );
                push(
                    Hypothesis::PowerLawRegime,
                    Status::NotApplicable,
                    "not a power-law kernel".into(),
                );
            }
        }

        // Evenness: the kernel is stored as a radial profile, so K(x) and
        // K(-x) go through the same radius; confirm on the lattice anyway.
        let max_asym = lattice
            .iter()
            .map(|x| {
                let r = crate::radial::norm(x);
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                (k.value_unchecked(r) - k.value_unchecked(crate::radial::norm(&neg))).abs()
            })
            .fold(0.0, f64::max);
        push(
            Hypothesis::Even,
            if max_asym == 0.0 {
                Status::Satisfied
            } else {
                Status::Violated
            },
            format!(
                "radial; max |K(x) - K(-x)| = {max_asym:e} over {} lattice points",
                lattice.len()
            ),
        );

        // Local integrability and gradient growth.
        let singular_ok = match k.singularity() {
            Singularity::None | Singularity::Log => Ok(()),
            Singularity::Power(e) if e > -(d as f64) => Ok(()),
            Singularity::Power(e) => Err(e),
        };
        let growth = growth_exponent(k);
        let grad_ratio = lattice
            .iter()
            .map(|x| {
                let r = crate::radial::norm(x);
                k.radial_derivative(r).abs() / (1.0 + r)
            })
            .fold(0.0, f64::max);
        let (status, witness) = match singular_ok {
            Err(e) => (
                Status::Violated,
                format!("singularity r^{e} is not locally integrable in dimension {d}"),
            ),
            Ok(()) if growth > 2.0 => (
                Status::Violated,
                format!(
                    "|∇K| grows like r^{} for |x| > {radius}, faster than linear",
                    growth - 1.0
                ),
            ),
            Ok(()) if !grad_ratio.is_finite() => {
                (Status::Violated, "gradient not finite on the annulus".into())
            }
            Ok(()) => (
                Status::Satisfied,
                format!("locally integrable; max |∇K|/(1+|x|) = {grad_ratio:.4e} on R < |x| < 4R"),
            ),
        };
        push(Hypothesis::LocalIntegrability, status, witness);

        // Coordinate monotonicity outside B_R and divergence at infinity.
        let mut worst: Option<(f64, f64)> = None;
        for x in &lattice {
            let r = crate::radial::norm(x);
            let dk = k.radial_derivative(r);
            for &xi in x {
                if xi != 0.0 && !(dk * xi.abs() / r > 0.0) {
                    worst = Some((r, dk));
                }
            }
        }
        let (status, witness) = if let Some((r, dk)) = worst {
            (
                Status::Violated,
                format!("K not increasing in each coordinate: dK/dr({r:.4}) = {dk:.4e}"),
            )
        } else if !(growth > 0.0) {
            (
                Status::Violated,
                "K does not tend to +infinity as |x| grows".to_string(),
            )
        } else {
            (
                Status::Satisfied,
                format!(
                    "dK/dr > 0 on {} lattice points with {radius} < |x| < {}; growth exponent {growth}",
                    lattice.len(),
                    4.0 * radius
                ),
            )
        };
        push(Hypothesis::CoordinateMonotone, status, witness);

        // Superharmonic repulsive part.
        let (status, witness) = superharmonic_witness(k);
        push(Hypothesis::SuperharmonicSplit, status, witness);

        let (status, witness) = if growth <= 2.0 {
            (Status::Satisfied, format!("growth exponent {growth} <= 2"))
        } else {
            (
                Status::Violated,
                format!("growth exponent {growth} exceeds quadratic growth"),
            )
        };
        push(Hypothesis::QuadraticGrowth, status, witness);

        HypothesisReport { radius, checks }
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let s = match c.status {
                Status::Satisfied => "satisfied",
                Status::Violated => "violated",
                Status::NotApplicable => "not-applicable",
                Status::NotChecked => "not-checked",
            };
            writeln!(f, "({}) {s}: {}", c.hypothesis.label(), c.witness)?;
        }
        Ok(())
    }
}

fn growth_exponent(k: &KernelSpec) -> f64 {
    match &k.family {
        Family::PowerLaw { p, q } => match p {
            Repulsion::Power(p) if *p > *q => *p,
            _ => *q,
        },
        Family::Morse(_) => 0.0,
        Family::GeneralRadial(g) => g.growth_exponent,
    }
}

/// Deterministic lattice in the annulus `R < |x| < 4R`.
fn annulus_lattice(d: usize, radius: f64) -> Vec<Vec<f64>> {
    let per_axis: usize = match d {
        1 => 201,
        2 => 41,
        _ => 17,
    };
    let h = 8.0 * radius / (per_axis - 1) as f64;
    let mut out = Vec::new();
    let total = per_axis.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut x = Vec::with_capacity(d);
        for _ in 0..d {
            x.push(-4.0 * radius + h * (rem % per_axis) as f64);
            rem /= per_axis;
        }
        let r = crate::radial::norm(&x);
        if r > radius && r < 4.0 * radius {
            out.push(x);
        }
    }
    out
}

/// Spherical-mean test points `(|x|, ρ)` with `|x| > ρ > 0`.
pub(crate) fn superharmonic_probe_points(count: usize) -> Vec<(f64, f64)> {
    let mut rng = crate::rng::SeededRng::new(0x5EED_0F_4);
    (0..count)
        .map(|_| {
            let r = 0.05 + 3.0 * rng.uniform();
            let rho = r * (0.02 + 0.96 * rng.uniform());
            (r, rho)
        })
        .collect()
}

/// Largest amount by which the spherical mean exceeds the centre value.
pub(crate) fn max_superharmonic_excess(part: &RadialPart, d: usize, probes: &[(f64, f64)]) -> f64 {
    let tol = Tolerance::new(1e-11, 1e-13);
    probes
        .iter()
        .map(|&(r, rho)| {
            let mean = spherical_mean(|s: f64| part.value(s), r, rho, d, tol).unwrap_or(f64::NAN);
            let excess = mean - part.value(r);
            if excess.is_nan() {
                f64::INFINITY
            } else {
                excess
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn superharmonic_witness(k: &KernelSpec) -> (Status, String) {
    let d = k.dim;
    let (attractive, repulsive) = k.split();
    let probes = superharmonic_probe_points(24);
    let analytic = match &k.family {
        Family::PowerLaw { p: Repulsion::Log, .. } => Some(true),
        Family::PowerLaw { p: Repulsion::Power(p), .. } => Some(*p >= 2.0 - d as f64),
        _ => None,
    };
    let excess = max_superharmonic_excess(&repulsive, d, &probes);
    let tol = 1e-8;
    if analytic == Some(true) && excess <= tol {
        return (
            Status::Satisfied,
            format!("K^r from the additive split; max spherical-mean excess {excess:.2e}"),
        );
    }
    if analytic.is_none() && excess <= tol {
        return (
            Status::Satisfied,
            format!("sampled spherical means of K^r; max excess {excess:.2e}"),
        );
    }
    // A kernel continuous at the origin is its own attractive part.
    if repulsive.is_bounded_at_origin() && attractive.is_bounded_at_origin() {
        return (
            Status::Satisfied,
            "K continuous: take K^a = K and K^r = 0".into(),
        );
    }
    (
        Status::Violated,
        format!("repulsive part is not superharmonic: spherical-mean excess {excess:.3e}"),
    )
}
