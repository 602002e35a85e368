//! The regularized particle gradient flow `ẋ_i = -2 Σ_j ∇K_ε(x_i - x_j) m_j`
//! and direct minimization of `E_ε` over particle positions.

use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};
use thiserror::Error;

use crate::energy::{energy_particles, kinetic_energy, velocity_field, DiagonalPolicy, EnergyBreakdown};
use crate::kernels::KernelSpec;
use crate::measures::ParticleMeasure;
use crate::mollification::{MollifiedKernel, MollifierKind, MollifyError, TabulationParams};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("positions became non-finite at t = {t}; last good state at t = {last_good_time}")]
    Divergence {
        t: f64,
        last_good_time: f64,
        last_good: Box<ParticleMeasure>,
        trace: Box<EnergyTrace>,
    },
    #[error("adaptive step size underflowed at t = {0}")]
    StepUnderflow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Euler,
    /// RK4 with step-doubling control of the position error.
    Adaptive,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::Euler => "euler",
            Scheme::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub scheme: Scheme,
    /// Fixed step, or the initial step for [`Scheme::Adaptive`].
    pub dt: f64,
    pub t_end: f64,
    /// Steps between trace rows (accepted steps for the adaptive scheme).
    pub trace_every: usize,
    /// Run the force evaluations on a single thread. Reductions are
    /// fixed-order either way.
    pub deterministic: bool,
    /// Absolute position tolerance of the adaptive scheme.
    pub adaptive_tol: f64,
    /// Stop once the metric slope stays below this value for
    /// [`STEADY_ROWS`] consecutive trace rows.
    pub steady_slope: Option<f64>,
}

pub const STEADY_ROWS: usize = 10;

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            scheme: Scheme::Rk4,
            dt: 1e-3,
            t_end: 1.0,
            trace_every: 10,
            deterministic: true,
            adaptive_tol: 1e-8,
            steady_slope: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FlowError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(FlowError::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.trace_every == 0 {
            return Err(FlowError::Config("trace_every must be at least 1".into()));
        }
        if !(self.adaptive_tol > 0.0) {
            return Err(FlowError::Config("adaptive_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub energy: f64,
    pub attractive: f64,
    pub repulsive: f64,
    /// Squared metric slope `4 ‖∇K_ε * μ‖²_{L²(μ)}`.
    pub slope2: f64,
    /// `Σ m_i |Δx_i / Δt|²` over the last step (the squared metric
    /// derivative of the discrete curve); equals `slope2` on the first row.
    pub kinetic: f64,
    pub second_moment: f64,
    pub center_of_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub dim: usize,
    pub rows: Vec<TraceRow>,
    /// Time at which the steady-state criterion fired, if it did.
    pub steady_at: Option<f64>,
}

impl EnergyTrace {
    pub fn new(dim: usize) -> Self {
        EnergyTrace {
            dim,
            rows: Vec::new(),
            steady_at: None,
        }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("t,E,Ea,Er,slope2,kinetic,M2");
        for k in 1..=self.dim {
            let _ = write!(h, ",com_{k}");
        }
        h
    }

    /// CSV with shortest round-trip number formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.header())?;
        for r in &self.rows {
            write!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t, r.energy, r.attractive, r.repulsive, r.slope2, r.kinetic, r.second_moment
            )?;
            for c in &r.center_of_mass {
                write!(out, ",{c:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

fn make_row(t: f64, mu: &ParticleMeasure, e: EnergyBreakdown, slope2: f64, kinetic: f64) -> TraceRow {
    TraceRow {
        t,
        energy: e.total,
        attractive: e.attractive,
        repulsive: e.repulsive,
        slope2,
        kinetic,
        second_moment: mu.second_moment(),
        center_of_mass: mu.center_of_mass(),
    }
}

fn mollified_energy(mu: &ParticleMeasure, mk: &MollifiedKernel) -> EnergyBreakdown {
    energy_particles(mu, mk, DiagonalPolicy::IncludeDiagonal).expect("dimensions checked by caller")
}

fn axpy(x: &[f64], a: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(xi, vi)| xi + a * vi).collect()
}

struct Stepper<'a> {
    mu: &'a ParticleMeasure,
    mk: &'a MollifiedKernel,
}

impl Stepper<'_> {
    fn velocity(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = self.mu.with_positions(x.to_vec()).ok()?;
        let v = velocity_field(&m, self.mk);
        v.iter().all(|c| c.is_finite()).then_some(v)
    }

    fn euler(&self, x: &[f64], v0: &[f64], h: f64) -> Option<Vec<f64>> {
        let _ = self;
        let out = axpy(x, h, v0);
        out.iter().all(|c| c.is_finite()).then_some(out)
    }

    fn rk4(&self, x: &[f64], k1: &[f64], h: f64) -> Option<Vec<f64>> {
        let k2 = self.velocity(&axpy(x, 0.5 * h, k1))?;
        let k3 = self.velocity(&axpy(x, 0.5 * h, &k2))?;
        let k4 = self.velocity(&axpy(x, h, &k3))?;
        let out: Vec<f64> = (0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        out.iter().all(|c| c.is_finite()).then_some(out)
    }
}

/// Integrates the particle system from `mu0` up to `cfg.t_end`.
pub fn integrate_flow(
    mu0: &ParticleMeasure,
    mk: &MollifiedKernel,
    cfg: &FlowConfig,
) -> Result<(ParticleMeasure, EnergyTrace), FlowError> {
    cfg.validate()?;
    if mu0.dim() != mk.dim() {
        return Err(FlowError::Config(format!(
            "measure dimension {} does not match kernel dimension {}",
            mu0.dim(),
            mk.dim()
        )));
    }
    if cfg.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| FlowError::Config(e.to_string()))?;
        pool.install(|| run_flow(mu0, mk, cfg))
    } else {
        run_flow(mu0, mk, cfg)
    }
}

fn run_flow(
    mu0: &ParticleMeasure,
    mk: &MollifiedKernel,
    cfg: &FlowConfig,
) -> Result<(ParticleMeasure, EnergyTrace), FlowError> {
    let stepper = Stepper { mu: mu0, mk };
    let mut trace = EnergyTrace::new(mu0.dim());
    let mut mu = mu0.clone();
    let mut v = velocity_field(&mu, mk);
    let slope2 = kinetic_energy(&mu, &v);
    trace.rows.push(make_row(0.0, &mu, mollified_energy(&mu, mk), slope2, slope2));

    let mut t = 0.0;
    let mut h = match cfg.scheme {
        Scheme::Adaptive => cfg.dt.min(cfg.t_end),
        _ => {
            let steps = (cfg.t_end / cfg.dt).round().max(1.0);
            cfg.t_end / steps
        }
    };
    let fixed_steps = (cfg.t_end / h).round() as usize;
    let mut step = 0usize;
    let mut quiet_rows = 0usize;
    loop {
        let done = match cfg.scheme {
            Scheme::Adaptive => t >= cfg.t_end,
            _ => step >= fixed_steps,
        };
        if done {
            break;
        }
        let x = mu.positions();
        let (next, taken) = match cfg.scheme {
            Scheme::Euler => (stepper.euler(x, &v, h), h),
            Scheme::Rk4 => (stepper.rk4(x, &v, h), h),
            Scheme::Adaptive => {
                let h_try = h.min(cfg.t_end - t);
                let full = stepper.rk4(x, &v, h_try);
                let half = stepper.rk4(x, &v, 0.5 * h_try).and_then(|mid| {
                    let vm = stepper.velocity(&mid)?;
                    stepper.rk4(&mid, &vm, 0.5 * h_try)
                });
                match (full, half) {
                    (Some(f), Some(hf)) => {
                        let err = f.iter().zip(&hf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        let factor = if err == 0.0 {
                            2.0
                        } else {
                            (0.9 * (cfg.adaptive_tol / err).powf(0.2)).clamp(0.2, 2.0)
                        };
                        if err > cfg.adaptive_tol {
                            h = h_try * factor;
                            if h < 1e-14 * cfg.t_end.max(1.0) {
                                return Err(FlowError::StepUnderflow(t));
                            }
                            continue;
                        }
                        let at_end = h_try >= cfg.t_end - t;
                        h = h_try * factor;
                        let taken = if at_end { cfg.t_end - t } else { h_try };
                        (Some(hf), taken)
                    }
                    _ => (None, h_try),
                }
            }
        };
        let next = match next {
            Some(n) => n,
            None => {
                return Err(FlowError::Divergence {
                    t: t + taken,
                    last_good_time: t,
                    last_good: Box::new(mu),
                    trace: Box::new(trace),
                })
            }
        };
        let kinetic: f64 = mu
            .weights()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let d = mu.dim();
                m * (0..d).map(|k| (next[i * d + k] - x[i * d + k]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / (taken * taken);
        mu = mu.with_positions(next).expect("finite positions");
        step += 1;
        t = match cfg.scheme {
            Scheme::Adaptive if cfg.t_end - t <= taken => cfg.t_end,
            Scheme::Adaptive => t + taken,
            _ => step as f64 * h,
        };
        v = velocity_field(&mu, mk);
        let last = match cfg.scheme {
            Scheme::Adaptive => t >= cfg.t_end,
            _ => step == fixed_steps,
        };
        if step % cfg.trace_every == 0 || last {
            let slope2 = kinetic_energy(&mu, &v);
            trace.rows.push(make_row(t, &mu, mollified_energy(&mu, mk), slope2, kinetic));
            if let Some(tol) = cfg.steady_slope {
                if slope2.sqrt() <= tol {
                    quiet_rows += 1;
                    if quiet_rows >= STEADY_ROWS {
                        trace.steady_at = Some(t);
                        info!("steady state reached at t = {t}");
                        break;
                    }
                } else {
                    quiet_rows = 0;
                }
            }
        }
    }
    Ok((mu, trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stop once the metric slope is at most this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            tol: 1e-6,
            max_iter: 10_000,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimizeStatus {
    Converged,
    MaxIterations,
    /// The line search could not decrease the energy above rounding level;
    /// the best iterate is returned.
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub measure: ParticleMeasure,
    pub trace: EnergyTrace,
    pub iterations: usize,
    pub status: MinimizeStatus,
    pub energy: EnergyBreakdown,
    pub slope: f64,
}

#[derive(Debug, Error)]
pub enum MinimizeError {
    #[error("invalid minimizer options: {0}")]
    Options(String),
    #[error("measure dimension {measure} does not match kernel dimension {kernel}")]
    Dimension { measure: usize, kernel: usize },
    #[error(transparent)]
    Mollify(#[from] MollifyError),
}

/// Gradient descent on the positions in the mass-weighted metric: the step
/// direction is the velocity field, the trial step is Barzilai-Borwein, and
/// Armijo backtracking halves it until sufficient decrease. Every accepted
/// step lowers `E_ε`. Trace rows use the iteration count as time.
pub fn minimize_energy(
    mu0: &ParticleMeasure,
    mk: &MollifiedKernel,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult, MinimizeError> {
    if !(opts.tol > 0.0) {
        return Err(MinimizeError::Options(format!("tol must be positive, got {}", opts.tol)));
    }
    if !(opts.armijo > 0.0 && opts.armijo < 1.0) {
        return Err(MinimizeError::Options("armijo constant must lie in (0, 1)".into()));
    }
    if mu0.dim() != mk.dim() {
        return Err(MinimizeError::Dimension {
            measure: mu0.dim(),
            kernel: mk.dim(),
        });
    }
    let w = mu0.weights();
    let d = mu0.dim();
    let weighted_dot = |a: &[f64], b: &[f64]| -> f64 {
        (0..w.len())
            .map(|i| w[i] * (0..d).map(|k| a[i * d + k] * b[i * d + k]).sum::<f64>())
            .sum()
    };

    let mut trace = EnergyTrace::new(d);
    let mut mu = mu0.clone();
    let mut e = mollified_energy(&mu, mk);
    let mut v = velocity_field(&mu, mk);
    let mut slope2 = kinetic_energy(&mu, &v);
    trace.rows.push(make_row(0.0, &mu, e, slope2, slope2));

    let scale = mu.support_radius().max(mk.eps());
    let mut step = (0.1 * scale / slope2.sqrt().max(1e-300)).min(1.0);
    let mut iterations = 0;
    let mut status = MinimizeStatus::MaxIterations;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    loop {
        if slope2.sqrt() <= opts.tol {
            status = MinimizeStatus::Converged;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        if let Some((px, pv)) = &prev {
            let dx: Vec<f64> = mu.positions().iter().zip(px).map(|(a, b)| a - b).collect();
            // The energy gradient is -m v, so y = -(v - v_prev) in the weighted metric.
            let dy: Vec<f64> = v.iter().zip(pv).map(|(a, b)| b - a).collect();
            let sy = weighted_dot(&dx, &dy);
            if sy > 0.0 {
                step = (weighted_dot(&dx, &dx) / sy).clamp(1e-12, 1e6);
            } else {
                step = (2.0 * step).min(1e6);
            }
        }
        let mut accepted = None;
        let mut trial = step;
        while trial > 0.0 {
            let x = axpy(mu.positions(), trial, &v);
            if let Ok(candidate) = mu.with_positions(x) {
                let ec = mollified_energy(&candidate, mk);
                if ec.total <= e.total - opts.armijo * trial * slope2 && ec.total < e.total {
                    accepted = Some((candidate, ec, trial));
                    break;
                }
            }
            trial *= 0.5;
            if trial < 1e-30 * step.max(1.0) {
                break;
            }
        }
        let Some((next, ec, taken)) = accepted else {
            warn!("line search stalled after {iterations} iterations at slope {}", slope2.sqrt());
            status = MinimizeStatus::Stagnated;
            break;
        };
        prev = Some((mu.positions().to_vec(), v));
        mu = next;
        e = ec;
        v = velocity_field(&mu, mk);
        slope2 = kinetic_energy(&mu, &v);
        step = taken;
        iterations += 1;
        trace.rows.push(make_row(iterations as f64, &mu, e, slope2, slope2));
    }
    Ok(MinimizeResult {
        measure: mu,
        trace,
        iterations,
        status,
        energy: e,
        slope: slope2.sqrt(),
    })
}

#[derive(Debug, Clone)]
pub struct ContinuationStep {
    pub eps: f64,
    pub minimizer: ParticleMeasure,
    pub energy: f64,
    pub iterations: usize,
    pub status: MinimizeStatus,
}

#[derive(Debug)]
pub struct ContinuationPath {
    pub steps: Vec<ContinuationStep>,
    /// Why the path stopped before the end of the schedule.
    pub failure: Option<MinimizeError>,
}

/// Minimizes `E_ε` for each `ε` of a strictly decreasing schedule, each run
/// warm-started from the previous minimizer.
pub fn continuation_minimize(
    mu0: &ParticleMeasure,
    kernel: &KernelSpec,
    kind: MollifierKind,
    schedule: &[f64],
    opts: &MinimizeOptions,
    params: &TabulationParams,
) -> Result<ContinuationPath, MinimizeError> {
    if schedule.is_empty() || schedule.iter().any(|e| !(*e > 0.0)) {
        return Err(MinimizeError::Options("schedule must be non-empty and positive".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(MinimizeError::Options("schedule must be strictly decreasing".into()));
    }
    let mut steps = Vec::new();
    let mut start = mu0.clone();
    for &eps in schedule {
        let mk = match MollifiedKernel::build(kernel, kind, eps, params) {
            Ok(mk) => mk,
            Err(e) => {
                return Ok(ContinuationPath {
                    steps,
                    failure: Some(e.into()),
                })
            }
        };
        let res = match minimize_energy(&start, &mk, opts) {
            Ok(r) => r,
            Err(e) => return Ok(ContinuationPath { steps, failure: Some(e) }),
        };
        info!(
            "eps = {eps}: E = {} after {} iterations ({:?})",
            res.energy.total, res.iterations, res.status
        );
        start = res.measure.clone();
        steps.push(ContinuationStep {
            eps,
            minimizer: res.measure,
            energy: res.energy.total,
            iterations: res.iterations,
            status: res.status,
        });
    }
    Ok(ContinuationPath { steps, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Repulsion;
    use crate::rng::SeededRng;

    fn kernel(eps: f64) -> MollifiedKernel {
        let k = KernelSpec::power_law(3, Repulsion::Power(-1.0), 2.0).unwrap();
        MollifiedKernel::build(&k, MollifierKind::GaussianHeat, eps, &TabulationParams::default()).unwrap()
    }

    fn cloud(seed: u64, n: usize) -> ParticleMeasure {
        let mut rng = SeededRng::new(seed);
        ParticleMeasure::uniform(3, (0..3 * n).map(|_| 0.5 * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = FlowConfig {
            dt: 0.0,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(FlowConfig::default().validate().is_ok());
    }

    #[test]
    fn energy_decreases_and_com_is_fixed() {
        let mk = kernel(0.1);
        let mu = cloud(4, 20);
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 0.2,
            trace_every: 20,
            ..FlowConfig::default()
        };
        let (out, trace) = integrate_flow(&mu, &mk, &cfg).unwrap();
        assert_eq!(out.weights(), mu.weights());
        assert_eq!(trace.rows.len(), 11);
        for w in trace.rows.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
        let (c0, c1) = (&trace.rows[0].center_of_mass, &trace.last().unwrap().center_of_mass);
        assert!(c0.iter().zip(c1).all(|(a, b)| (a - b).abs() < 1e-13));
        assert_eq!(trace.last().unwrap().t, 0.2);
    }

    #[test]
    fn adaptive_reaches_end_time() {
        let mk = kernel(0.2);
        let mu = cloud(9, 10);
        let cfg = FlowConfig {
            scheme: Scheme::Adaptive,
            dt: 0.05,
            t_end: 0.3,
            trace_every: 1,
            ..FlowConfig::default()
        };
        let (_, trace) = integrate_flow(&mu, &mk, &cfg).unwrap();
        assert_eq!(trace.last().unwrap().t, 0.3);
    }

    #[test]
    fn minimizer_energy_is_monotone() {
        let mk = kernel(0.1);
        let res = minimize_energy(&cloud(1, 30), &mk, &MinimizeOptions { tol: 1e-5, max_iter: 2000, armijo: 1e-4 }).unwrap();
        for w in res.trace.rows.windows(2) {
            assert!(w[1].energy < w[0].energy);
        }
        assert_eq!(res.status, MinimizeStatus::Converged);
    }

    #[test]
    fn trace_csv_header() {
        let t = EnergyTrace::new(2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,E,Ea,Er,slope2,kinetic,M2,com_1,com_2\n");
    }

    #[test]
    fn schedule_must_decrease() {
        let k = KernelSpec::power_law(3, Repulsion::Power(-1.0), 2.0).unwrap();
        let err = continuation_minimize(
            &cloud(1, 3),
            &k,
            MollifierKind::GaussianHeat,
            &[0.1, 0.2],
            &MinimizeOptions::default(),
            &TabulationParams::default(),
        );
        assert!(matches!(err, Err(MinimizeError::Options(_))));
    }
}
