//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use blobflow::dynamics::{FlowConfig, MinimizeOptions, Scheme};
use blobflow::experiments::Thresholds;
use blobflow::kernels::{KernelSpec, MorseParams, Repulsion};
use blobflow::mollification::{MollifierKind, TabulationParams};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` expects {expected}, got {value:?}")]
    Type {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    PowerLaw,
    Morse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub dim: usize,
    pub p: Repulsion,
    pub q: f64,
    pub morse: MorseParams,
}

impl KernelConfig {
    pub fn spec(&self) -> Result<KernelSpec, ConfigError> {
        let k = match self.family {
            KernelFamily::PowerLaw => KernelSpec::power_law(self.dim, self.p, self.q),
            KernelFamily::Morse => KernelSpec::morse(self.dim, self.morse),
        }
        .map_err(|e| ConfigError::Kernel(e.to_string()))?;
        k.validate().map_err(|e| ConfigError::Kernel(e.to_string()))?;
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MollifierConfig {
    pub kind: MollifierKind,
    pub eps: f64,
    /// Empty means "use the subcommand's default".
    pub schedule: Vec<f64>,
    pub tabulation: TabulationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityChoice {
    Ball,
    Figure1,
    Box,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitChoice {
    Grid,
    MonteCarlo,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub density: DensityChoice,
    pub radius: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub path: String,
    pub n: usize,
    pub mode: InitChoice,
    pub seed: u64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub flow: FlowConfig,
    pub minimize: MinimizeOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyName {
    Monotonicity,
    Recovery,
    Minimizers,
    Figure1,
    Liminf,
}

impl StudyName {
    pub const ALL: [StudyName; 5] = [
        StudyName::Monotonicity,
        StudyName::Recovery,
        StudyName::Minimizers,
        StudyName::Figure1,
        StudyName::Liminf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyName::Monotonicity => "monotonicity",
            StudyName::Recovery => "recovery",
            StudyName::Minimizers => "minimizers",
            StudyName::Figure1 => "figure1",
            StudyName::Liminf => "liminf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        StudyName::ALL.into_iter().find(|n| n.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub name: StudyName,
    pub thresholds: Thresholds,
    pub pairs: usize,
    pub seeds: u64,
    pub jitter: f64,
    pub reference_cells: usize,
    pub bins: usize,
    pub inner_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub mollifier: MollifierConfig,
    pub measure: MeasureConfig,
    pub dynamics: DynamicsConfig,
    pub study: StudyConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelConfig {
                family: KernelFamily::PowerLaw,
                dim: 3,
                p: Repulsion::Power(-1.0),
                q: 2.0,
                morse: MorseParams {
                    c_r: 2.0,
                    c_a: 1.0,
                    l_r: 0.5,
                    l_a: 1.0,
                },
            },
            mollifier: MollifierConfig {
                kind: MollifierKind::GaussianHeat,
                eps: 0.1,
                schedule: Vec::new(),
                tabulation: TabulationParams::default(),
            },
            measure: MeasureConfig {
                density: DensityChoice::Ball,
                radius: 0.5,
                lower: vec![-0.5, -0.5, -0.5],
                upper: vec![0.5, 0.5, 0.5],
                path: String::new(),
                n: 100,
                mode: InitChoice::MonteCarlo,
                seed: 0,
                spread: 0.5,
            },
            dynamics: DynamicsConfig {
                flow: FlowConfig {
                    scheme: Scheme::Rk4,
                    dt: 0.01,
                    t_end: 1.0,
                    trace_every: 10,
                    deterministic: false,
                    adaptive_tol: 1e-8,
                    steady_slope: None,
                },
                minimize: MinimizeOptions::default(),
            },
            study: StudyConfig {
                name: StudyName::Monotonicity,
                thresholds: Thresholds::default(),
                pairs: 200_000,
                seeds: 50,
                jitter: 1e-3,
                reference_cells: 64,
                bins: 10,
                inner_bins: 8,
            },
            output: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "kernel.family",
    "kernel.dim",
    "kernel.p",
    "kernel.q",
    "kernel.morse.c_r",
    "kernel.morse.c_a",
    "kernel.morse.l_r",
    "kernel.morse.l_a",
    "mollifier.kind",
    "mollifier.eps",
    "mollifier.schedule",
    "mollifier.n_tab",
    "mollifier.r_min_factor",
    "mollifier.r_max",
    "mollifier.tail_factor",
    "mollifier.rel_tol",
    "mollifier.tail_tol",
    "measure.density",
    "measure.radius",
    "measure.lower",
    "measure.upper",
    "measure.path",
    "measure.n",
    "measure.mode",
    "measure.seed",
    "measure.spread",
    "dynamics.scheme",
    "dynamics.dt",
    "dynamics.t_end",
    "dynamics.trace_every",
    "dynamics.deterministic",
    "dynamics.adaptive_tol",
    "dynamics.steady_slope",
    "dynamics.tol",
    "dynamics.max_iter",
    "dynamics.armijo",
    "study.name",
    "study.pairs",
    "study.seeds",
    "study.jitter",
    "study.reference_cells",
    "study.bins",
    "study.inner_bins",
    "study.monotone_slack",
    "study.recovery_final_gap",
    "study.minimizer_energy",
    "study.minimizer_radius",
    "study.figure1_density",
    "study.figure1_radius",
    "study.liminf_slack",
    "output.dir",
];

struct Value<'a> {
    line: usize,
    key: &'a str,
    raw: &'a str,
}

impl Value<'_> {
    fn err(&self, expected: &'static str) -> ConfigError {
        ConfigError::Type {
            line: self.line,
            key: self.key.to_string(),
            value: self.raw.to_string(),
            expected,
        }
    }

    fn f64(&self) -> Result<f64, ConfigError> {
        self.raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| self.err("a finite number"))
    }

    fn usize(&self) -> Result<usize, ConfigError> {
        self.raw.parse().map_err(|_| self.err("a non-negative integer"))
    }

    fn u64(&self) -> Result<u64, ConfigError> {
        self.raw.parse().map_err(|_| self.err("an unsigned 64-bit integer"))
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.raw {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err("true or false")),
        }
    }

    fn list(&self) -> Result<Vec<f64>, ConfigError> {
        if self.raw.is_empty() {
            return Ok(Vec::new());
        }
        self.raw
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.err("a comma-separated list of numbers"))
    }
}

impl RunConfig {
    fn set(&mut self, v: &Value) -> Result<(), ConfigError> {
        let t = &mut self.mollifier.tabulation;
        let th = &mut self.study.thresholds;
        let flow = &mut self.dynamics.flow;
        let min = &mut self.dynamics.minimize;
        match v.key {
            "kernel.family" => {
                self.kernel.family = match v.raw {
                    "power_law" => KernelFamily::PowerLaw,
                    "morse" => KernelFamily::Morse,
                    _ => return Err(v.err("power_law or morse")),
                }
            }
            "kernel.dim" => self.kernel.dim = v.usize()?,
            "kernel.p" => {
                self.kernel.p = if v.raw == "log" {
                    Repulsion::Log
                } else {
                    Repulsion::Power(v.f64().map_err(|_| v.err("a number or log"))?)
                }
            }
            "kernel.q" => self.kernel.q = v.f64()?,
            "kernel.morse.c_r" => self.kernel.morse.c_r = v.f64()?,
            "kernel.morse.c_a" => self.kernel.morse.c_a = v.f64()?,
            "kernel.morse.l_r" => self.kernel.morse.l_r = v.f64()?,
            "kernel.morse.l_a" => self.kernel.morse.l_a = v.f64()?,
            "mollifier.kind" => {
                self.mollifier.kind = match v.raw {
                    "gaussian" => MollifierKind::GaussianHeat,
                    "bump" => MollifierKind::CompactBump,
                    _ => return Err(v.err("gaussian or bump")),
                }
            }
            "mollifier.eps" => self.mollifier.eps = v.f64()?,
            "mollifier.schedule" => self.mollifier.schedule = v.list()?,
            "mollifier.n_tab" => t.n_tab = v.usize()?,
            "mollifier.r_min_factor" => t.r_min_factor = v.f64()?,
            "mollifier.r_max" => t.r_max = v.f64()?,
            "mollifier.tail_factor" => t.tail_factor = v.f64()?,
            "mollifier.rel_tol" => t.rel_tol = v.f64()?,
            "mollifier.tail_tol" => t.tail_tol = v.f64()?,
            "measure.density" => {
                self.measure.density = match v.raw {
                    "ball" => DensityChoice::Ball,
                    "figure1" => DensityChoice::Figure1,
                    "box" => DensityChoice::Box,
                    "csv" => DensityChoice::Csv,
                    _ => return Err(v.err("ball, figure1, box or csv")),
                }
            }
            "measure.radius" => self.measure.radius = v.f64()?,
            "measure.lower" => self.measure.lower = v.list()?,
            "measure.upper" => self.measure.upper = v.list()?,
            "measure.path" => self.measure.path = v.raw.to_string(),
            "measure.n" => self.measure.n = v.usize()?,
            "measure.mode" => {
                self.measure.mode = match v.raw {
                    "grid" => InitChoice::Grid,
                    "monte_carlo" => InitChoice::MonteCarlo,
                    "gaussian" => InitChoice::Gaussian,
                    _ => return Err(v.err("grid, monte_carlo or gaussian")),
                }
            }
            "measure.seed" => self.measure.seed = v.u64()?,
            "measure.spread" => self.measure.spread = v.f64()?,
            "dynamics.scheme" => {
                flow.scheme = match v.raw {
                    "rk4" => Scheme::Rk4,
                    "euler" => Scheme::Euler,
                    "adaptive" => Scheme::Adaptive,
                    _ => return Err(v.err("rk4, euler or adaptive")),
                }
            }
            "dynamics.dt" => flow.dt = v.f64()?,
            "dynamics.t_end" => flow.t_end = v.f64()?,
            "dynamics.trace_every" => flow.trace_every = v.usize()?,
            "dynamics.deterministic" => flow.deterministic = v.bool()?,
            "dynamics.adaptive_tol" => flow.adaptive_tol = v.f64()?,
            "dynamics.steady_slope" => {
                flow.steady_slope = if v.raw == "none" {
                    None
                } else {
                    Some(v.f64().map_err(|_| v.err("a number or none"))?)
                }
            }
            "dynamics.tol" => min.tol = v.f64()?,
            "dynamics.max_iter" => min.max_iter = v.usize()?,
            "dynamics.armijo" => min.armijo = v.f64()?,
            "study.name" => {
                self.study.name = StudyName::parse(v.raw)
                    .ok_or_else(|| v.err("monotonicity, recovery, minimizers, figure1 or liminf"))?
            }
            "study.pairs" => self.study.pairs = v.usize()?,
            "study.seeds" => self.study.seeds = v.u64()?,
            "study.jitter" => self.study.jitter = v.f64()?,
            "study.reference_cells" => self.study.reference_cells = v.usize()?,
            "study.bins" => self.study.bins = v.usize()?,
            "study.inner_bins" => self.study.inner_bins = v.usize()?,
            "study.monotone_slack" => th.monotone_slack = v.f64()?,
            "study.recovery_final_gap" => th.recovery_final_gap = v.f64()?,
            "study.minimizer_energy" => th.minimizer_energy = v.f64()?,
            "study.minimizer_radius" => th.minimizer_radius = v.f64()?,
            "study.figure1_density" => th.figure1_density = v.f64()?,
            "study.figure1_radius" => th.figure1_radius = v.f64()?,
            "study.liminf_slack" => th.liminf_slack = v.f64()?,
            "output.dir" => self.output = PathBuf::from(v.raw),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: v.line,
                    key: v.key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Checks cross-field constraints, including kernel admissibility.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.kernel.spec()?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.mollifier.eps > 0.0) || self.mollifier.schedule.iter().any(|e| !(*e > 0.0)) {
            return bad("mollifier widths must be positive");
        }
        if self.measure.n == 0 {
            return bad("measure.n must be positive");
        }
        if self.measure.density == DensityChoice::Csv && self.measure.path.is_empty() {
            return bad("measure.density = csv needs measure.path");
        }
        if self.study.inner_bins == 0 || self.study.inner_bins > self.study.bins {
            return bad("need 0 < study.inner_bins <= study.bins");
        }
        self.dynamics
            .flow
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// The resolved configuration in the same format `parse_config` reads.
    pub fn render(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let f = |x: f64| format!("{x:?}");
        let k = &self.kernel;
        let m = &self.mollifier;
        let t = &m.tabulation;
        let me = &self.measure;
        let fl = &self.dynamics.flow;
        let mi = &self.dynamics.minimize;
        let s = &self.study;
        let th = &s.thresholds;
        let values: Vec<String> = vec![
            match k.family {
                KernelFamily::PowerLaw => "power_law".into(),
                KernelFamily::Morse => "morse".into(),
            },
            k.dim.to_string(),
            match k.p {
                Repulsion::Log => "log".into(),
                Repulsion::Power(p) => f(p),
            },
            f(k.q),
            f(k.morse.c_r),
            f(k.morse.c_a),
            f(k.morse.l_r),
            f(k.morse.l_a),
            match m.kind {
                MollifierKind::GaussianHeat => "gaussian".into(),
                MollifierKind::CompactBump => "bump".into(),
            },
            f(m.eps),
            list(&m.schedule),
            t.n_tab.to_string(),
            f(t.r_min_factor),
            f(t.r_max),
            f(t.tail_factor),
            f(t.rel_tol),
            f(t.tail_tol),
            match me.density {
                DensityChoice::Ball => "ball".into(),
                DensityChoice::Figure1 => "figure1".into(),
                DensityChoice::Box => "box".into(),
                DensityChoice::Csv => "csv".into(),
            },
            f(me.radius),
            list(&me.lower),
            list(&me.upper),
            me.path.clone(),
            me.n.to_string(),
            match me.mode {
                InitChoice::Grid => "grid".into(),
                InitChoice::MonteCarlo => "monte_carlo".into(),
                InitChoice::Gaussian => "gaussian".into(),
            },
            me.seed.to_string(),
            f(me.spread),
            match fl.scheme {
                Scheme::Rk4 => "rk4".into(),
                Scheme::Euler => "euler".into(),
                Scheme::Adaptive => "adaptive".into(),
            },
            f(fl.dt),
            f(fl.t_end),
            fl.trace_every.to_string(),
            fl.deterministic.to_string(),
            f(fl.adaptive_tol),
            fl.steady_slope.map(f).unwrap_or_else(|| "none".into()),
            f(mi.tol),
            mi.max_iter.to_string(),
            f(mi.armijo),
            s.name.name().into(),
            s.pairs.to_string(),
            s.seeds.to_string(),
            f(s.jitter),
            s.reference_cells.to_string(),
            s.bins.to_string(),
            s.inner_bins.to_string(),
            f(th.monotone_slack),
            f(th.recovery_final_gap),
            f(th.minimizer_energy),
            f(th.minimizer_radius),
            f(th.figure1_density),
            f(th.figure1_radius),
            f(th.liminf_slack),
            self.output.display().to_string(),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for (key, value) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Parsed configuration plus warnings (duplicate keys).
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<Parsed, ConfigError> {
    let mut config = RunConfig::default();
    let mut warnings = Vec::new();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !key.contains('.') {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if let Some((_, prev)) = seen.iter().find(|(k, _)| k == key) {
            let w = format!("line {line}: duplicate key `{key}` (first set on line {prev}); last value wins");
            warnings.push(w);
        } else {
            seen.push((key.to_string(), line));
        }
        config.set(&Value {
            line,
            key,
            raw: value.trim(),
        })?;
    }
    config.validate()?;
    Ok(Parsed { config, warnings })
}
