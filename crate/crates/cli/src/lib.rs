pub mod config;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use blobflow::dynamics::{continuation_minimize, integrate_flow, minimize_energy, EnergyTrace, FlowError, MinimizeStatus};
use blobflow::experiments::{
    seeded_cloud, study_figure1, study_liminf, study_minimizer_convergence, study_monotonicity, study_recovery, Figure1Options,
    LiminfOptions, MinimizerStudyOptions, RecoveryOptions, StudyError, StudyReport,
};
use blobflow::measures::{init_particles, DensityKind, DensitySpec, InitMode, ParticleMeasure};
use blobflow::mollification::MollifiedKernel;
use blobflow::transport::w2_exact;
use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_config, ConfigError, DensityChoice, InitChoice, RunConfig, StudyName};

pub const VERSION: &str = concat!("blobflow ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "blobflow", version, about = "Mollified interaction energies, blob-method flows and W2 distances")]
pub struct Cli {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `measure.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the global pool.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded, bit-reproducible flows.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the blob-method flow; writes final.csv, trace.csv, manifest.txt.
    Simulate,
    /// Minimize the mollified energy (continuation if `mollifier.schedule` is set).
    Minimize,
    /// Exact W2 between two particle CSVs; prints `cost,distance`.
    Distance {
        first: PathBuf,
        second: PathBuf,
        /// Also write the optimal plan to plan.csv.
        #[arg(long)]
        plan: bool,
    },
    /// Write the mollified kernel table and its metadata sidecar.
    MollifyTable,
    /// Run a convergence study and write its report.
    GammaSweep {
        #[arg(long, value_parser = ["monotonicity", "recovery", "minimizers", "figure1", "liminf"])]
        study: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("study `{0}` failed its verdict")]
    Verdict(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
            CliError::Verdict(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads the config file (if any) and applies the global flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Vec<String>), CliError> {
    let (mut config, warnings) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let parsed = parse_config(&text)?;
            (parsed.config, parsed.warnings)
        }
        None => (RunConfig::default(), Vec::new()),
    };
    if let Some(o) = &cli.out {
        config.output = o.clone();
    }
    if let Some(s) = cli.seed {
        config.measure.seed = s;
    }
    if cli.deterministic {
        config.dynamics.flow.deterministic = true;
    }
    Ok((config, warnings))
}

fn density(config: &RunConfig, dim: usize) -> Result<DensitySpec, CliError> {
    let m = &config.measure;
    let spec = match m.density {
        DensityChoice::Ball => DensitySpec::uniform_ball(dim, m.radius),
        DensityChoice::Figure1 => DensitySpec::figure1(dim),
        DensityChoice::Box => DensitySpec::new(
            DensityKind::UniformBox {
                lower: m.lower.clone(),
                upper: m.upper.clone(),
            },
            dim,
        ),
        DensityChoice::Csv => return Err(CliError::Usage("this command needs an analytic density, not measure.density = csv".into())),
    };
    spec.map_err(|e| ConfigError::Invalid(e.to_string()).into())
}

/// The initial particle measure described by the `measure` section.
pub fn initial_measure(config: &RunConfig, dim: usize) -> Result<ParticleMeasure, CliError> {
    let m = &config.measure;
    let invalid = |e: blobflow::measures::MeasureError| CliError::Config(ConfigError::Invalid(e.to_string()));
    if m.density == DensityChoice::Csv {
        let p = PathBuf::from(&m.path);
        let f = fs::File::open(&p).map_err(io_err(&p))?;
        let mu = ParticleMeasure::read_csv(BufReader::new(f)).map_err(invalid)?;
        if mu.dim() != dim {
            return Err(ConfigError::Invalid(format!("{} holds {}-d points but kernel.dim = {dim}", m.path, mu.dim())).into());
        }
        return Ok(mu);
    }
    if m.mode == InitChoice::Gaussian {
        return seeded_cloud(dim, m.n, m.spread, m.seed).map_err(invalid);
    }
    let rho = density(config, dim)?;
    let mode = match m.mode {
        InitChoice::Grid => InitMode::GridWeighted,
        _ => InitMode::MonteCarlo { seed: m.seed },
    };
    init_particles(&rho, m.n, mode).map_err(invalid)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn write_measure(dir: &Path, name: &str, mu: &ParticleMeasure) -> Result<(), CliError> {
    let p = dir.join(name);
    let mut w = create(&p)?;
    mu.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&p))
}

fn write_trace(dir: &Path, trace: &EnergyTrace) -> Result<(), CliError> {
    let p = dir.join("trace.csv");
    let mut w = create(&p)?;
    trace.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&p))
}

/// Replay manifest: comment header plus the resolved configuration, which
/// `--config` reads back unchanged.
pub fn manifest(config: &RunConfig, command: &str) -> String {
    format!("# {VERSION}\n# command: {command}\n{}", config.render())
}

fn write_manifest(config: &RunConfig, command: &str) -> Result<(), CliError> {
    let p = config.output.join("manifest.txt");
    fs::write(&p, manifest(config, command)).map_err(io_err(&p))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let d = config.output.clone();
    fs::create_dir_all(&d).map_err(io_err(&d))?;
    Ok(d)
}

fn mollified(config: &RunConfig, eps: f64) -> Result<(blobflow::kernels::KernelSpec, MollifiedKernel), CliError> {
    let k = config.kernel.spec()?;
    let mk = MollifiedKernel::build(&k, config.mollifier.kind, eps, &config.mollifier.tabulation)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok((k, mk))
}

fn simulate(config: &RunConfig) -> Result<(), CliError> {
    let (_, mk) = mollified(config, config.mollifier.eps)?;
    let mu0 = initial_measure(config, config.kernel.dim)?;
    let dir = out_dir(config)?;
    write_manifest(config, "simulate")?;
    match integrate_flow(&mu0, &mk, &config.dynamics.flow) {
        Ok((mu, trace)) => {
            write_measure(&dir, "final.csv", &mu)?;
            write_trace(&dir, &trace)
        }
        Err(FlowError::Config(m)) => Err(ConfigError::Invalid(m).into()),
        Err(e @ FlowError::Divergence { .. }) => {
            if let FlowError::Divergence { last_good, trace, .. } = &e {
                write_measure(&dir, "final.csv", last_good)?;
                write_trace(&dir, trace)?;
            }
            Err(CliError::Numerical(e.to_string()))
        }
        Err(e) => Err(CliError::Numerical(e.to_string())),
    }
}

fn minimize(config: &RunConfig) -> Result<(), CliError> {
    let mu0 = initial_measure(config, config.kernel.dim)?;
    let dir = out_dir(config)?;
    write_manifest(config, "minimize")?;
    let opts = &config.dynamics.minimize;
    let numerical = |e: blobflow::dynamics::MinimizeError| CliError::Numerical(e.to_string());
    if config.mollifier.schedule.is_empty() {
        let (_, mk) = mollified(config, config.mollifier.eps)?;
        let res = minimize_energy(&mu0, &mk, opts).map_err(numerical)?;
        write_measure(&dir, "final.csv", &res.measure)?;
        write_trace(&dir, &res.trace)?;
        if res.status != MinimizeStatus::Converged {
            return Err(CliError::Numerical(format!(
                "minimizer stopped with status {:?} after {} iterations (slope {:e})",
                res.status, res.iterations, res.slope
            )));
        }
        return Ok(());
    }
    let k = config.kernel.spec()?;
    let path = continuation_minimize(&mu0, &k, config.mollifier.kind, &config.mollifier.schedule, opts, &config.mollifier.tabulation)
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    let p = dir.join("path.csv");
    let mut w = create(&p)?;
    let mut body = String::from("eps,energy,iterations,status\n");
    for s in &path.steps {
        body.push_str(&format!("{:?},{:?},{},{:?}\n", s.eps, s.energy, s.iterations, s.status));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&p))?;
    if let Some(last) = path.steps.last() {
        write_measure(&dir, "final.csv", &last.minimizer)?;
    }
    if let Some(f) = path.failure {
        return Err(numerical(f));
    }
    match path.steps.iter().find(|s| s.status != MinimizeStatus::Converged) {
        Some(s) => Err(CliError::Numerical(format!("stage eps = {} stopped with status {:?}", s.eps, s.status))),
        None => Ok(()),
    }
}

fn read_measure(p: &Path) -> Result<ParticleMeasure, CliError> {
    let f = fs::File::open(p).map_err(io_err(p))?;
    ParticleMeasure::read_csv(BufReader::new(f)).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

fn distance(config: &RunConfig, a: &Path, b: &Path, plan: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mu = read_measure(a)?;
    let nu = read_measure(b)?;
    let res = w2_exact(&mu, &nu).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(stdout, "{:?},{:?}", res.cost, res.distance).map_err(io_err(Path::new("<stdout>")))?;
    if plan {
        let dir = out_dir(config)?;
        let p = dir.join("plan.csv");
        let mut w = create(&p)?;
        let mut body = String::from("i,j,mass\n");
        for (i, j, m) in &res.pairs {
            body.push_str(&format!("{i},{j},{m:?}\n"));
        }
        w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&p))?;
    }
    Ok(())
}

fn mollify_table(config: &RunConfig) -> Result<(), CliError> {
    let (_, mk) = mollified(config, config.mollifier.eps)?;
    let dir = out_dir(config)?;
    let p = dir.join("table.csv");
    let mut body = String::from("r,K_eps,dK_eps_dr\n");
    for ((r, v), d) in mk.radii().iter().zip(mk.values()).zip(mk.dvalues()) {
        body.push_str(&format!("{r:?},{v:?},{d:?}\n"));
    }
    fs::write(&p, body).map_err(io_err(&p))?;
    let meta = format!(
        "{}# eps = {:?}\n# lambda_estimate = {:?}\n# convexity_constant = {:?}\n# origin_value = {:?}\n# tail_switch_radius = {:?}\n",
        manifest(config, "mollify-table"),
        mk.eps(),
        mk.lambda_estimate(),
        mk.convexity_constant(),
        mk.origin_value(),
        mk.tail_switch_radius()
    );
    let p = dir.join("table.meta.txt");
    fs::write(&p, meta).map_err(io_err(&p))
}

fn schedule_or(config: &RunConfig, default: &[f64]) -> Vec<f64> {
    if config.mollifier.schedule.is_empty() {
        default.to_vec()
    } else {
        config.mollifier.schedule.clone()
    }
}

/// Runs one study from the configuration.
pub fn run_study(config: &RunConfig, name: StudyName) -> Result<StudyReport, CliError> {
    let dim = config.kernel.dim;
    let th = &config.study.thresholds;
    let tab = &config.mollifier.tabulation;
    let study_err = |e: StudyError| match e {
        StudyError::Input(m) => CliError::Config(ConfigError::Invalid(m)),
        StudyError::Mollify(m) => CliError::Config(ConfigError::Invalid(m.to_string())),
        other => CliError::Numerical(other.to_string()),
    };
    let report = match name {
        StudyName::Monotonicity => {
            let k = config.kernel.spec()?;
            let mu = initial_measure(config, dim)?;
            study_monotonicity(&mu, &k, &schedule_or(config, &[0.4, 0.2, 0.1, 0.05]), tab, th)
        }
        StudyName::Recovery => {
            let k = config.kernel.spec()?;
            let rho = density(config, dim)?;
            let opts = RecoveryOptions {
                mollifier: config.mollifier.kind,
                pairs: config.study.pairs,
                seed: config.measure.seed,
                reference_cells: config.study.reference_cells,
            };
            study_recovery(&rho, &k, &schedule_or(config, &[0.16, 0.08, 0.04, 0.02]), &opts, th)
        }
        StudyName::Minimizers => {
            let k = config.kernel.spec()?;
            let target = DensitySpec::uniform_ball(dim, 1.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let opts = MinimizerStudyOptions {
                mollifier: config.mollifier.kind,
                seed: config.measure.seed,
                spread: config.measure.spread,
                minimize: config.dynamics.minimize,
                reference_cells: config.study.reference_cells,
            };
            study_minimizer_convergence(&k, &target, &schedule_or(config, &[0.2, 0.1, 0.05]), config.measure.n, &opts, tab, th)
        }
        StudyName::Figure1 => {
            let opts = Figure1Options {
                particles: config.measure.n,
                seed: config.measure.seed,
                init: match config.measure.mode {
                    InitChoice::Grid => InitMode::GridWeighted,
                    _ => InitMode::MonteCarlo { seed: config.measure.seed },
                },
                flow: config.dynamics.flow.clone(),
                bins: config.study.bins,
                inner_bins: config.study.inner_bins,
            };
            study_figure1(&schedule_or(config, &[0.2, 0.1, 0.03]), &opts, tab, th)
        }
        StudyName::Liminf => {
            let k = config.kernel.spec()?;
            let mu = initial_measure(config, dim)?;
            let opts = LiminfOptions {
                mollifier: config.mollifier.kind,
                seeds: config.study.seeds,
                jitter: config.study.jitter,
            };
            study_liminf(&mu, &k, &schedule_or(config, &[0.4, 0.2, 0.1, 0.05]), &opts, tab, th)
        }
    };
    report.map_err(study_err)
}

fn gamma_sweep(config: &RunConfig, name: StudyName, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut report = run_study(config, name)?;
    let dir = out_dir(config)?;
    write_manifest(config, &format!("gamma-sweep --study {}", name.name()))?;
    report.write(&dir).map_err(|e| match e {
        StudyError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Numerical(other.to_string()),
    })?;
    let _ = stdout.write_all(report.render_text().as_bytes());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Verdict(name.name().into()))
    }
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // Fails only if the pool already exists (repeated calls in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (mut config, warnings) = resolve_config(cli)?;
    for w in warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    match &cli.command {
        Command::Simulate => simulate(&config),
        Command::Minimize => minimize(&config),
        Command::Distance { first, second, plan } => distance(&config, first, second, *plan, stdout),
        Command::MollifyTable => mollify_table(&config),
        Command::GammaSweep { study } => {
            if let Some(s) = study {
                config.study.name = StudyName::parse(s).expect("clap restricts the values");
            }
            let name = config.study.name;
            gamma_sweep(&config, name, stdout)
        }
    }
}

/// Full entry point: parses `args`, runs, and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

