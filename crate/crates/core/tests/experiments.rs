use blobflow::dynamics::{FlowConfig, Scheme};
use blobflow::experiments::{
    fit_loglog_slope, recovery_width, seeded_cloud, study_figure1, study_liminf, study_minimizer_convergence,
    study_monotonicity, study_recovery, Figure1Options, LiminfOptions, MinimizerStudyOptions, RecoveryOptions, Thresholds,
};
use blobflow::kernels::{KernelSpec, Repulsion};
use blobflow::measures::{DensitySpec, InitMode, ParticleMeasure};
use blobflow::mollification::{MollifiedKernel, MollifierKind, TabulationParams};
use proptest::prelude::*;

fn newton() -> KernelSpec {
    KernelSpec::power_law(3, Repulsion::Power(-1.0), 2.0).unwrap()
}

proptest! {
    #[test]
    fn loglog_fit_is_exact_on_power_laws(c in 0.1f64..10.0, a in -4.0f64..4.0) {
        let x = [0.02f64, 0.05, 0.1, 0.3, 1.0];
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(a)).collect();
        prop_assert!((fit_loglog_slope(&x, &y) - a).abs() < 1e-10);
    }
}

#[test]
fn recovery_width_is_root_of_eps() {
    assert!((recovery_width(0.001, 3) - 0.001f64.powf(1.0 / 6.0)).abs() < 1e-15);
    assert!((recovery_width(0.01, 1) - 0.1).abs() < 1e-15);
}

#[test]
fn single_dirac_is_monotone() {
    let eps = [0.05, 0.4, 0.1, 0.2];
    let mu = ParticleMeasure::dirac(&[0.1, 0.2, 0.3]);
    let r = study_monotonicity(&mu, &newton(), &eps, &TabulationParams::default(), &Thresholds::default()).unwrap();
    assert!(r.passed(), "{}", r.render_text());
    // Rows come out with eps descending.
    assert_eq!(r.column("eps").unwrap(), vec![0.4, 0.2, 0.1, 0.05]);
    for row in &r.rows {
        let mk = MollifiedKernel::build(&newton(), MollifierKind::GaussianHeat, row[0], &TabulationParams::default()).unwrap();
        assert!((row[1] - mk.eval_parts(0.0).1).abs() <= 1e-12 * row[1]);
    }
}

#[test]
fn two_point_liminf() {
    let target = ParticleMeasure::uniform(3, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let opts = LiminfOptions {
        seeds: 10,
        ..LiminfOptions::default()
    };
    let r = study_liminf(&target, &newton(), &[0.4, 0.2, 0.1, 0.05], &opts, &TabulationParams::default(), &Thresholds::default())
        .unwrap();
    assert!(r.passed(), "{}", r.render_text());
    // E_offdiag = 2 · ¼ · K(1) = ½ (1/2 - (-1)) = 3/4.
    let e_off: f64 = r.parameters.iter().find(|(k, _)| k == "offdiagonal_energy").unwrap().1.parse().unwrap();
    assert!((e_off - 0.75).abs() < 1e-14);
    let diag = r.column("diagonal").unwrap();
    assert!(diag.windows(2).all(|w| w[1] > w[0]));
    // For well-separated points the kernel error decays with eps.
    let res = r.column("off_diagonal_residual").unwrap();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    assert_eq!(r.verdicts.len(), 2);
}

#[test]
fn recovery_attractive_identity_on_small_run() {
    let rho = DensitySpec::uniform_ball(3, 1.0).unwrap();
    let opts = RecoveryOptions {
        pairs: 20_000,
        reference_cells: 24,
        ..RecoveryOptions::default()
    };
    let r = study_recovery(&rho, &newton(), &[0.3, 0.1], &opts, &Thresholds::default()).unwrap();
    let v = r.verdict("attractive gap matches the added second moment (largest z-score)").unwrap();
    assert!(v.passed, "{}", r.render_text());
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.verdicts.len(), 3);
    for row in &r.rows {
        assert!((row[1] - recovery_width(row[0], 3)).abs() < 1e-15);
    }
}

#[test]
fn minimizer_study_on_small_cloud() {
    let target = DensitySpec::uniform_ball(3, 1.0).unwrap();
    let opts = MinimizerStudyOptions {
        reference_cells: 16,
        ..MinimizerStudyOptions::default()
    };
    let r = study_minimizer_convergence(&newton(), &target, &[0.2, 0.1], 30, &opts, &TabulationParams::default(), &Thresholds::default())
        .unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.verdicts.len(), 3);
    assert!(r.column("slope_converged").unwrap().iter().all(|&c| c == 1.0));
    for row in &r.rows {
        assert!(row[3].is_finite() && row[3] > 0.0);
        // M₂ ≤ R², so the moment radius is at most sqrt(5/3) R.
        assert!(row[5] <= row[4] * (1.0 + 1e-12) * (5.0f64 / 3.0).sqrt());
    }
}

#[test]
fn figure1_short_run_and_report_files() {
    let opts = Figure1Options {
        particles: 120,
        init: InitMode::MonteCarlo { seed: 3 },
        flow: FlowConfig {
            scheme: Scheme::Rk4,
            dt: 0.02,
            t_end: 0.5,
            trace_every: 5,
            deterministic: true,
            adaptive_tol: 1e-8,
            steady_slope: None,
        },
        ..Figure1Options::default()
    };
    let mut r = study_figure1(&[0.3, 0.15], &opts, &TabulationParams::default(), &Thresholds::default()).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.verdict("mass deviation from 1").unwrap().passed);
    assert_eq!(r.columns.len(), 7 + opts.bins);
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(',').count(), r.columns.len());
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let verdict_lines = report.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).count();
    assert_eq!(verdict_lines, r.verdicts.len());
}

#[test]
fn seeded_cloud_is_reproducible() {
    assert_eq!(seeded_cloud(2, 10, 0.5, 9).unwrap(), seeded_cloud(2, 10, 0.5, 9).unwrap());
    assert_ne!(seeded_cloud(2, 10, 0.5, 9).unwrap(), seeded_cloud(2, 10, 0.5, 10).unwrap());
}
