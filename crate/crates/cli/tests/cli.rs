use std::fs;
use std::path::Path;

use blobflow_cli::config::{parse_config, ConfigError, RunConfig};
use proptest::prelude::*;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["blobflow"];
    full.extend_from_slice(args);
    let code = blobflow_cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_config_gives_defaults() {
    let parsed = parse_config("").unwrap();
    assert_eq!(parsed.config, RunConfig::default());
    assert!(parsed.warnings.is_empty());
    let parsed = parse_config("# only a comment\n\n   \n").unwrap();
    assert_eq!(parsed.config, RunConfig::default());
}

#[test]
fn negative_attraction_power_is_rejected() {
    let err = parse_config("kernel.p = -1\nkernel.q = -2\n").unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, ConfigError::Kernel(_)));
    assert!(msg.contains("(E2)") && msg.contains("q > 0"), "{msg}");
}

#[test]
fn unknown_key_is_named() {
    let err = parse_config("mollifier.eps = 0.2\nkernel.frobz = 1\n").unwrap_err();
    assert_eq!(
        err,
        ConfigError::UnknownKey {
            line: 2,
            key: "kernel.frobz".into()
        }
    );
}

#[test]
fn type_mismatch_reports_line() {
    let err = parse_config("# header\nmeasure.n = 12\ndynamics.dt = fast\n").unwrap_err();
    match err {
        ConfigError::Type { line, key, .. } => {
            assert_eq!(line, 3);
            assert_eq!(key, "dynamics.dt");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_config("just words\n"), Err(ConfigError::Syntax { line: 1, .. })));
}

#[test]
fn duplicate_key_last_wins_with_warning() {
    let parsed = parse_config("mollifier.eps = 0.3\nmollifier.eps = 0.05\n").unwrap();
    assert_eq!(parsed.config.mollifier.eps, 0.05);
    assert_eq!(parsed.warnings.len(), 1);
    assert!(parsed.warnings[0].contains("mollifier.eps"));
}

#[test]
fn log_kernel_and_schedule_parse() {
    let c = parse_config("kernel.dim = 2\nkernel.p = log\nmollifier.kind = bump\nmollifier.schedule = 0.2, 0.1,0.03\n")
        .unwrap()
        .config;
    assert_eq!(c.kernel.p, blobflow::kernels::Repulsion::Log);
    assert_eq!(c.mollifier.schedule, vec![0.2, 0.1, 0.03]);
    assert_eq!(parse_config(&c.render()).unwrap().config, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn echoed_config_round_trips(
        eps in 1e-3f64..1.0,
        dt in 1e-5f64..0.1,
        n in 1usize..5000,
        seed in any::<u64>(),
        q in 0.5f64..2.0,
        p in -1.5f64..-0.1,
        sched in proptest::collection::vec(1e-3f64..1.0, 0..4),
        steady in proptest::option::of(1e-9f64..1e-2),
    ) {
        let mut c = RunConfig::default();
        c.mollifier.eps = eps;
        c.mollifier.schedule = sched;
        c.dynamics.flow.dt = dt;
        c.dynamics.flow.steady_slope = steady;
        c.measure.n = n;
        c.measure.seed = seed;
        c.kernel.q = q;
        c.kernel.p = blobflow::kernels::Repulsion::Power(p);
        prop_assume!(c.validate().is_ok());
        let back = parse_config(&c.render()).unwrap();
        prop_assert_eq!(back.config, c);
        prop_assert!(back.warnings.is_empty());
    }
}

#[test]
fn simulate_writes_exactly_three_files_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.txt");
    fs::write(&cfg, "measure.n = 24\ndynamics.t_end = 0.2\ndynamics.trace_every = 2\n").unwrap();
    let a = tmp.path().join("a");
    let (code, _, err) = run(&["--config", s(&cfg), "--out", s(&a), "--seed", "9", "--deterministic", "simulate"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(listing(&a), ["final.csv", "manifest.txt", "trace.csv"]);
    // Nothing written beside the config and the output directory.
    assert_eq!(listing(tmp.path()), ["a", "run.txt"]);

    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("measure.seed = 9"));
    assert!(manifest.contains("dynamics.deterministic = true"));

    let b = tmp.path().join("b");
    let (code, _, err) = run(&["--config", s(&a.join("manifest.txt")), "--out", s(&b), "--threads", "2", "simulate"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(fs::read(a.join("final.csv")).unwrap(), fs::read(b.join("final.csv")).unwrap());

    let header = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(header.starts_with("t,E,Ea,Er,slope2,kinetic,M2,com_1,com_2,com_3\n"));
}

#[test]
fn distance_prints_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "x1,w\n0.0,0.5\n1.0,0.5\n").unwrap();
    fs::write(&b, "x1,w\n0.5,0.5\n1.5,0.5\n").unwrap();
    let out = tmp.path().join("o");
    let (code, stdout, err) = run(&["--out", s(&out), "distance", s(&a), s(&b)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout, "0.25,0.5\n");
    assert!(!out.exists());

    let (code, _, _) = run(&["--out", s(&out), "distance", s(&a), s(&b), "--plan"]);
    assert_eq!(code, 0);
    let plan = fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(plan, "i,j,mass\n0,0,0.5\n1,1,0.5\n");
}

#[test]
fn mollify_table_has_header_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let (code, _, err) = run(&["--out", s(&out), "mollify-table"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(listing(&out), ["table.csv", "table.meta.txt"]);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.starts_with("r,K_eps,dK_eps_dr\n"));
    assert_eq!(table.lines().count(), 1 + blobflow::mollification::TabulationParams::default().n_tab);
    let meta = fs::read_to_string(out.join("table.meta.txt")).unwrap();
    for key in ["mollifier.eps = 0.1", "lambda_estimate", "origin_value", "kernel.q = 2.0"] {
        assert!(meta.contains(key), "{key}");
    }
    // The sidecar is itself a valid config.
    assert_eq!(parse_config(&meta).unwrap().config.output, out);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["no-such-command"]).0, 1);
    assert_eq!(run(&["--threads", "0", "--out", s(&out), "mollify-table"]).0, 1);

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "kernel.frobz = 1\n").unwrap();
    let (code, _, err) = run(&["--config", s(&bad), "simulate"]);
    assert_eq!(code, 1);
    assert!(err.contains("kernel.frobz"));

    // Log repulsion in 2-d is not in the Gaussian-compatible regime.
    let pairing = tmp.path().join("pairing.txt");
    fs::write(&pairing, "kernel.dim = 2\nkernel.p = log\nmollifier.kind = gaussian\n").unwrap();
    assert_eq!(run(&["--config", s(&pairing), "--out", s(&out), "mollify-table"]).0, 1);

    let stall = tmp.path().join("stall.txt");
    fs::write(&stall, "measure.n = 20\ndynamics.max_iter = 1\n").unwrap();
    let (code, _, err) = run(&["--config", s(&stall), "--out", s(&out), "minimize"]);
    assert_eq!(code, 2, "{err}");

    let strict = tmp.path().join("strict.txt");
    fs::write(&strict, "measure.n = 12\nstudy.monotone_slack = -1\n").unwrap();
    let (code, stdout, _) = run(&["--config", s(&strict), "--out", s(&out), "gamma-sweep", "--study", "monotonicity"]);
    assert_eq!(code, 3);
    assert!(stdout.contains("verdict: FAIL"));
}

#[test]
fn gamma_sweep_writes_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.txt");
    fs::write(&cfg, "measure.n = 30\nstudy.name = liminf\nstudy.seeds = 3\n").unwrap();
    let out = tmp.path().join("sweep");
    let (code, stdout, err) = run(&["--config", s(&cfg), "--out", s(&out), "gamma-sweep"]);
    assert!(code == 0 || code == 3, "{err}");
    assert!(stdout.contains("study: liminf"));
    assert_eq!(listing(&out), ["manifest.txt", "metrics.csv", "plot.py", "report.txt"]);
    let plot = fs::read_to_string(out.join("plot.py")).unwrap();
    assert!(plot.contains("os.path.join(here, \"metrics.csv\")"));
}
