use bsde_cli::csv::HEADER;
use bsde_cli::{run, run_config, Command, RunConfig};

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml_str(text, "inline").unwrap()
}

const CONSTANT: &str = r#"
    [grid]
    steps = 8
    [ensemble]
    paths = 2000
    seed = 11
    [problem]
    terminal = "constant"
    terminal_params = { value = 1.5 }
"#;

const SQUARE: &str = r#"
    [grid]
    steps = 16
    [ensemble]
    paths = 4000
    seed = 5
    [problem]
    terminal = "w(T)^2"
    driver = "affine"
    driver_params = { a = 0.1 }
    [verification]
    n_tests = 5
    seed = 2
"#;

#[test]
fn constant_terminal_has_zero_big_y() {
    let out = run(&config(CONSTANT), Command::Solve).unwrap();
    let s = out.report.solution.as_ref().unwrap();
    assert!(out.report.pass);
    assert!(s.big_y_l2_l2 < 1e-12, "{}", s.big_y_l2_l2);
    assert!((s.y0_mean[0] - 1.5).abs() < 1e-12);
    assert!(s.y0_std[0] < 1e-12);
}

#[test]
fn unknown_driver_is_reported_by_field() {
    let text = CONSTANT.replace("[problem]", "[problem]\ndriver = \"quadratic\"");
    let err = RunConfig::from_toml_str(&text, "inline").unwrap_err().to_string();
    assert!(err.contains("problem.driver"), "{err}");
    assert!(err.contains("quadratic"), "{err}");
}

#[test]
fn identical_runs_give_identical_reports() {
    let c = config(SQUARE);
    let a = run(&c, Command::Verify).unwrap();
    let b = run(&c, Command::Verify).unwrap();
    let ja = a.report.without_timings().to_json().unwrap();
    let jb = b.report.without_timings().to_json().unwrap();
    assert_eq!(ja, jb);
    assert!(a.report.timings.contains_key("solve"));
    assert!(a.report.verification.is_some());
}

#[test]
fn seed_override_changes_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, SQUARE).unwrap();
    let a = run_config(&path, Command::Solve, None, None).unwrap();
    let b = run_config(&path, Command::Solve, Some(6), None).unwrap();
    assert_eq!(b.report.config.ensemble.seed, 6);
    assert_ne!(
        a.report.solution.unwrap().y0_mean,
        b.report.solution.unwrap().y0_mean
    );
}

#[test]
fn csv_rows_and_reexport() {
    let out = run(&config(CONSTANT), Command::Solve).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = out.write(dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    for (j, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 6);
        assert_eq!(r[0], j as f64 / 8.0);
        for (k, want) in [(1, 1.5), (2, 0.0), (3, 1.5), (4, 1.5), (5, 0.0)] {
            assert!((r[k] - want).abs() < 1e-12, "row {j} column {k}: {}", r[k]);
        }
    }
    let again = dir.path().join("again");
    out.write(&again).unwrap();
    assert_eq!(std::fs::read(again.join("solution.csv")).unwrap(), csv.as_bytes());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "solve");
    assert_eq!(report["pass"], true);
}

#[test]
fn csv_numbers_carry_seventeen_digits() {
    let out = run(&config(SQUARE), Command::Solve).unwrap();
    let csv = out.csv().unwrap();
    let row = csv.lines().nth(3).unwrap();
    for field in row.split(',') {
        let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{field}");
    }
}

#[test]
fn cache_command_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("ens.bin");
    let text = CONSTANT.replace("seed = 11", &format!("seed = 11\ncache = {:?}", cache.display().to_string()));
    let c = config(&text);
    let out = run(&c, Command::Cache).unwrap();
    let summary = out.report.cache.as_ref().unwrap();
    assert!(summary.round_trip_exact && out.report.pass);
    assert!(summary.bytes > 8 * 2000 * 8);
    let fresh = run(&config(CONSTANT), Command::Solve).unwrap();
    let cached = run(&c, Command::Solve).unwrap();
    assert_eq!(fresh.ensemble, cached.ensemble);
    assert_eq!(
        fresh.report.solution.as_ref().unwrap(),
        cached.report.solution.as_ref().unwrap()
    );
}

#[test]
fn cache_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("ens.bin");
    let text = CONSTANT.replace("seed = 11", &format!("seed = 11\ncache = {:?}", cache.display().to_string()));
    run(&config(&text), Command::Cache).unwrap();
    let other = text.replace("paths = 2000", "paths = 1000");
    let err = run(&config(&other), Command::Solve).unwrap_err().to_string();
    assert!(err.contains("ensemble.cache"), "{err}");
}

#[test]
fn verify_catches_the_sentinel() {
    let out = run(&config(SQUARE), Command::Verify).unwrap();
    let v = out.report.verification.as_ref().unwrap();
    assert!(v.sentinel.as_ref().unwrap().detected);
    assert!(v.duality.tests.len() == 5);
}

#[test]
fn compare_and_consistency_commands() {
    let text = format!(
        "{SQUARE}\n[comparison]\nterminal = \"w(T)^2\"\ndriver = \"affine\"\ndriver_params = {{ a = 0.1, c = 1.0 }}\n"
    );
    let out = run(&config(&text), Command::Compare).unwrap();
    let c = out.report.comparison.as_ref().unwrap_or_else(|| panic!("{:?}", out.report.error));
    assert!(out.report.pass, "{c:?}");
    assert!(!c.report.equal_within_tolerance, "{:?}", c.report);
    assert!(run(&config(SQUARE), Command::Compare).is_err());

    let out = run(&config(SQUARE), Command::Consistency).unwrap();
    let r = out.report.consistency.as_ref().unwrap();
    assert_eq!(r.split, 8);
    assert!(out.report.pass, "{r:?}");
}

#[test]
fn solver_failure_is_embedded_in_the_report() {
    let text = SQUARE.replace("a = 0.1", "a = 6.0") + "\n[picard]\nwindow_count = 1\nmax_bisections = 0\n";
    let out = run(&config(&text), Command::Solve).unwrap();
    assert!(!out.report.pass);
    assert!(out.report.error.as_ref().unwrap().contains("Picard"), "{:?}", out.report.error);
    assert!(out.csv().is_none());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 6);
}

#[test]
fn full_schema_parses() {
    let text = r#"
        [grid]
        horizon = 2.0
        steps = 16
        [ensemble]
        paths = 100
        seed = 1
        model = "initial-enlargement"
        xi = { law = "normal", mean = 0.0, std = 1.0 }
        [problem]
        terminal = "w(T)^2"
        terminal_params = { scale = 1.0 }
        driver = "lipschitz-sin"
        driver_params = { kappa = 0.5 }
        [basis]
        cell_size = 4
        state_degree = 1
        family = "cell-start"
        [linear]
        martingale_control = false
        galerkin_target = "terminal"
        gram_ridge = 1e-12
        [linear.regression]
        degree = 2
        ridge = 0.0
        [picard]
        tolerance = 1e-8
        window_count = 2
        [verification]
        n_tests = 3
        seed = 4
        pseudo = false
        [comparison]
        terminal = "w(T)^2"
        terminal_params = { shift = -1.0 }
        driver = "lipschitz-sin"
        driver_params = { kappa = 0.5, c = 0.1 }
        tolerance = 0.05
        [consistency]
        split = 4
        [sweep]
        case = "brownian-level"
        steps = [4, 8]
    "#;
    let c = config(text);
    assert!(!c.linear.martingale_control);
    assert_eq!(c.picard.window_count, Some(2));
    assert_eq!(c.sweep.as_ref().unwrap().steps, vec![4, 8]);
    let out = run(&c, Command::Compare).unwrap();
    assert!(out.report.comparison.is_some(), "{:?}", out.report.error);
}
