use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use delay_impulse::config::ModelConfig;
use delay_impulse::fixtures;
use delay_impulse::infinite_rn::{self, InfiniteOptions};
use delay_impulse::report::{self, Mode};
use delay_impulse::strategy::StrategyRule;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delay-impulse"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn solve(config: &Path, mode: &str, out: &Path) -> Value {
    let o = run(&[
        "solve",
        config.to_str().unwrap(),
        "--mode",
        mode,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn solve_d1_rn_and_rs() {
    let dir = tempfile::tempdir().unwrap();
    let rn = solve(&fixture("d1.json"), "rn", dir.path());
    assert!((rn["value"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    let strategy = std::fs::read_to_string(dir.path().join("strategy.csv")).unwrap();
    assert!(strategy.starts_with("level,a_id,i,time,state,action,size\n"));
    let fields = std::fs::read_to_string(dir.path().join("fields.csv")).unwrap();
    assert!(fields.starts_with("level,a_id,i,time,state,Y,O\n"));

    let rs = solve(&fixture("d1.json"), "rs", dir.path());
    assert!((rs["value"].as_f64().unwrap() - 0.6f64.exp()).abs() < 1e-12);
    assert_eq!(rs["log_space"], false);
}

#[test]
fn solve_d2_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let r = solve(&fixture("d2.json"), "inf", dir.path());
    let value = r["value"].as_f64().unwrap();
    let tail = r["infinite"]["tail_bound"].as_f64().unwrap();
    let eps_fix = r["infinite"]["epsilon_fix"].as_f64().unwrap();
    assert!((value - fixtures::d2_value()).abs() <= eps_fix + 2.0 * tail, "{value}");
    assert!(r["infinite"]["T_trunc"].as_f64().unwrap() > 13.0);
    assert!(!r["infinite"]["residuals"].as_array().unwrap().is_empty());
}

#[test]
fn strategy_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture("r3.json");
    let cfg = ModelConfig::load(&path).unwrap();
    let (model, menu) = cfg.build().unwrap();
    for mode in [Mode::Rn, Mode::Rs] {
        let r = solve(&path, mode.as_str(), dir.path());
        let text = std::fs::read_to_string(dir.path().join("strategy.csv")).unwrap();
        let v = report::reevaluate_strategy_csv(&text, &model, &menu, mode, &cfg).unwrap();
        let reported = r["value"].as_f64().unwrap();
        assert!(((v - reported) / reported).abs() < 1e-10, "{mode:?}: {v} vs {reported}");
    }

    let r = solve(&fixture("d2.json"), "inf", dir.path());
    let cfg = ModelConfig::load(&fixture("d2.json")).unwrap();
    let (model, menu) = cfg.build().unwrap();
    let problem = infinite_rn::TruncatedProblem::new(&model, &menu, &cfg.infinite_options(None).unwrap()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("strategy.csv")).unwrap();
    let rule = StrategyRule::from_csv(&text, problem.model.grid, problem.model.n_states(), problem.lattice.len()).unwrap();
    let v = infinite_rn::inf_evaluate_strategy(&rule, &problem).unwrap();
    let tol = InfiniteOptions::new(1.0).epsilon_fix + r["infinite"]["tail_bound"].as_f64().unwrap();
    assert!((v - r["value"].as_f64().unwrap()).abs() <= tol);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    solve(&fixture("r3.json"), "rn", a.path());
    solve(&fixture("r3.json"), "rn", b.path());
    for f in ["report.json", "fields.csv", "strategy.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn schema_error_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("d1.json")).unwrap().replace("\"menu\"", "\"menus\"");
    std::fs::write(&bad, text).unwrap();
    let o = run(&["solve", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line"), "{err}");

    let o = run(&["solve", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve",
        fixture("d2.json").to_str().unwrap(),
        "--mode",
        "inf",
        "--tmax",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn price_swing_writes_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "price-swing",
        fixture("swing.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let price = r["price"].as_f64().unwrap();
    let (model, menu) = fixtures::swing();
    let exact = delay_impulse::lattice_rn::solve_with_depth(&model, &menu, 3).unwrap().value;
    assert_eq!(price, exact);
    let boundary = std::fs::read_to_string(dir.path().join("boundary.csv")).unwrap();
    assert!(boundary.starts_with("rights_left,volume,i,time,min_spot,max_spot\n"));
}

#[test]
fn verify_suite_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let o = run(&["verify", "--suite", "invariants", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    let results: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(results.as_array().unwrap().iter().all(|r| r["passed"] == true));
}

#[test]
fn simulate_is_reproducible() {
    let config = fixture("swing.json");
    let args = ["simulate", config.to_str().unwrap(), "--paths", "4000", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_str(&String::from_utf8_lossy(&a.stdout)).unwrap();
    for key in ["value_insample", "value_oos", "stderr", "seeds", "basis"] {
        assert!(r.get(key).is_some(), "{key}");
    }
}

#[test]
fn thread_variable_is_validated() {
    let o = bin()
        .env("DELAY_IMPULSE_THREADS", "zero")
        .args(["solve", fixture("d1.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("DELAY_IMPULSE_THREADS", "2")
        .args(["solve", fixture("d1.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn shipped_fixtures_match_builtin_instances() {
    let (m, menu) = fixtures::r3(0);
    let builtin = delay_impulse::lattice_rn::solve(&m, &menu).unwrap().value;
    let (m, menu) = ModelConfig::load(&fixture("r3.json")).unwrap().build().unwrap();
    assert_eq!(delay_impulse::lattice_rn::solve(&m, &menu).unwrap().value, builtin);
}
