use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// A small config next to a copy of the ranking gridworld.
fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("ranking_grid.json"), dir.path().join("grid.json")).unwrap();
    std::fs::copy(fixture("hacking_grid.json"), dir.path().join("hack_grid.json")).unwrap();
    let cfg = dir.path().join("config.json");
    let body = format!(
        r#"{{
  "seed": 5,
  "env": "grid.json",
  "out_dir": "out",
  "demos": {{"n_demos": 12, "betas": [1.0, 3.0, 10.0]}},
  "mcmc": {{"n_steps": 3000, "burn_in": 300}},
  "calibrate": {{"n_trials": 50, "n_steps": 1500, "burn_in": 100, "n_prefs": 15}}
  {extra}
}}"#
    );
    std::fs::write(&cfg, body).unwrap();
    (dir, cfg)
}

fn brex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brex")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = brex(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stages_compose_from_the_config_alone() {
    let (dir, cfg) = setup("");
    let c = cfg.to_str().unwrap();
    for stage in ["gen-demos", "pretrain", "mcmc", "eval"] {
        ok(&[stage, "--config", c]);
    }
    let out = dir.path().join("out");
    let prefs = std::fs::read_to_string(out.join("preferences.csv")).unwrap();
    assert!(prefs.starts_with("i,j\n"));
    assert!(prefs.lines().count() > 66);
    assert_eq!(std::fs::read_to_string(out.join("demos.jsonl")).unwrap().lines().count(), 12);

    let table = std::fs::read_to_string(out.join("eval_table.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "policy,mean_chain,var_chain,traj_length,gt_avg_return,gt_min_return"
    );
    for id in ["optimal", "uniform", "map", "mean"] {
        assert!(out.join(format!("returns_{id}.csv")).is_file());
    }
    let chain = std::fs::read_to_string(out.join("chain.csv")).unwrap();
    assert!(chain.starts_with("step,log_post,w_0,w_1,w_2\n"));
    assert_eq!(chain.lines().count(), 1 + 2700);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3000);

    let report = json(&out.join("pretrain_report.json"));
    assert!(report["final_loss"].as_f64().unwrap() <= report["initial_loss"].as_f64().unwrap());
    let summary = json(&out.join("mcmc_summary.json"));
    assert_eq!(summary["ess"].as_array().unwrap().len(), 3);
}

#[test]
fn flags_override_config_and_are_echoed() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("elsewhere");
    ok(&[
        "gen-demos", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap(),
    ]);
    ok(&[
        "pretrain", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap(),
    ]);
    ok(&[
        "mcmc", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap(),
        "--beta", "0", "--mcmc.n-steps", "800", "--mcmc.sigma", "0.01",
    ]);
    let resolved = json(&out.join("resolved_config.json"));
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["mcmc"]["n_steps"], 800);
    assert_eq!(resolved["mcmc"]["proposal_sigma"], 0.01);
    assert_eq!(resolved["likelihood"]["beta"], 0.0);
    // a flat likelihood accepts every proposal
    assert_eq!(json(&out.join("mcmc_summary.json"))["accept_rate"], 1.0);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn single_demo_gives_no_pairs() {
    let (dir, cfg) = setup("");
    let body = std::fs::read_to_string(&cfg).unwrap().replace("\"n_demos\": 12", "\"n_demos\": 1");
    std::fs::write(&cfg, body).unwrap();
    ok(&["gen-demos", "--config", cfg.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(dir.path().join("out/preferences.csv")).unwrap(), "i,j\n");
}

#[test]
fn calibrate_and_hack_probe_reports() {
    let (dir, cfg) = setup("");
    ok(&["calibrate", "--config", cfg.to_str().unwrap()]);
    let r = json(&dir.path().join("out/calibration_report.json"));
    let cov: Vec<f64> = r["coverage"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect();
    assert_eq!(cov.len(), 3);
    assert!(cov.iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(cov.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(r["trials"].as_array().unwrap().len(), 50);

    let hack = dir.path().join("hack.json");
    std::fs::write(
        &hack,
        r#"{"seed": 1, "env": "hack_grid.json",
            "hack_probe": {"n_steps": 3000, "burn_in": 300,
                           "hacker": {"kind": "weights_optimal", "weights": [0, 0, 0, 1]}}}"#,
    )
    .unwrap();
    ok(&["hack-probe", "--config", hack.to_str().unwrap()]);
    let h = json(&dir.path().join("run/hacking_report.json"));
    assert!(h["flag"].is_boolean());
    assert_eq!(h["hacker_row"]["policy"], "hacker");
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup("");
    let c = cfg.to_str().unwrap();
    // validation failures
    assert_eq!(brex(&["eval", "--config", c, "--delta", "0.7"]).status.code(), Some(1));
    assert_eq!(brex(&["mcmc", "--config", c, "--mcmc.sigma", "-1"]).status.code(), Some(1));
    assert_eq!(brex(&["mcmc", "--bogus"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.json"), r#"{"env": "grid.json"}"#).unwrap();
    assert_eq!(brex(&["gen-demos", "--config", dir.path().join("bad.json").to_str().unwrap()]).status.code(), Some(1));
    // runtime failures: missing inputs
    let missing = brex(&["eval", "--config", c]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("chain.csv"));
    assert_eq!(brex(&["gen-demos", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
    assert_eq!(brex(&["--help"]).status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup(r#", "features": {"kind": "learned_mlp", "hidden": 4, "dim": 3, "epochs": 40}"#);
    let c = cfg.to_str().unwrap();
    let snapshot = |d: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    ok(&["pipeline", "--config", c]);
    let first = snapshot(&dir.path().join("out"));
    let resolved = dir.path().join("out/resolved_config.json");
    let copy = dir.path().join("resolved.json");
    std::fs::copy(&resolved, &copy).unwrap();
    ok(&["pipeline", "--config", copy.to_str().unwrap()]);
    assert_eq!(snapshot(&dir.path().join("out")), first);
}
