use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcam::solver::{gain_of_policy, GainMethod};
use mcam::{Control, Grid};
use mcam_cli::{parse_config, GainReport, RunConfig};

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/table1.cfg")
}

fn mcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn gain_at(dir: &Path) -> GainReport {
    let text = std::fs::read_to_string(dir.join("gain.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

/// Small lattices and short budgets for runs that only exercise plumbing.
fn quick_config() -> RunConfig {
    let mut c = RunConfig::table1();
    c.model.boundary = 5.0;
    c.grids.coarse_step = 0.5;
    c.grids.fine_step = 0.25;
    c.rvi.variant = mcam::solver::RviVariant::SemiMdp;
    c.train.width = 8;
    c.train.fit_epochs = 200;
    c.train.ascent_epochs = 50;
    c.sim.horizon = 2000.0;
    c.sim.burn_in = 100.0;
    c.sim.n_paths = 4;
    c.sim.trace_every = 100.0;
    c
}

#[test]
fn shipped_config_holds_the_worked_example() {
    let c = parse_config(&shipped_config()).unwrap();
    let m = &c.model;
    let lambda: Vec<f64> = m.regimes.iter().map(|r| r.claim_intensity).collect();
    let r1: Vec<f64> = m.regimes.iter().map(|r| r.risky_return).collect();
    let sigma: Vec<f64> = m.regimes.iter().map(|r| r.risky_volatility).collect();
    assert_eq!(lambda, [0.13, 0.28]);
    assert_eq!(r1, [0.08, 0.05]);
    assert_eq!(sigma, [0.2, 0.4]);
    assert_eq!((m.rate(0, 1), m.rate(1, 0)), (0.05, 0.1));
    assert_eq!(
        (m.premium_loading, m.reinsurance_loading, m.risk_free_rate),
        (0.15, 0.25, 0.02)
    );
    assert_eq!((m.threshold, m.boundary), (2.0, 10.0));
    assert_eq!(
        (m.min_retention, m.max_risky, m.min_dividend),
        (0.4, 0.3, 0.062)
    );
    assert_eq!((c.grids.coarse_step, c.grids.fine_step), (0.5, 0.1));
}

#[test]
fn loading_below_premium_is_rejected_with_the_rule_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::table1();
    c.model.reinsurance_loading = 0.1;
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, c.to_json()).unwrap();
    let out = mcam(&[
        "--config",
        path.to_str().unwrap(),
        "--mode",
        "rvi",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.reinsurance_loading"), "{stderr}");
    assert!(stderr.contains("beta > rho"), "{stderr}");
}

#[test]
fn misaligned_steps_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::table1();
    c.grids.fine_step = 0.2;
    let path = write_config(dir.path(), &c);
    let out = mcam(&[
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("grids.coarse_step") && stderr.contains("integer multiple"),
        "{stderr}"
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let out = mcam(&["--config", "x.cfg", "--mode", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rvi_policy_evaluates_to_the_same_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped_config();
    let rvi_dir = dir.path().join("rvi");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "rvi",
        "--out",
        rvi_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval_dir = dir.path().join("eval");
    let policy = rvi_dir.join("policy.csv");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "eval-policy",
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = gain_at(&rvi_dir);
    let b = gain_at(&eval_dir);
    assert_eq!(b.method, GainMethod::InvariantMeasure);
    assert!(
        (a.gamma - b.gamma).abs() < 1e-10,
        "{} vs {}",
        a.gamma,
        b.gamma
    );
    // and the table written back out is byte-identical
    assert_eq!(
        std::fs::read(&policy).unwrap(),
        std::fs::read(eval_dir.join("policy.csv")).unwrap()
    );
    let header = std::fs::read_to_string(rvi_dir.join("values.csv")).unwrap();
    assert!(header.starts_with("regime,x,V,U\n"));
}

#[test]
fn constant_policy_simulation_matches_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::table1();
    c.grids.fine_step = 0.025;
    c.sim.horizon = 5e4;
    c.sim.n_paths = 8;
    let cfg = write_config(dir.path(), &c);
    let u = Control::new(1.0, 0.3, 0.0);
    let policy = dir.path().join("constant.json");
    std::fs::write(&policy, serde_json::to_string(&u).unwrap()).unwrap();
    let out_dir = dir.path().join("sim");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "simulate",
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = gain_at(&out_dir);
    assert_eq!(report.method, GainMethod::MonteCarlo);
    let grid = Grid::for_model(&c.model, 0.025).unwrap();
    let forced = mcam::solver::TabularPolicy::constant(&grid, &c.model, u);
    let oracle = gain_of_policy(&c.model, &grid, &forced).unwrap().gamma;
    let se = report.se.unwrap();
    assert!(
        (report.gamma - oracle).abs() <= 3.0 * se,
        "mc {} ± {se}, chain {oracle}",
        report.gamma
    );
    let occupation = std::fs::read_to_string(out_dir.join("occupation.csv")).unwrap();
    assert!(occupation.starts_with("regime,x,empirical,stationary\n"));
}

#[test]
fn exhausted_round_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick_config();
    c.refine.max_rounds = 1;
    let cfg = write_config(dir.path(), &c);
    let out_dir = dir.path().join("out");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "refine",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = gain_at(&out_dir);
    assert!(!report.converged);
    for file in [
        "policy.csv",
        "values.csv",
        "checkpoint.json",
        "rounds.csv",
        "objective.csv",
    ] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let policy = std::fs::read_to_string(out_dir.join("policy.csv")).unwrap();
    assert!(policy.starts_with("regime,x,a,s,l\n"));
}

#[test]
fn checkpoint_reproduces_the_refined_policy() {
    let dir = tempfile::tempdir().unwrap();
    let c = quick_config();
    let cfg = write_config(dir.path(), &c);
    let run_dir = dir.path().join("refine");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "refine",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(
        matches!(out.status.code(), Some(0 | 2)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval_dir = dir.path().join("eval");
    let checkpoint = run_dir.join("checkpoint.json");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "eval-policy",
        "--policy",
        checkpoint.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(gain_at(&run_dir).gamma, gain_at(&eval_dir).gamma);
    assert_eq!(
        std::fs::read(run_dir.join("policy.csv")).unwrap(),
        std::fs::read(eval_dir.join("policy.csv")).unwrap()
    );
}

#[test]
fn outputs_do_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let c = quick_config();
    let cfg = write_config(dir.path(), &c);
    let mut gains = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = Command::new(env!("CARGO_BIN_EXE_mcam"))
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--mode",
                "full",
                "--seed",
                "7",
            ])
            .args(["--out", out_dir.to_str().unwrap()])
            .env("MCAM_THREADS", threads)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert!(
            matches!(out.status.code(), Some(0 | 2)),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        gains.push((
            std::fs::read_to_string(out_dir.join("gain.json")).unwrap(),
            std::fs::read(out_dir.join("policy.csv")).unwrap(),
            std::fs::read(out_dir.join("occupation.csv")).unwrap(),
        ));
    }
    assert_eq!(gains[0], gains[1]);
}

#[test]
fn variant_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = quick_config();
    let cfg = write_config(dir.path(), &c);
    let out_dir = dir.path().join("rvi");
    let out = mcam(&[
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "rvi",
        "--rvi-variant",
        "paper",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(gain_at(&out_dir).variant, mcam::solver::RviVariant::Paper);
}
