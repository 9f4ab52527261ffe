use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn progrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progrl"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo(path: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(path).display().to_string()
}

const QUICK: &[&str] = &[
    "--set",
    "iterations=2",
    "--set",
    "eval.seeds=0..2",
    "--set",
    "update.steps=300",
    "--set",
    "update.warmup=100",
    "--set",
    "update.hidden=8",
    "--set",
    "update.batch=16",
    "--set",
    "dagger.rounds=2",
    "--set",
    "dagger.episodes=1",
    "--set",
    "dagger.horizon=50",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--run-dir", dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    progrl(&args)
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(metrics.starts_with("# schema=1\n"));
    for f in ["config.copy", "best.sexp", "timing.csv", "iter_000/program.sexp", "iter_002/theta.nnp"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert!(stdout(&o).contains("best_iteration="));
}

#[test]
fn resolved_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    assert_eq!(train(a.path(), &["--set", "seed=5"]).status.code(), Some(0));
    let b = tempfile::tempdir().unwrap();
    let copy = a.path().join("config.copy");
    let o = progrl(&["train", "--config", copy.to_str().unwrap(), "--run-dir", b.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.path().join("metrics.csv")).unwrap(),
        fs::read(b.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn unknown_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "iterations = 1\nfoo = 3\n").unwrap();
    let o = progrl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("foo"), "{}", stderr(&o));
    let o = progrl(&["sandbox", "--set", "foo=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("foo"));
}

#[test]
fn bad_values_and_arguments_exit_2() {
    assert_eq!(progrl(&["train", "--set", "update.gamma=2"]).status.code(), Some(2));
    assert_eq!(progrl(&["nosuch"]).status.code(), Some(2));
    assert_eq!(progrl(&["eval", "missing.sexp"]).status.code(), Some(2));
    assert_eq!(progrl(&["project"]).status.code(), Some(2));
}

#[test]
fn eval_prints_machine_readable_line_deterministically() {
    let prior = repo("programs/pendulum_prior.sexp");
    let a = progrl(&["eval", &prior, "--env", "pendulum", "--episodes", "10"]);
    let b = progrl(&["eval", &prior, "--env", "pendulum", "--episodes", "10"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let line = stdout(&a);
    assert!(line.starts_with("mean=") && line.contains(" std=") && line.trim_end().ends_with("n=10"), "{line}");
}

#[test]
fn zero_torque_return_is_in_physical_band() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("zero.sexp");
    fs::write(&p, "(const 0)\n").unwrap();
    let o = progrl(&["eval", p.to_str().unwrap(), "--env", "pendulum", "--episodes", "10"]);
    let line = stdout(&o);
    let mean: f64 = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix("mean="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((-2000.0..=0.0).contains(&mean), "{line}");
}

#[test]
fn malformed_program_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.sexp");
    fs::write(&p, "(pid 0 1 2)\n").unwrap();
    let o = progrl(&["eval", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1:1"), "{}", stderr(&o));
}

#[test]
fn verify_constant_prints_point_interval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.sexp");
    fs::write(&p, "(const 0.75)\n").unwrap();
    let o = progrl(&["verify", p.to_str().unwrap(), "--run-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("range [0.75, 0.75]"), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.contains("0,0.75,0.75,0.0,0"));
}

#[test]
fn verify_reports_unbounded_integral() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.sexp");
    fs::write(&p, "(pid 1 0 1 0.5 0)\n").unwrap();
    let o = progrl(&["verify", p.to_str().unwrap(), "--run-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unbounded term"));
}

#[test]
fn sandbox_zero_error_has_vanishing_regret() {
    let dir = tempfile::tempdir().unwrap();
    let o = progrl(&[
        "sandbox",
        "--config",
        &repo("configs/sandbox_zero_error.conf"),
        "--run-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    let regret: f64 = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix("final_avg_regret="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(regret < 1e-6, "{line}");
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn sandbox_sweep_writes_manifest_in_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let o = progrl(&[
        "sandbox",
        "--set",
        "sandbox.sweep=0,0,0;0,0,0.1",
        "--set",
        "sandbox.iterations=200",
        "--set",
        "sandbox.precision=f32",
        "--run-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(dir.path().join("point_001.csv").exists());
}

#[test]
fn project_lambda_zero_expert_is_self_projection() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(train(dir.path(), &["--set", "iterations=1"]).status.code(), Some(0));
    let out = tempfile::tempdir().unwrap();
    let o = progrl(&[
        "project",
        dir.path().to_str().unwrap(),
        "--iteration",
        "0",
        "--set",
        "project.lambda=0",
        "--set",
        "dagger.rounds=2",
        "--set",
        "dagger.episodes=2",
        "--run-dir",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    let d: f64 = line
        .lines()
        .find_map(|l| l.strip_prefix("probe_distance="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(d < 1e-6, "{line}");
    for f in ["projection.csv", "dataset.csv", "program.sexp"] {
        assert!(out.path().join(f).exists());
    }
}

#[test]
fn project_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = progrl(&["project", dir.path().to_str().unwrap(), "--iteration", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("iter_003"));
}
