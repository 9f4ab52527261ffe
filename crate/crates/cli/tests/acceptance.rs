//! Acceptance checks, one line per criterion:
//!
//! 1. backpropagation matches finite differences
//! 2. least-squares recovery of known PID gains
//! 3. self-projection of an in-class program
//! 4. regression-tree recovery of a step and a constant
//! 5. regret behaviour of projected gradient descent with errors
//! 6. a short pendulum training run from the shipped prior
//! 7. soundness of the verifier's ranges and Lipschitz bounds
//! 8. byte-identical CSV output for repeated commands
//! 9. parser/printer round trip and positioned syntax errors
//!
//! Lines go straight to stderr so they show up in captured test output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use progrl::dsl::{
    advance, eval_step, eval_with_context, fit_tree, parse, pretty_print, random_program, ClassConfig, Expr,
    PidContext, PidSlot, ProgState, RandomProgramConfig, TreeNode,
};
use progrl::env::{make_env, seeded_rng};
use progrl::nn::{init_actor, Activation, Mlp};
use progrl::policy::MixedPolicy;
use progrl::project::{fit_pid, probe_distance, project, DatasetRow, ImitationDataset};
use progrl::propel::propel_run;
use progrl::sandbox::{run_approx_pgd, MdConfig, StepSchedule};
use progrl::verify::{lipschitz_bound, output_range, ObsBox};
use progrl::{Error, Program};
use progrl_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn report(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
    let took = t.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs())),
        Err(d) => (false, d),
    };
    let line = format!(
        "acceptance {n} {name}: {} ({detail}; {:.1}s)\n",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
    for _ in 0..100 {
        let depth = rng.random_range(1..4);
        let mut sizes = vec![rng.random_range(1..6)];
        for _ in 1..depth {
            sizes.push(rng.random_range(2..12));
        }
        sizes.push(rng.random_range(1..4));
        let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Linear };
        let net = Mlp::<f64>::random(&sizes, act, 1.0, &mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |n: &Mlp<f64>| -> f64 { n.forward(&x).unwrap().iter().zip(&w).map(|(y, w)| y * w).sum() };
        let grad = net.backward(&x, &w).map_err(|e| e.to_string())?.flat();
        for (i, g) in grad.iter().enumerate() {
            let mut p = net.clone();
            *p.params_mut().nth(i).unwrap() += h;
            let mut m = net.clone();
            *m.params_mut().nth(i).unwrap() -= h;
            worst = worst.max(rel(*g, (loss(&p) - loss(&m)) / (2.0 * h)));
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn pid_stream(rows: usize, noise: f64, seed: u64) -> ImitationDataset {
    let truth: Program = parse("(pid 0 0 1.0 0.1 0.01)").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut ds = ImitationDataset::new(1, 1, 1);
    let mut st = ProgState::new(&truth);
    for _ in 0..rows {
        let obs = vec![rng.random_range(-1.0..1.0)];
        let (ctx, _) = advance(&truth, &st, &obs, 0.05).unwrap();
        let (u, next) = eval_step(&truth, &st, &obs, 0.05).unwrap();
        st = next;
        let y = u[0] + noise * normal.sample(&mut rng);
        ds.push(DatasetRow { obs, ctx, action: vec![y], round: 1 }).unwrap();
    }
    ds
}

fn gain_error(ds: &ImitationDataset) -> Result<f64, String> {
    let fit = fit_pid(ds, &parse("(pid 0 0 0 0 0)").unwrap()).map_err(|e| e.to_string())?;
    match &fit.program.outputs[0] {
        Expr::Pid(p) => Ok([p.kp - 1.0, p.ki - 0.1, p.kd - 0.01].iter().map(|d| d.abs()).fold(0.0, f64::max)),
        other => Err(format!("fit returned {other:?}")),
    }
}

fn recovery() -> Check {
    let exact = gain_error(&pid_stream(2000, 0.0, 1))?;
    ensure(exact <= 1e-8, || format!("noise-free gain error {exact:e}"))?;
    let mut worst_noisy = 0.0f64;
    for rep in 0..20 {
        worst_noisy = worst_noisy.max(gain_error(&pid_stream(10_000, 0.01, 500 + rep))?);
    }
    ensure(worst_noisy <= 1e-2, || format!("noisy gain error {worst_noisy:e}"))?;
    Ok(format!("noise-free error {exact:.1e}, worst noisy error {worst_noisy:.1e} over 20 repeats"))
}

fn self_projection() -> Check {
    let env = make_env("pendulum", 0).map_err(|e| e.to_string())?;
    let prior: Program = parse(progrl_cli::config::PENDULUM_PRIOR).map_err(|e| e.to_string())?;
    let theta = init_actor(3, 1, 64, &mut seeded_rng(1));
    let f = MixedPolicy::new(prior, theta, 0.0, env.spec()).map_err(|e| e.to_string())?;
    let cfg = progrl::project::DaggerConfig::default();
    let (p, _) = project(&f, env.as_ref(), &cfg, 77).map_err(|e| e.to_string())?;
    let d = probe_distance(&p, &f.program, env.spec(), 1000, 78).map_err(|e| e.to_string())?;
    ensure(d <= 1e-6, || format!("probe distance {d:e}"))?;
    Ok(format!("probe distance {d:.1e} over 1000 states"))
}

fn cart() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
    let step: Vec<Vec<f64>> = xs.iter().map(|x| vec![if x[0] < 0.5 { -1.0 } else { 1.0 }]).collect();
    let fit = fit_tree(&ImitationDataset::from_pairs(xs.clone(), step).unwrap(), &ClassConfig::tree(3))
        .map_err(|e| e.to_string())?;
    let threshold = match &fit.program.outputs[0] {
        Expr::Tree(TreeNode::Split { threshold, .. }) => *threshold,
        other => return Err(format!("step fit is {other:?}")),
    };
    ensure((threshold - 0.5).abs() <= 0.02, || format!("threshold {threshold}"))?;
    let ys: Vec<Vec<f64>> = (0..1000).map(|i| vec![2.5 + 0.0 * i as f64]).collect();
    let fit = fit_tree(&ImitationDataset::from_pairs(xs, ys).unwrap(), &ClassConfig::tree(3)).map_err(|e| e.to_string())?;
    match &fit.program.outputs[0] {
        Expr::Tree(t) if t.n_leaves() == 1 && pretty_print(&fit.program).trim() == "(tree (leaf 2.5))" => {}
        other => return Err(format!("constant fit is {other:?}")),
    }
    Ok(format!("threshold {threshold:.4}; constant gives one leaf"))
}

fn regret() -> Check {
    let base = || {
        let mut c = MdConfig::identity(2, -1.0, 1.0, vec![0.2, -0.3]);
        c.iterations = 10_000;
        c
    };
    let mut c = base();
    c.target = vec![3.0, -0.3];
    c.repeats = 1;
    let gap = run_approx_pgd(&c).map_err(|e| e.to_string())?.final_gap();
    ensure(gap <= 1e-8, || format!("zero-error gap {gap:e}"))?;

    let mut c = base();
    c.iterations = 100_000;
    c.sigma = 0.5;
    c.schedule = StepSchedule::InvSqrt(0.5);
    c.x0 = Some(c.target.clone());
    let slope = run_approx_pgd(&c).map_err(|e| e.to_string())?.loglog_slope(100, 100_000).unwrap();
    ensure((slope + 0.5).abs() <= 0.1, || format!("log-log slope {slope}"))?;

    let sweep = |set: &dyn Fn(&mut MdConfig<f64>, f64), values: &[f64]| -> Result<Vec<(f64, f64)>, String> {
        values
            .iter()
            .map(|v| {
                let mut c = base();
                set(&mut c, *v);
                run_approx_pgd(&c).map(|t| t.final_regret()).map_err(|e| e.to_string())
            })
            .collect()
    };
    let monotone = |r: &[(f64, f64)]| r.windows(2).all(|w| w[1].0 + 3.0 * (w[0].1 + w[1].1) >= w[0].0);
    let eps = sweep(&|c, v| c.epsilon = v, &[0.0, 0.05, 0.1])?;
    let beta = sweep(&|c, v| c.beta = v, &[0.0, 0.05, 0.1])?;
    ensure(monotone(&eps), || format!("not monotone in epsilon: {eps:?}"))?;
    ensure(monotone(&beta), || format!("not monotone in beta: {beta:?}"))?;
    Ok(format!(
        "gap {gap:.1e}, slope {slope:.3}, regret vs eps {:.2e}/{:.2e}/{:.2e}, vs beta {:.2e}/{:.2e}/{:.2e}",
        eps[0].0, eps[1].0, eps[2].0, beta[0].0, beta[1].0, beta[2].0
    ))
}

fn repo_path(p: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(p)
}

fn propel_pendulum() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_dir = format!("run_dir={}", dir.path().display());
    let cfg = RunConfig::load(Some(&repo_path("configs/pendulum.conf")), &[run_dir]).map_err(|e| e.to_string())?;
    let propel = cfg.propel().map_err(|e| e.to_string())?;
    ensure(propel.iterations == 5, || "reference config must run 5 iterations".into())?;
    let env = cfg.env().map_err(|e| e.to_string())?;
    let pi0: Program = parse(&cfg.program_text().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let out = propel_run(env.as_ref(), &pi0, &propel, cfg.seed().unwrap()).map_err(|e| e.to_string())?;
    let (prior_mean, prior_std) = out.prior;
    let best = out.records.last().map_or(prior_mean, |r| r.best_so_far);
    ensure(best >= prior_mean - 2.0 * prior_std, || {
        format!("best {best:.1} below prior {prior_mean:.1} - 2*{prior_std:.1}")
    })?;
    let mut previous = prior_mean;
    let mut wins = 0;
    for r in &out.records {
        if r.mixed_mean > previous {
            wins += 1;
        }
        previous = r.program_mean;
    }
    ensure(wins >= 3, || format!("mixed policy beat the preceding program in only {wins} of 5 iterations"))?;
    Ok(format!(
        "prior {prior_mean:.1} +- {prior_std:.1}, best {best:.1} (iteration {}), mixed beat preceding program {wins}/5",
        out.best_iteration
    ))
}

fn verifier() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut b = ObsBox::new(vec![-1.0, -1.0, -8.0], vec![1.0, 1.0, 8.0], 0.05);
    b.delta_bound = Some(1.0);
    b.integral_bound = Some(5.0);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> { b.lo.iter().zip(&b.hi).map(|(l, h)| rng.random_range(*l..=*h)).collect() };
    let (mut range_bad, mut lip_bad, mut probes) = (0, 0, 0);
    for i in 0..100 {
        let cfg = if i % 2 == 0 { RandomProgramConfig::new(3, 1) } else { RandomProgramConfig::new(3, 1).if_free() };
        let prog: Program = random_program(&mut rng, &cfg);
        let range = output_range(&prog, &b).map_err(|e| e.to_string())?[0];
        let (l, certs) = lipschitz_bound(&prog, &b).map_err(|e| e.to_string())?.remove(0);
        let continuous = certs.is_empty() && i % 2 == 1;
        for _ in 0..1000 {
            probes += 1;
            let s = sample(&mut rng);
            let ctx: Vec<PidContext<f64>> = prog
                .pid_nodes()
                .iter()
                .map(|p| PidContext {
                    error: p.setpoint - s[p.feature],
                    integral: rng.random_range(-5.0..=5.0),
                    derivative: rng.random_range(-1.0..=1.0) / 0.05,
                })
                .collect();
            if !range.contains(eval_with_context(&prog, &s, &ctx).unwrap()[0]) {
                range_bad += 1;
            }
            if continuous {
                let state = ProgState {
                    slots: (0..prog.pid_count())
                        .map(|_| PidSlot { integral: rng.random_range(-1.0..1.0), prev_error: Some(rng.random_range(-1.0..1.0)) })
                        .collect(),
                };
                let t = sample(&mut rng);
                let u = |o: &[f64]| {
                    let (ctx, _) = advance(&prog, &state, o, 0.05).unwrap();
                    eval_with_context(&prog, o, &ctx).unwrap()[0]
                };
                let dist = s.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if (u(&s) - u(&t)).abs() > l * dist * (1.0 + 1e-9) + 1e-12 {
                    lip_bad += 1;
                }
            }
        }
    }
    ensure(range_bad == 0 && lip_bad == 0, || format!("{range_bad} range and {lip_bad} Lipschitz violations"))?;
    Ok(format!("{probes} probes, 0 range and 0 Lipschitz violations"))
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_progrl")).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn determinism() -> Check {
    let quick = [
        "--set", "iterations=2", "--set", "eval.seeds=0..2", "--set", "update.steps=400", "--set", "update.warmup=100",
        "--set", "update.hidden=16", "--set", "dagger.rounds=2", "--set", "dagger.episodes=1", "--set", "dagger.horizon=60",
    ];
    let prior = repo_path("programs/pendulum_prior.sexp").display().to_string();
    let boxf = repo_path("configs/pendulum.box").display().to_string();
    let sandbox_cfg = repo_path("configs/sandbox_sweep.conf").display().to_string();
    let mut compared = 0;
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut outputs = Vec::new();
    for r in &runs {
        let d = r.path();
        let sub = |name: &str| d.join(name).display().to_string();
        let mut out = Vec::new();
        let mut args = vec!["train", "--run-dir"];
        let train_dir = sub("train");
        args.push(&train_dir);
        args.extend_from_slice(&quick);
        out.extend(cli(&args)?);
        let project_dir = sub("project");
        out.extend(cli(&["project", &train_dir, "--iteration", "2", "--run-dir", &project_dir, "--set", "dagger.rounds=2"])?);
        let sandbox_dir = sub("sandbox");
        out.extend(cli(&["sandbox", "--config", &sandbox_cfg, "--run-dir", &sandbox_dir, "--set", "sandbox.repeats=8"])?);
        let verify_dir = sub("verify");
        out.extend(cli(&["verify", &prior, &boxf, "--run-dir", &verify_dir])?);
        out.extend(cli(&["eval", &prior, "--episodes", "5"])?);
        outputs.push(out);
    }
    for entry in walk(runs[0].path()) {
        if entry.extension().is_some_and(|e| e == "csv") {
            let rel = entry.strip_prefix(runs[0].path()).unwrap();
            if rel.ends_with("timing.csv") {
                continue;
            }
            let a = fs::read(&entry).map_err(|e| e.to_string())?;
            let b = fs::read(runs[1].path().join(rel)).map_err(|e| format!("{}: {e}", rel.display()))?;
            ensure(a == b, || format!("{} differs between runs", rel.display()))?;
            compared += 1;
        }
    }
    // Training progress lines carry no timing, so stdout must match too.
    ensure(outputs[0] == outputs[1], || "command output differs between runs".into())?;
    Ok(format!("{compared} CSV files byte-identical across two runs of train/project/sandbox/verify"))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

const MALFORMED: &[&str] = &[
    "",
    "   # only a comment",
    "(",
    ")",
    "(const 1",
    "(const 1))",
    "const 1",
    "(const)",
    "(const 1 2)",
    "(const abc)",
    "(const nan)",
    "(const inf)",
    "(feature)",
    "(feature -1)",
    "(feature 1.5)",
    "(affine 1 2)",
    "(affine (1 x) 0)",
    "(pid 0 0 1 0)",
    "(pid 0 0 1 0 0 0)",
    "(clip (const 1) 2 1)",
    "(clip (const 1) 0)",
    "(if 0 0.5 (const 1))",
    "(sum)",
    "(tree)",
    "(tree (split 0 0.5 (leaf 1)))",
    "(leaf 1)",
    "(split 0 0 (leaf 1) (leaf 2))",
    "(frobnicate 1)",
    "(const 1) @",
    "((const 1))",
];

fn dsl() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RandomProgramConfig::new(4, 2);
    for i in 0..1000 {
        let prog: Program = random_program(&mut rng, &cfg);
        let text = pretty_print(&prog);
        let back: Program = parse(&text).map_err(|e| format!("ast {i}: {e}"))?;
        ensure(back == prog, || format!("ast {i} changed in round trip: {text}"))?;
    }
    for src in MALFORMED {
        match parse::<f64>(src) {
            Err(Error::Parse { pos, .. }) if pos.line >= 1 && pos.col >= 1 => {}
            other => return Err(format!("{src:?} gave {other:?}")),
        }
    }
    Ok(format!("1000 round trips, {} malformed inputs rejected with positions", MALFORMED.len()))
}

#[test]
fn acceptance() {
    let m = |s: u64| Duration::from_secs(s);
    let results = [
        report(1, "gradient check", m(10), gradients),
        report(2, "projection recovery", m(30), recovery),
        report(3, "self-projection", m(120), self_projection),
        report(4, "tree fitting", m(10), cart),
        report(5, "regret sandbox", m(300), regret),
        report(6, "pendulum training run", m(600), propel_pendulum),
        report(7, "verifier soundness", m(60), verifier),
        report(8, "determinism", m(300), determinism),
        report(9, "program syntax", m(60), dsl),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
