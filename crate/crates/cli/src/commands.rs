//! Subcommand bodies. Each returns an exit code on failure: 2 for bad
//! configuration or input files, 3 for failures while running.

use std::fs;
use std::path::{Path, PathBuf};

use progrl::dsl::{parse_for, pretty_print};
use progrl::env::Environment;
use progrl::policy::{mean_return, MixedPolicy};
use progrl::project::{probe_distance, project};
use progrl::propel::{load_checkpoint, propel_run};
use progrl::sandbox::{run_approx_pgd, run_sweep};
use progrl::verify::{verify, ObsBox};
use progrl::{Error, Program, Scalar};

use crate::config::RunConfig;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) | Error::Parse { .. } | Error::Verify(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

trait Input<T> {
    /// Marks a failure as a problem with the user's inputs.
    fn input(self) -> Result<T, Failure>;
}

impl<T> Input<T> for progrl::Result<T> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|error| Failure {
            code: EXIT_CONFIG,
            error,
        })
    }
}

type Outcome = Result<(), Failure>;

fn write(path: &Path, text: &str) -> progrl::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_run_dir(cfg: &RunConfig) -> progrl::Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.copy"), &cfg.to_text())?;
    Ok(dir)
}

fn read_program(path: &Path, env: &dyn Environment) -> Result<Program, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e)).input()?;
    parse_program(&text, env).map_err(|f| Failure {
        code: f.code,
        error: Error::Config(format!("{}: {}", path.display(), f.error)),
    })
}

fn parse_program(text: &str, env: &dyn Environment) -> Result<Program, Failure> {
    let spec = env.spec();
    let p: Program = parse_for(text, spec.obs_dim).input()?;
    p.validate(spec.obs_dim, spec.act_dim).input()?;
    Ok(p)
}

pub fn train(cfg: &RunConfig) -> Outcome {
    let propel = cfg.propel().input()?;
    let env = cfg.env().input()?;
    let pi0 = match cfg.raw("program") {
        "" => parse_program(&cfg.program_text().input()?, env.as_ref())?,
        p => read_program(Path::new(p), env.as_ref())?,
    };
    let spec = env.spec();
    propel.dagger.class.admits(&pi0, spec.obs_dim, spec.act_dim).input()?;
    let dir = prepare_run_dir(cfg)?;
    let out = propel_run(env.as_ref(), &pi0, &propel, cfg.seed().input()?)?;
    write(&dir.join("best.sexp"), &pretty_print(&out.best))?;
    for r in &out.records {
        println!(
            "iter {}: program {:.3} +- {:.3}  mixed {:.3} +- {:.3}{}",
            r.t,
            r.program_mean,
            r.program_std,
            r.mixed_mean,
            r.mixed_std,
            if r.diverged { "  (update diverged)" } else { "" }
        );
    }
    let best = out.records.last().map_or(out.prior.0, |r| r.best_so_far);
    println!(
        "best_iteration={} best_return={best} prior_return={}",
        out.best_iteration, out.prior.0
    );
    Ok(())
}

pub fn project_cmd(cfg: &RunConfig) -> Outcome {
    let checkpoint = cfg.raw("project.checkpoint");
    if checkpoint.is_empty() {
        return Err(Error::Config("no expert checkpoint given (set project.checkpoint)".into()).into());
    }
    let iteration: usize = cfg.get("project.iteration").input()?;
    let lambda: f64 = cfg.get("project.lambda").input()?;
    let dagger = cfg.dagger().input()?;
    let probe_states: usize = cfg.get("project.probe_states").input()?;
    let env = cfg.env().input()?;
    let (program, theta) = load_checkpoint(Path::new(checkpoint), iteration).input()?;
    let expert = MixedPolicy::new(program, theta, lambda, env.spec()).input()?;
    let dir = prepare_run_dir(cfg)?;
    let seed = cfg.seed().input()?;
    let (p, metrics) = project(&expert, env.as_ref(), &dagger, seed)?;
    write(&dir.join("program.sexp"), &pretty_print(&p))?;
    write(&dir.join("projection.csv"), &metrics.to_csv())?;
    metrics.dataset.write_csv(&dir.join("dataset.csv"))?;
    println!("{}", pretty_print(&p).trim_end());
    let best = metrics.best();
    println!("best_round={} heldout_mse={:e}", best.round, best.heldout_mse);
    if dagger.class.kind == progrl::dsl::ClassKind::PidDsl {
        let d = probe_distance(&p, &expert.program, env.spec(), probe_states, seed)?;
        println!("probe_distance={d:e}");
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, program: &Path, episodes: Option<usize>, first_seed: Option<u64>) -> Outcome {
    let env = cfg.env().input()?;
    let p = read_program(program, env.as_ref())?;
    let seeds: Vec<u64> = match (episodes, first_seed) {
        (None, None) => cfg.eval_seeds().input()?,
        (n, s) => {
            let n = n.unwrap_or(10) as u64;
            let s = s.unwrap_or(0);
            (s..s + n).collect()
        }
    };
    if seeds.is_empty() {
        return Err(Error::Config("no evaluation seeds".into()).into());
    }
    let (mean, std) = mean_return(&p, env.as_ref(), &seeds, 1.0)?;
    println!("mean={mean} std={std} n={}", seeds.len());
    Ok(())
}

fn sandbox_in<S: Scalar>(cfg: &RunConfig) -> Outcome {
    let md = cfg.sandbox::<S>().input()?;
    let grid = cfg.sweep::<S>().input()?;
    let dir = prepare_run_dir(cfg)?;
    if grid.is_empty() {
        let trace = run_approx_pgd(&md)?;
        write(&dir.join("trace.csv"), &trace.to_csv())?;
        let (m, se) = trace.final_regret();
        println!("final_avg_regret={:e} se={:e} gap={:e}", m.as_f64(), se.as_f64(), trace.final_gap().as_f64());
    } else {
        let traces = run_sweep(&md, &grid, &dir)?;
        for (i, ((b, s, e), t)) in grid.iter().zip(&traces).enumerate() {
            let (m, se) = t.final_regret();
            println!("point {i} beta={b} sigma={s} epsilon={e}: final_avg_regret={:e} se={:e}", m.as_f64(), se.as_f64());
        }
    }
    Ok(())
}

pub fn sandbox(cfg: &RunConfig) -> Outcome {
    match cfg.raw("sandbox.precision") {
        "f64" => sandbox_in::<f64>(cfg),
        "f32" => sandbox_in::<f32>(cfg),
        other => Err(Error::Config(format!("key 'sandbox.precision' must be f32 or f64, found '{other}'")).into()),
    }
}

pub fn verify_cmd(cfg: &RunConfig, program: &Path, box_file: Option<&Path>) -> Outcome {
    let env = cfg.env().input()?;
    let spec = env.spec();
    let b = match box_file {
        Some(path) => ObsBox::load(path).input()?,
        None => ObsBox::new(spec.obs_low.clone(), spec.obs_high.clone(), spec.dt),
    };
    let text = fs::read_to_string(program).map_err(|e| Error::io(program, e)).input()?;
    let p: Program = parse_for(&text, b.dim()).input()?;
    let report = verify(&p, &b)?;
    let dir = prepare_run_dir(cfg)?;
    write(&dir.join("verify.csv"), &report.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}
