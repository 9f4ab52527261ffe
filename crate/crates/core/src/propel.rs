//! The alternating loop: improve a mixed policy by policy gradient with the
//! program fixed, then project it back onto the program class.
//!
//! Seeds: iteration `t` uses `seed + 1000 t` for the update and
//! `seed + 1000 t + 500` for the projection. Evaluation always uses the
//! configured evaluation seeds, so returns are paired across iterations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dsl::{load_program, pretty_print};
use crate::env::{seeded_rng, Environment};
use crate::error::{Error, Result};
use crate::nn::{init_actor, load_nnp, save_nnp, update_f, Mlp, UpdateConfig};
use crate::policy::mean_return;
use crate::project::{project, DaggerConfig};
use crate::Program;

#[derive(Debug, Clone, PartialEq)]
pub struct PropelConfig {
    pub iterations: usize,
    pub update: UpdateConfig,
    pub dagger: DaggerConfig,
    pub eval_seeds: Vec<u64>,
    /// Carry the residual network across iterations instead of
    /// reinitialising it.
    pub warm_start: bool,
    /// Where checkpoints and metrics go; `None` keeps everything in memory.
    pub run_dir: Option<PathBuf>,
}

impl Default for PropelConfig {
    fn default() -> Self {
        PropelConfig {
            iterations: 5,
            update: UpdateConfig::default(),
            dagger: DaggerConfig::default(),
            eval_seeds: (10_000..10_010).collect(),
            warm_start: true,
            run_dir: None,
        }
    }
}

impl PropelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("at least one evaluation seed is required".into()));
        }
        self.update.validate()?;
        self.dagger.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub program_mean: f64,
    pub program_std: f64,
    pub mixed_mean: f64,
    pub mixed_std: f64,
    /// `None` when the update diverged and projection was skipped.
    pub heldout_mse: Option<f64>,
    pub diverged: bool,
    /// Best program return over iterations `0..=t`.
    pub best_so_far: f64,
    pub best_iteration: usize,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str =
    "iteration,program_mean,program_std,mixed_mean,mixed_std,heldout_mse,diverged,best_so_far,best_iteration";

impl IterationRecord {
    /// One metrics row. Wall time is excluded so rows are reproducible.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{},{},{:?},{}",
            self.t,
            self.program_mean,
            self.program_std,
            self.mixed_mean,
            self.mixed_std,
            self.heldout_mse.map(|v| format!("{v:?}")).unwrap_or_default(),
            u8::from(self.diverged),
            self.best_so_far,
            self.best_iteration
        )
    }

    fn parse_row(line: &str) -> Option<IterationRecord> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return None;
        }
        Some(IterationRecord {
            t: f[0].parse().ok()?,
            program_mean: f[1].parse().ok()?,
            program_std: f[2].parse().ok()?,
            mixed_mean: f[3].parse().ok()?,
            mixed_std: f[4].parse().ok()?,
            heldout_mse: if f[5].is_empty() { None } else { Some(f[5].parse().ok()?) },
            diverged: f[6] == "1",
            best_so_far: f[7].parse().ok()?,
            best_iteration: f[8].parse().ok()?,
            wall_seconds: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropelOutcome {
    pub best: Program,
    pub best_iteration: usize,
    /// Return of the initial program (mean, std).
    pub prior: (f64, f64),
    pub records: Vec<IterationRecord>,
    pub final_program: Program,
    pub final_theta: Mlp<f64>,
}

/// Where a run starts: iteration index, program and residual network.
#[derive(Debug, Clone)]
struct Start {
    t: usize,
    program: Program,
    theta: Mlp<f64>,
    prior: (f64, f64),
    best: (Program, usize, f64),
    history: Vec<IterationRecord>,
}

fn iter_dir(run: &Path, t: usize) -> PathBuf {
    run.join(format!("iter_{t:03}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_checkpoint(run: &Path, t: usize, program: &Program, theta: &Mlp<f64>, row: &str) -> Result<()> {
    let dir = iter_dir(run, t);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("program.sexp"), &pretty_print(program))?;
    save_nnp(theta, &dir.join("theta.nnp"))?;
    write(&dir.join("metrics.csv"), &format!("# schema=1\n{row}\n"))
}

/// Program and residual network saved after iteration `t` (0 is the prior).
pub fn load_checkpoint(run_dir: &Path, t: usize) -> Result<(Program, Mlp<f64>)> {
    let dir = iter_dir(run_dir, t);
    let program = load_program(&dir.join("program.sexp"), None)?;
    let theta = load_nnp(&dir.join("theta.nnp"))?;
    Ok((program, theta))
}

fn write_metrics(run: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut s = format!("# schema=1\n{METRICS_HEADER}\n");
    let mut timing = String::from("# schema=1\niteration,wall_seconds\n");
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
        let _ = writeln!(timing, "{},{:.3}", r.t, r.wall_seconds);
    }
    write(&run.join("metrics.csv"), &s)?;
    write(&run.join("timing.csv"), &timing)
}

/// Runs `cfg.iterations` rounds of update and projection from `pi0`.
/// The best program is the argmax of evaluation return over the prior and
/// every projected program, ties going to the earliest.
pub fn propel_run(env: &dyn Environment, pi0: &Program, cfg: &PropelConfig, seed: u64) -> Result<PropelOutcome> {
    cfg.validate()?;
    let spec = env.spec();
    cfg.dagger.class.admits(pi0, spec.obs_dim, spec.act_dim)?;
    let theta = init_actor(spec.obs_dim, spec.act_dim, cfg.update.hidden, &mut seeded_rng(seed));
    let prior = mean_return(pi0, env, &cfg.eval_seeds, 1.0)?;
    if let Some(run) = &cfg.run_dir {
        fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
        let row = format!("0,{:?},{:?},,,,0,{:?},0", prior.0, prior.1, prior.0);
        write_checkpoint(run, 0, pi0, &theta, &row)?;
    }
    run_from(
        env,
        Start {
            t: 0,
            program: pi0.clone(),
            theta,
            prior,
            best: (pi0.clone(), 0, prior.0),
            history: Vec::new(),
        },
        cfg,
        seed,
    )
}

/// Continues a run from the checkpoint of iteration `t` in `cfg.run_dir`,
/// reproducing what an uninterrupted run would have done.
pub fn propel_resume(env: &dyn Environment, t: usize, cfg: &PropelConfig, seed: u64) -> Result<PropelOutcome> {
    cfg.validate()?;
    let run = cfg
        .run_dir
        .as_ref()
        .ok_or_else(|| Error::Config("resuming needs a run directory".into()))?;
    if t > cfg.iterations {
        return Err(Error::Config(format!("checkpoint {t} is beyond {} iterations", cfg.iterations)));
    }
    let (program, theta) = load_checkpoint(run, t)?;
    let row_of = |k: usize| -> Result<IterationRecord> {
        let path = iter_dir(run, k).join("metrics.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .find(|l| !l.starts_with('#'))
            .and_then(|l| {
                // The prior's row leaves the mixed columns empty.
                IterationRecord::parse_row(&l.replace(",,,,", ",0,0,,"))
            })
            .ok_or_else(|| Error::Corrupt {
                path: path.clone(),
                msg: "unreadable metrics row".into(),
            })
    };
    let r0 = row_of(0)?;
    let history: Vec<IterationRecord> = (1..=t).map(row_of).collect::<Result<_>>()?;
    let (best_t, best_ret) = history
        .last()
        .map_or((0, r0.program_mean), |r| (r.best_iteration, r.best_so_far));
    let (best_prog, _) = load_checkpoint(run, best_t)?;
    run_from(
        env,
        Start {
            t,
            program,
            theta,
            prior: (r0.program_mean, r0.program_std),
            best: (best_prog, best_t, best_ret),
            history,
        },
        cfg,
        seed,
    )
}

fn run_from(env: &dyn Environment, start: Start, cfg: &PropelConfig, seed: u64) -> Result<PropelOutcome> {
    let spec = env.spec();
    let Start {
        t: t0,
        mut program,
        mut theta,
        prior,
        best,
        mut history,
    } = start;
    let (mut best_prog, mut best_t, mut best_ret) = best;
    for t in t0 + 1..=cfg.iterations {
        let clock = Instant::now();
        let update_seed = seed.wrapping_add(1000 * t as u64);
        let project_seed = update_seed.wrapping_add(500);
        let theta_in = if cfg.warm_start || t == 1 {
            theta.clone()
        } else {
            init_actor(spec.obs_dim, spec.act_dim, cfg.update.hidden, &mut seeded_rng(update_seed))
        };
        let (f, um) = update_f(&program, &theta_in, env, &cfg.update, update_seed)?;
        let mixed = mean_return(&f, env, &cfg.eval_seeds, 1.0)?;
        let mut heldout = None;
        if um.diverged.is_none() {
            let (p, pm) = project(&f, env, &cfg.dagger, project_seed)?;
            heldout = Some(pm.best().heldout_mse);
            if let Some(run) = &cfg.run_dir {
                fs::create_dir_all(iter_dir(run, t)).map_err(|e| Error::io(run, e))?;
                write(&iter_dir(run, t).join("projection.csv"), &pm.to_csv())?;
            }
            program = p;
        }
        theta = f.theta;
        let (pm, ps) = mean_return(&program, env, &cfg.eval_seeds, 1.0)?;
        if pm > best_ret {
            best_ret = pm;
            best_t = t;
            best_prog = program.clone();
        }
        let rec = IterationRecord {
            t,
            program_mean: pm,
            program_std: ps,
            mixed_mean: mixed.0,
            mixed_std: mixed.1,
            heldout_mse: heldout,
            diverged: um.diverged.is_some(),
            best_so_far: best_ret,
            best_iteration: best_t,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        if let Some(run) = &cfg.run_dir {
            write_checkpoint(run, t, &program, &theta, &rec.csv_row())?;
            write(&iter_dir(run, t).join("update.csv"), &um.to_csv())?;
        }
        history.push(rec);
        if let Some(run) = &cfg.run_dir {
            write_metrics(run, &history)?;
        }
    }
    Ok(PropelOutcome {
        best: best_prog,
        best_iteration: best_t,
        prior,
        records: history,
        final_program: program,
        final_theta: theta,
    })
}
