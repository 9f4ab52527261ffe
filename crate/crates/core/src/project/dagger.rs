use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsl::{advance, eval_step, fit_tree, ClassConfig, ClassKind};
use crate::env::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::policy::{mean_return, Controller, MixedPolicy};
use crate::project::fit::{fit_pid_censored, training_mse, Censor};
use crate::project::{DatasetRow, ImitationDataset};
use crate::{ProgState, Program};

/// Probability of executing the expert in round `k` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSchedule {
    /// 1 in the first round, 0 afterwards.
    FirstOnly,
    Constant(f64),
    /// `r^(k-1)`.
    Geometric(f64),
    List(Vec<f64>),
}

impl BetaSchedule {
    pub fn beta(&self, k: usize) -> f64 {
        match self {
            BetaSchedule::FirstOnly => {
                if k == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            BetaSchedule::Constant(b) => *b,
            BetaSchedule::Geometric(r) => r.powi(k as i32 - 1),
            BetaSchedule::List(v) => v.get(k - 1).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    /// Accepts `first`, `const:B`, `geom:R` or a comma-separated list.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad beta value '{t}'")))
        };
        if s == "first" {
            Ok(BetaSchedule::FirstOnly)
        } else if let Some(b) = s.strip_prefix("const:") {
            Ok(BetaSchedule::Constant(num(b)?))
        } else if let Some(r) = s.strip_prefix("geom:") {
            Ok(BetaSchedule::Geometric(num(r)?))
        } else {
            Ok(BetaSchedule::List(s.split(',').map(num).collect::<Result<_>>()?))
        }
    }

    pub fn validate(&self, rounds: usize) -> Result<()> {
        let mut prev = f64::INFINITY;
        for k in 1..=rounds {
            let b = self.beta(k);
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("beta in round {k} is {b}, outside [0, 1]")));
            }
            if b > prev {
                return Err(Error::Config("beta schedule must be non-increasing".into()));
            }
            prev = b;
        }
        Ok(())
    }
}

impl std::fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BetaSchedule::FirstOnly => write!(f, "first"),
            BetaSchedule::Constant(b) => write!(f, "const:{b}"),
            BetaSchedule::Geometric(r) => write!(f, "geom:{r}"),
            BetaSchedule::List(v) => {
                let parts: Vec<String> = v.iter().map(|b| b.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerConfig {
    pub rounds: usize,
    pub episodes: usize,
    /// Episode length cap; `None` runs to the environment horizon.
    pub horizon: Option<usize>,
    pub beta: BetaSchedule,
    pub class: ClassConfig,
    /// Seeds for the per-round program return; empty skips evaluation.
    pub eval_seeds: Vec<u64>,
    /// Fraction of each round's rows held out for selection.
    pub holdout: f64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            rounds: 4,
            episodes: 5,
            horizon: None,
            beta: BetaSchedule::FirstOnly,
            class: ClassConfig::pid_dsl(),
            eval_seeds: Vec::new(),
            holdout: 0.2,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("dagger rounds must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("dagger episodes must be at least 1".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("dagger horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", self.holdout)));
        }
        self.beta.validate(self.rounds)?;
        self.class.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub beta: f64,
    pub rows: usize,
    pub train_mse: f64,
    /// Error on the final aggregated held-out set.
    pub heldout_mse: f64,
    /// Mean program return over the evaluation seeds, if any.
    pub program_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMetrics {
    pub rounds: Vec<RoundMetrics>,
    pub best_round: usize,
    pub dataset: ImitationDataset,
}

impl ProjectionMetrics {
    pub fn best(&self) -> &RoundMetrics {
        &self.rounds[self.best_round - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=1\nround,beta,rows,train_mse,heldout_mse,program_return,selected\n");
        for r in &self.rounds {
            let ret = r.program_return.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:?},{},{:?},{:?},{},{}",
                r.round,
                r.beta,
                r.rows,
                r.train_mse,
                r.heldout_mse,
                ret,
                u8::from(r.round == self.best_round)
            );
        }
        s
    }
}

/// Runs `episodes` episodes (episode `i` resets with `seed + i`). At each
/// step a coin executes the expert with probability `beta`, the learner
/// otherwise. Every visited state is labelled with the expert's action.
/// PID contexts are the learner's and are recorded only when
/// `record_ctx` is set.
#[allow(clippy::too_many_arguments)]
pub fn collect_round(
    expert: &MixedPolicy,
    learner: &Program,
    env: &dyn Environment,
    beta: f64,
    episodes: usize,
    horizon: usize,
    seed: u64,
    round: usize,
    record_ctx: bool,
) -> Result<Vec<DatasetRow>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Contract(format!("beta {beta} outside [0, 1]")));
    }
    let spec = env.spec();
    if horizon == 0 || horizon > spec.max_horizon {
        return Err(Error::Contract(format!("horizon {horizon} outside 1..={}", spec.max_horizon)));
    }
    let per_episode: Vec<Vec<DatasetRow>> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = env.clone_box();
            let mut coin = ChaCha8Rng::seed_from_u64(seed);
            coin.set_stream(i + 1);
            let mut obs = env.reset(seed.wrapping_add(i));
            let mut es = expert.initial_state();
            let mut ls = ProgState::new(learner);
            let mut rows = Vec::new();
            for _ in 0..horizon {
                let (label, es_next) = expert.act(&obs, &es, spec)?;
                let (ctx, _) = advance(learner, &ls, &obs, spec.dt)?;
                let (learner_out, ls_next) = eval_step(learner, &ls, &obs, spec.dt)?;
                let use_expert = coin.random::<f64>() < beta;
                let action = if use_expert {
                    label.clone()
                } else {
                    spec.clip_action(&learner_out)
                };
                rows.push(DatasetRow {
                    obs: obs.clone(),
                    ctx: if record_ctx { ctx } else { Vec::new() },
                    action: label,
                    round,
                });
                es = es_next;
                ls = ls_next;
                let r = env.step(&action)?;
                obs = r.obs;
                if r.done {
                    break;
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

fn censor_for(spec: &EnvSpec) -> Censor {
    Censor {
        low: spec.act_low.clone(),
        high: spec.act_high.clone(),
    }
}

/// Fits one program to `data` under `class`, using `template` for the PID class.
pub fn fit_class(data: &ImitationDataset, template: &Program, class: &ClassConfig, spec: &EnvSpec) -> Result<Program> {
    match class.kind {
        ClassKind::PidDsl => Ok(fit_pid_censored(data, template, Some(&censor_for(spec)))?.program),
        ClassKind::Tree => Ok(fit_tree(data, class)?.program),
    }
}

/// DAgger projection of `f` onto the configured class. The PID class keeps
/// the structure of `f.program` and refits its gains and affine weights;
/// the tree class grows a tree by CART. Returns the round whose fit has the
/// lowest error on the final held-out set (ties go to the earlier round).
pub fn project(f: &MixedPolicy, env: &dyn Environment, cfg: &DaggerConfig, seed: u64) -> Result<(Program, ProjectionMetrics)> {
    cfg.validate()?;
    let spec = env.spec();
    let horizon = cfg.horizon.unwrap_or(spec.max_horizon).min(spec.max_horizon);
    let pid = cfg.class.kind == ClassKind::PidDsl;
    let template = &f.program;
    if pid {
        cfg.class.admits(template, spec.obs_dim, spec.act_dim)?;
    }
    let n_slots = if pid { template.pid_count() } else { 0 };
    let mut data = ImitationDataset::new(spec.obs_dim, spec.act_dim, n_slots);
    let mut train_idx = Vec::new();
    let mut held_idx = Vec::new();
    let mut learner = template.clone();
    let mut fits: Vec<(Program, f64, f64)> = Vec::new();
    let censor = censor_for(spec);
    for k in 1..=cfg.rounds {
        let beta = cfg.beta.beta(k);
        let round_seed = seed.wrapping_add(100 * k as u64);
        let rows = collect_round(f, &learner, env, beta, cfg.episodes, horizon, round_seed, k, pid)?;
        let start = data.len();
        let n = rows.len();
        let n_held = (n as f64 * cfg.holdout).floor() as usize;
        for r in rows {
            data.push(r)?;
        }
        train_idx.extend(start..start + n - n_held);
        held_idx.extend(start + n - n_held..start + n);
        let train = data.subset(&train_idx);
        let prog = fit_class(&train, template, &cfg.class, spec)?;
        let train_mse = training_mse(&prog, &train, Some(&censor))?;
        let ret = if cfg.eval_seeds.is_empty() {
            None
        } else {
            Some(mean_return(&prog, env, &cfg.eval_seeds, 1.0)?.0)
        };
        fits.push((prog.clone(), train_mse, ret.unwrap_or(f64::NAN)));
        learner = prog;
    }
    let held = data.subset(if held_idx.is_empty() { &train_idx } else { &held_idx });
    let mut rounds = Vec::with_capacity(fits.len());
    let mut best = (0, f64::INFINITY);
    let mut seen = 0;
    for (i, (prog, train_mse, ret)) in fits.iter().enumerate() {
        let k = i + 1;
        seen += data.rows.iter().filter(|r| r.round == k).count();
        let heldout_mse = training_mse(prog, &held, Some(&censor))?;
        if heldout_mse < best.1 || best.0 == 0 {
            best = (k, heldout_mse);
        }
        rounds.push(RoundMetrics {
            round: k,
            beta: cfg.beta.beta(k),
            rows: seen,
            train_mse: *train_mse,
            heldout_mse,
            program_return: (!ret.is_nan()).then_some(*ret),
        });
    }
    let program = fits.swap_remove(best.0 - 1).0;
    Ok((
        program,
        ProjectionMetrics {
            rounds,
            best_round: best.0,
            dataset: data,
        },
    ))
}

/// Largest absolute difference between the raw outputs of `a` and `b`
/// along one stream of `n` observations drawn uniformly from the
/// environment's observation box. Accumulators advance along the stream.
pub fn probe_distance(a: &Program, b: &Program, spec: &EnvSpec, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sa, mut sb) = (ProgState::new(a), ProgState::new(b));
    let mut worst = 0.0f64;
    for _ in 0..n {
        let obs: Vec<f64> = spec
            .obs_low
            .iter()
            .zip(&spec.obs_high)
            .map(|(&lo, &hi)| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
        let (ua, na) = eval_step(a, &sa, &obs, spec.dt)?;
        let (ub, nb) = eval_step(b, &sb, &obs, spec.dt)?;
        for (x, y) in ua.iter().zip(&ub) {
            worst = worst.max((x - y).abs());
        }
        sa = na;
        sb = nb;
    }
    Ok(worst)
}
