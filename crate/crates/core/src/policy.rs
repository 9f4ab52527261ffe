//! Policies, rollouts and return bookkeeping.

use rayon::prelude::*;

use crate::dsl::eval_step;
use crate::env::{Action, EnvSpec, Environment, Observation};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::{ProgState, Program};

/// Anything that maps an observation (plus program accumulator state) to an action.
pub trait Controller: Sync {
    /// Accumulator state at episode start.
    fn initial_state(&self) -> ProgState;

    /// Action for `obs`, clipped to the environment bounds, and the successor
    /// accumulator state. The input state is not modified.
    fn act(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)>;
}

fn check_dims(obs: &[f64], spec: &EnvSpec) -> Result<()> {
    if obs.len() != spec.obs_dim {
        return Err(Error::Contract(format!(
            "observation has {} entries, environment has obs_dim {}",
            obs.len(),
            spec.obs_dim
        )));
    }
    Ok(())
}

fn program_action(program: &Program, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
    check_dims(obs, spec)?;
    if program.act_dim() != spec.act_dim {
        return Err(Error::Contract(format!(
            "program has {} outputs, environment has act_dim {}",
            program.act_dim(),
            spec.act_dim
        )));
    }
    eval_step(program, state, obs, spec.dt)
}

impl Controller for Program {
    fn initial_state(&self) -> ProgState {
        ProgState::new(self)
    }

    fn act(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
        let (u, next) = program_action(self, obs, state, spec)?;
        Ok((spec.clip_action(&u), next))
    }
}

/// Neural policy `a = center + scale * nn(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    pub net: Mlp<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NeuralPolicy {
    /// Output spans the action box when the net ends in `tanh`.
    pub fn for_env(net: Mlp<f64>, spec: &EnvSpec) -> Self {
        NeuralPolicy {
            center: spec.act_low.iter().zip(&spec.act_high).map(|(l, h)| 0.5 * (l + h)).collect(),
            scale: spec.act_half_range(),
            net,
        }
    }
}

impl Controller for NeuralPolicy {
    fn initial_state(&self) -> ProgState {
        ProgState::empty()
    }

    fn act(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
        check_dims(obs, spec)?;
        let y = self.net.forward(obs)?;
        let a: Vec<f64> = y
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(y, (c, s))| c + s * y)
            .collect();
        Ok((spec.clip_action(&a), state.clone()))
    }
}

/// Lifted policy `f(s) = clip(pi(s) + lambda * scale * nn_theta(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolicy {
    pub program: Program,
    pub theta: Mlp<f64>,
    pub lambda: f64,
    /// Per-dimension multiplier on the network output.
    pub residual_scale: Vec<f64>,
}

impl MixedPolicy {
    pub fn new(program: Program, theta: Mlp<f64>, lambda: f64, spec: &EnvSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
        }
        if theta.input_dim() != spec.obs_dim || theta.output_dim() != spec.act_dim {
            return Err(Error::Contract(format!(
                "residual network maps {} -> {}, environment needs {} -> {}",
                theta.input_dim(),
                theta.output_dim(),
                spec.obs_dim,
                spec.act_dim
            )));
        }
        Ok(MixedPolicy {
            program,
            theta,
            lambda,
            residual_scale: spec.act_half_range(),
        })
    }

    /// Residual added on top of the program output (before clipping).
    pub fn residual(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let y = self.theta.forward(obs)?;
        Ok(y
            .iter()
            .zip(&self.residual_scale)
            .map(|(y, s)| self.lambda * s * y)
            .collect())
    }

    /// Unclipped program output and successor state.
    pub fn program_output(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
        program_action(&self.program, obs, state, spec)
    }

    /// Combines a precomputed program output with the residual.
    pub fn combine(&self, prog_out: &[f64], obs: &[f64], spec: &EnvSpec) -> Result<Action> {
        if self.lambda == 0.0 {
            return Ok(spec.clip_action(prog_out));
        }
        let r = self.residual(obs)?;
        let a: Vec<f64> = prog_out.iter().zip(&r).map(|(p, r)| p + r).collect();
        Ok(spec.clip_action(&a))
    }
}

impl Controller for MixedPolicy {
    fn initial_state(&self) -> ProgState {
        ProgState::new(&self.program)
    }

    fn act(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
        let (u, next) = self.program_output(obs, state, spec)?;
        Ok((self.combine(&u, obs, spec)?, next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    ProgramOnly,
    NeuralOnly,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Program(Program),
    Neural(NeuralPolicy),
    Mixed(MixedPolicy),
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Program(_) => PolicyKind::ProgramOnly,
            Policy::Neural(_) => PolicyKind::NeuralOnly,
            Policy::Mixed(_) => PolicyKind::Mixed,
        }
    }

    fn inner(&self) -> &dyn Controller {
        match self {
            Policy::Program(p) => p,
            Policy::Neural(n) => n,
            Policy::Mixed(m) => m,
        }
    }
}

impl Controller for Policy {
    fn initial_state(&self) -> ProgState {
        self.inner().initial_state()
    }

    fn act(&self, obs: &[f64], state: &ProgState, spec: &EnvSpec) -> Result<(Action, ProgState)> {
        self.inner().act(obs, state, spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub gamma: f64,
    /// Discounted return `sum_t gamma^t r_t`.
    pub ret: f64,
}

impl Trajectory {
    pub fn discounted_return(steps: &[Step], gamma: f64) -> f64 {
        let mut ret = 0.0;
        let mut discount = 1.0;
        for s in steps {
            ret += discount * s.reward;
            discount *= gamma;
        }
        ret
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs one episode from `env.reset(seed)` for at most `horizon` steps.
pub fn rollout<C: Controller + ?Sized>(
    policy: &C,
    env: &mut dyn Environment,
    horizon: usize,
    seed: u64,
    gamma: f64,
) -> Result<Trajectory> {
    if horizon == 0 || horizon > env.spec().max_horizon {
        return Err(Error::Contract(format!(
            "horizon {horizon} outside 1..={}",
            env.spec().max_horizon
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract(format!("gamma {gamma} outside (0, 1]")));
    }
    let mut obs = env.reset(seed);
    let mut state = policy.initial_state();
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (action, next_state) = policy.act(&obs, &state, env.spec())?;
        state = next_state;
        let r = env.step(&action)?;
        let done = r.done;
        steps.push(Step {
            obs: std::mem::replace(&mut obs, r.obs.clone()),
            action,
            reward: r.reward,
            next_obs: r.obs,
            done,
        });
        if done {
            break;
        }
    }
    let ret = Trajectory::discounted_return(&steps, gamma);
    Ok(Trajectory { steps, gamma, ret })
}

/// Mean and population standard deviation of episode returns, one episode
/// per seed, episodes run to the environment horizon.
pub fn mean_return<C: Controller + ?Sized>(
    policy: &C,
    env: &dyn Environment,
    seeds: &[u64],
    gamma: f64,
) -> Result<(f64, f64)> {
    let returns = episode_returns(policy, env, seeds, gamma)?;
    Ok(mean_std(&returns))
}

pub fn episode_returns<C: Controller + ?Sized>(
    policy: &C,
    env: &dyn Environment,
    seeds: &[u64],
    gamma: f64,
) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::Contract("mean_return needs at least one seed".into()));
    }
    let horizon = env.spec().max_horizon;
    seeds
        .par_iter()
        .map(|&seed| {
            let mut e = env.clone_box();
            rollout(policy, e.as_mut(), horizon, seed, gamma).map(|t| t.ret)
        })
        .collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
