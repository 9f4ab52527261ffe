//! Seedable continuous-control environments.
//!
//! Every environment advances its continuous-time dynamics with semi-implicit
//! Euler over a fixed number of internal sub-steps per control period `dt`.
//! `reset(seed)` fully determines the episode: identical seeds and identical
//! action sequences give bit-identical observations.

mod mountain_car;
mod pendulum;
mod track;

pub use mountain_car::MountainCar;
pub use pendulum::Pendulum;
pub use track::{TrackSim, TrackSpec};

use crate::error::{Error, Result};

pub type Observation = Vec<f64>;
pub type Action = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub act_low: Vec<f64>,
    pub act_high: Vec<f64>,
    pub dt: f64,
    pub max_horizon: usize,
    pub obs_names: Vec<String>,
    /// Nominal observation range, used for probing and default verification boxes.
    pub obs_low: Vec<f64>,
    pub obs_high: Vec<f64>,
}

impl EnvSpec {
    pub fn new(
        name: &str,
        obs_names: &[&str],
        obs_range: (Vec<f64>, Vec<f64>),
        act_low: Vec<f64>,
        act_high: Vec<f64>,
        dt: f64,
        max_horizon: usize,
    ) -> Self {
        let spec = EnvSpec {
            name: name.to_string(),
            obs_dim: obs_names.len(),
            act_dim: act_low.len(),
            act_low,
            act_high,
            dt,
            max_horizon,
            obs_names: obs_names.iter().map(|s| s.to_string()).collect(),
            obs_low: obs_range.0,
            obs_high: obs_range.1,
        };
        debug_assert!(spec.validate().is_ok());
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::Contract("obs_dim and act_dim must be >= 1".into()));
        }
        if self.act_low.len() != self.act_dim || self.act_high.len() != self.act_dim {
            return Err(Error::Contract("action bound length mismatch".into()));
        }
        if self.act_low.iter().zip(&self.act_high).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Contract("act_low must be < act_high".into()));
        }
        if self.obs_low.len() != self.obs_dim
            || self.obs_high.len() != self.obs_dim
            || self.obs_low.iter().zip(&self.obs_high).any(|(lo, hi)| !(lo <= hi))
        {
            return Err(Error::Contract("observation range must be ordered and sized obs_dim".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Contract("dt must be positive".into()));
        }
        Ok(())
    }

    /// Clamps each component into `[act_low, act_high]`.
    pub fn clip_action(&self, action: &[f64]) -> Action {
        action
            .iter()
            .zip(self.act_low.iter().zip(&self.act_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }

    /// Half the action range per dimension.
    pub fn act_half_range(&self) -> Vec<f64> {
        self.act_low
            .iter()
            .zip(&self.act_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    /// The episode is over (terminated or truncated).
    pub done: bool,
    /// The episode ended only because the horizon was reached.
    pub truncated: bool,
}

/// A resettable environment. Handles are owned by one thread at a time.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode whose initial state is drawn from `seed`.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    fn observe(&self) -> Observation;

    /// Raw simulator state (not the observation).
    fn state(&self) -> Vec<f64>;

    /// Overwrites the simulator state and starts a fresh episode from it.
    fn set_state(&mut self, state: &[f64]) -> Result<()>;

    fn clone_box(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub const ENV_NAMES: [&str; 3] = ["pendulum", "mountain_car", "track"];

/// Builds a named environment and resets it with `seed`.
pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Environment>> {
    let mut env: Box<dyn Environment> = match name {
        "pendulum" => Box::new(Pendulum::new()),
        "mountain_car" => Box::new(MountainCar::new()),
        "track" => Box::new(TrackSim::new(TrackSpec::oval())?),
        other => {
            return Err(Error::Config(format!(
                "unknown environment '{other}' (expected one of {})",
                ENV_NAMES.join(", ")
            )))
        }
    };
    env.reset(seed);
    Ok(env)
}

/// Shared step bookkeeping: precondition checks and horizon accounting.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    pub t: usize,
    pub done: bool,
}

impl EpisodeClock {
    pub fn check(&self, spec: &EnvSpec, action: &[f64]) -> Result<()> {
        if self.done {
            return Err(Error::State(format!("{}: step called on a finished episode", spec.name)));
        }
        if action.len() != spec.act_dim {
            return Err(Error::Contract(format!(
                "{}: action has {} entries, expected {}",
                spec.name,
                action.len(),
                spec.act_dim
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Contract(format!("{}: non-finite action", spec.name)));
        }
        Ok(())
    }

    /// Advances the clock; returns `(done, truncated)`.
    pub fn tick(&mut self, spec: &EnvSpec, terminated: bool) -> (bool, bool) {
        self.t += 1;
        let truncated = !terminated && self.t >= spec.max_horizon;
        self.done = terminated || truncated;
        (self.done, truncated)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
