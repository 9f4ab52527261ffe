use rand::Rng;

use super::{seeded_rng, wrap_angle, EnvSpec, Environment, EpisodeClock, Observation, StepResult};
use crate::error::{Error, Result};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const DT: f64 = 0.05;
const SUBSTEPS: usize = 200;
const HORIZON: usize = 200;

/// Torque-limited pendulum swing-up. Angle 0 is upright.
///
/// State `(theta, theta_dot)`, observation `(cos theta, sin theta, theta_dot)`,
/// reward `-(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2)` at the pre-step state.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec::new(
                "pendulum",
                &["cos_theta", "sin_theta", "theta_dot"],
                (vec![-1.0, -1.0, -MAX_SPEED], vec![1.0, 1.0, MAX_SPEED]),
                vec![-MAX_TORQUE],
                vec![MAX_TORQUE],
                DT,
                HORIZON,
            ),
            theta: std::f64::consts::PI,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    /// Angular acceleration of the continuous-time model.
    pub fn angular_accel(theta: f64, torque: f64) -> f64 {
        3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * torque
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = seeded_rng(seed);
        self.theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.clock = EpisodeClock::default();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check(&self.spec, action)?;
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let h = DT / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            self.theta_dot += h * Self::angular_accel(self.theta, u);
            self.theta += h * self.theta_dot;
        }
        self.theta_dot = self.theta_dot.clamp(-MAX_SPEED, MAX_SPEED);
        let (done, truncated) = self.clock.tick(&self.spec, false);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
            truncated,
        })
    }

    fn observe(&self) -> Observation {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn state(&self) -> Vec<f64> {
        vec![self.theta, self.theta_dot]
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != 2 || state.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("pendulum state is (theta, theta_dot)".into()));
        }
        self.theta = state[0];
        self.theta_dot = state[1];
        self.clock = EpisodeClock::default();
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
