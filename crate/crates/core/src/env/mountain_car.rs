use rand::Rng;

use super::{seeded_rng, EnvSpec, Environment, EpisodeClock, Observation, StepResult};
use crate::error::{Error, Result};

const POWER: f64 = 0.0015;
const HILL: f64 = 0.0025;
const MIN_POS: f64 = -1.2;
const MAX_POS: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POS: f64 = 0.45;
const DT: f64 = 1.0;
const SUBSTEPS: usize = 20;
const HORIZON: usize = 999;

/// Continuous mountain car. One control period is one unit of time;
/// `p' = v`, `v' = 0.0015 u - 0.0025 cos(3p)`.
///
/// Reward is `-0.1 u^2` per step plus 100 on reaching the goal.
#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: EnvSpec,
    pos: f64,
    vel: f64,
    clock: EpisodeClock,
}

impl MountainCar {
    pub fn new() -> Self {
        MountainCar {
            spec: EnvSpec::new(
                "mountain_car",
                &["position", "velocity"],
                (vec![MIN_POS, -MAX_SPEED], vec![MAX_POS, MAX_SPEED]),
                vec![-1.0],
                vec![1.0],
                DT,
                HORIZON,
            ),
            pos: -0.5,
            vel: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    pub fn accel(pos: f64, force: f64) -> f64 {
        POWER * force - HILL * (3.0 * pos).cos()
    }

    /// Bottom of the valley, where the hill force vanishes.
    pub fn valley_bottom() -> f64 {
        -std::f64::consts::PI / 6.0
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = seeded_rng(seed);
        self.pos = rng.random_range(-0.6..-0.4);
        self.vel = 0.0;
        self.clock = EpisodeClock::default();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check(&self.spec, action)?;
        let u = action[0].clamp(-1.0, 1.0);
        let h = DT / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            self.vel += h * Self::accel(self.pos, u);
            self.pos += h * self.vel;
        }
        self.vel = self.vel.clamp(-MAX_SPEED, MAX_SPEED);
        self.pos = self.pos.clamp(MIN_POS, MAX_POS);
        if self.pos <= MIN_POS && self.vel < 0.0 {
            self.vel = 0.0;
        }
        let goal = self.pos >= GOAL_POS;
        let reward = -0.1 * u * u + if goal { 100.0 } else { 0.0 };
        let (done, truncated) = self.clock.tick(&self.spec, goal);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
            truncated,
        })
    }

    fn observe(&self) -> Observation {
        vec![self.pos, self.vel]
    }

    fn state(&self) -> Vec<f64> {
        vec![self.pos, self.vel]
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != 2 || state.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("mountain car state is (position, velocity)".into()));
        }
        self.pos = state[0];
        self.vel = state[1];
        self.clock = EpisodeClock::default();
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
