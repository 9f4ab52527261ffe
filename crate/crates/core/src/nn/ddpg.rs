//! Deterministic policy-gradient UPDATE step for a mixed policy.
//!
//! The program stays fixed; only the residual actor is trained. The critic
//! scores the executed (clipped) total action.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{seeded_rng, Environment};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Gradient, Mlp, ReplayBuffer, Transition};
use crate::policy::{Controller, MixedPolicy};
use crate::Program;

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    /// Environment steps in this UPDATE phase.
    pub steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Std of Gaussian exploration noise, as a fraction of the action half-range.
    pub noise: f64,
    pub batch: usize,
    /// Initial steps with uniform-random actions and no gradient updates.
    pub warmup: usize,
    pub hidden: usize,
    pub buffer: usize,
    /// Residual blend weight.
    pub lambda: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            steps: 10_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            noise: 0.1,
            batch: 64,
            warmup: 1000,
            hidden: 64,
            buffer: 100_000,
            lambda: 1.0,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("update: {m}")));
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if self.batch == 0 || self.hidden == 0 || self.buffer == 0 {
            return bad("batch, hidden and buffer must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateMetrics {
    /// Undiscounted return of each completed training episode.
    pub episode_returns: Vec<f64>,
    /// `(step, mean critic loss over the preceding 100 updates)`.
    pub critic_losses: Vec<(usize, f64)>,
    pub final_critic_loss: f64,
    pub steps_taken: usize,
    /// Set when training stopped early on a non-finite or exploding loss.
    pub diverged: Option<String>,
}

impl UpdateMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=1\nkind,index,value\n");
        for (i, r) in self.episode_returns.iter().enumerate() {
            s.push_str(&format!("episode_return,{i},{r:?}\n"));
        }
        for (t, l) in &self.critic_losses {
            s.push_str(&format!("critic_loss,{t},{l:?}\n"));
        }
        s.push_str(&format!("final_critic_loss,{},{:?}\n", self.steps_taken, self.final_critic_loss));
        s
    }
}

/// Actor with `tanh` output sized for the environment.
pub fn init_actor<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: usize, rng: &mut R) -> Mlp<f64> {
    Mlp::random(&[obs_dim, hidden, hidden, act_dim], Activation::Tanh, 3e-3, rng)
}

struct Learner<'a> {
    cfg: &'a UpdateConfig,
    policy: MixedPolicy,
    critic: Mlp<f64>,
    actor_target: Mlp<f64>,
    critic_target: Mlp<f64>,
    actor_opt: Adam<f64>,
    critic_opt: Adam<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl Learner<'_> {
    fn clip(&self, a: &mut [f64]) {
        for ((x, lo), hi) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *x = x.clamp(*lo, *hi);
        }
    }

    fn total_action(&self, net: &Mlp<f64>, prog: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        let y = net.forward(obs)?;
        let mut a: Vec<f64> = prog
            .iter()
            .zip(&y)
            .zip(&self.policy.residual_scale)
            .map(|((p, y), s)| p + self.policy.lambda * s * y)
            .collect();
        self.clip(&mut a);
        Ok(a)
    }

    /// One critic and one actor update on a sampled batch; returns the critic loss.
    fn train(&mut self, batch: &[&Transition]) -> Result<f64> {
        let n = batch.len() as f64;
        let gamma = self.cfg.gamma;

        let mut cgrad = Gradient::zeros_like(&self.critic);
        let mut loss = 0.0;
        for tr in batch {
            let a_next = self.total_action(&self.actor_target, &tr.next_prog_action, &tr.next_obs)?;
            let q_next = self.critic_target.forward(&concat(&tr.next_obs, &a_next))?[0];
            let y = tr.reward + if tr.terminal { 0.0 } else { gamma * q_next };
            let trace = self.critic.forward_trace(&concat(&tr.obs, &tr.action))?;
            let err = trace.output()[0] - y;
            loss += err * err / n;
            self.critic.backward_into(&trace, &[2.0 * err / n], &mut cgrad)?;
        }
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Ok(loss);
        }
        self.critic_opt.step(&mut self.critic, &cgrad);

        if self.policy.lambda > 0.0 {
            let obs_dim = self.policy.theta.input_dim();
            let mut agrad = Gradient::zeros_like(&self.policy.theta);
            for tr in batch {
                let trace = self.policy.theta.forward_trace(&tr.obs)?;
                let pre: Vec<f64> = tr
                    .prog_action
                    .iter()
                    .zip(trace.output())
                    .zip(&self.policy.residual_scale)
                    .map(|((p, y), s)| p + self.policy.lambda * s * y)
                    .collect();
                let mut a = pre.clone();
                self.clip(&mut a);
                let ctrace = self.critic.forward_trace(&concat(&tr.obs, &a))?;
                let dq = self.critic.input_gradient(&ctrace, &[1.0])?;
                let upstream: Vec<f64> = (0..a.len())
                    .map(|j| {
                        let g = dq[obs_dim + j];
                        // pass the gradient through the clip only when it points back inside
                        let blocked = (pre[j] > self.high[j] && g > 0.0) || (pre[j] < self.low[j] && g < 0.0);
                        if blocked {
                            0.0
                        } else {
                            -g * self.policy.lambda * self.policy.residual_scale[j] / n
                        }
                    })
                    .collect();
                self.policy.theta.backward_into(&trace, &upstream, &mut agrad)?;
            }
            self.actor_opt.step(&mut self.policy.theta, &agrad);
        }

        let tau = self.cfg.tau;
        self.actor_target.soft_update(&self.policy.theta, tau);
        self.critic_target.soft_update(&self.critic, tau);
        Ok(loss)
    }
}

/// Improves the mixed policy `program + lambda * nn_theta` by DDPG for
/// `cfg.steps` environment steps, holding the program fixed.
///
/// On divergence the last finite actor is returned and `metrics.diverged`
/// carries the diagnostic.
pub fn update_f(
    program: &Program,
    theta0: &Mlp<f64>,
    env: &dyn Environment,
    cfg: &UpdateConfig,
    seed: u64,
) -> Result<(MixedPolicy, UpdateMetrics)> {
    cfg.validate()?;
    let spec = env.spec().clone();
    program.validate(spec.obs_dim, spec.act_dim)?;
    theta0.check()?;
    let policy = MixedPolicy::new(program.clone(), theta0.clone(), cfg.lambda, &spec)?;
    let mut metrics = UpdateMetrics::default();
    if cfg.steps == 0 {
        return Ok((policy, metrics));
    }

    let mut rng = seeded_rng(seed);
    let critic = Mlp::random(
        &[spec.obs_dim + spec.act_dim, cfg.hidden, cfg.hidden, 1],
        Activation::Linear,
        3e-3,
        &mut rng,
    );
    let mut learner = Learner {
        cfg,
        actor_target: policy.theta.clone(),
        critic_target: critic.clone(),
        actor_opt: Adam::new(&policy.theta, cfg.actor_lr),
        critic_opt: Adam::new(&critic, cfg.critic_lr),
        critic,
        policy,
        low: spec.act_low.clone(),
        high: spec.act_high.clone(),
    };

    let mut env = env.clone_box();
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let mut obs = env.reset(rng.random());
    let mut state = learner.policy.initial_state();
    let (mut prog_out, mut next_state) = learner.policy.program_output(&obs, &state, &spec)?;
    let mut ep_return = 0.0;
    let mut window = (0.0, 0usize);
    let half = spec.act_half_range();

    for t in 0..cfg.steps {
        let action: Vec<f64> = if t < cfg.warmup {
            spec.act_low
                .iter()
                .zip(&spec.act_high)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect()
        } else {
            let r = learner.policy.residual(&obs)?;
            let mut a: Vec<f64> = prog_out
                .iter()
                .zip(&r)
                .zip(&half)
                .map(|((p, r), h)| {
                    let xi: f64 = rng.sample(StandardNormal);
                    p + r + cfg.noise * h * xi
                })
                .collect();
            learner.clip(&mut a);
            a
        };
        let step = env.step(&action)?;
        ep_return += step.reward;
        state = next_state;
        let (next_prog, after) = learner.policy.program_output(&step.obs, &state, &spec)?;
        buffer.push(Transition {
            obs: obs.clone(),
            prog_action: prog_out.clone(),
            action,
            reward: step.reward,
            next_obs: step.obs.clone(),
            next_prog_action: next_prog.clone(),
            terminal: step.done && !step.truncated,
        });

        if step.done {
            metrics.episode_returns.push(ep_return);
            ep_return = 0.0;
            obs = env.reset(rng.random());
            state = learner.policy.initial_state();
            (prog_out, next_state) = learner.policy.program_output(&obs, &state, &spec)?;
        } else {
            obs = step.obs;
            prog_out = next_prog;
            next_state = after;
        }

        if t >= cfg.warmup && buffer.len() >= cfg.batch {
            let snapshot = learner.policy.theta.clone();
            let batch = buffer.sample(cfg.batch, &mut rng);
            let loss = learner.train(&batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT || !learner.policy.theta.is_finite() {
                learner.policy.theta = snapshot;
                metrics.diverged = Some(format!("critic loss {loss:e} at step {t}"));
                metrics.steps_taken = t + 1;
                return Ok((learner.policy, metrics));
            }
            metrics.final_critic_loss = loss;
            window.0 += loss;
            window.1 += 1;
            if window.1 == 100 {
                metrics.critic_losses.push((t + 1, window.0 / 100.0));
                window = (0.0, 0);
            }
        }
    }
    metrics.steps_taken = cfg.steps;
    Ok((learner.policy, metrics))
}
