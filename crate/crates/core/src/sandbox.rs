//! Projected gradient descent with injected errors on a box-constrained
//! quadratic, for measuring how regret responds to gradient bias, gradient
//! noise and inexact projection.
//!
//! The loss is `J(x) = 0.5 (x - x*)' A (x - x*)` on the box `[lo, hi]`.
//! One iteration is
//!
//! ```text
//! y = clip(x - eta_t (grad J(x) + b + xi_t))      |b| = beta, xi_t ~ N(0, sigma^2 I)
//! x' = clip(y + p_t)                              |p_t| = epsilon
//! ```
//!
//! with `b` drawn once per repeat and `p_t` in a fresh random direction
//! each step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule<S> {
    Constant(S),
    /// `c / sqrt(t)` for `t = 1, 2, ...`.
    InvSqrt(S),
}

impl<S: Scalar> StepSchedule<S> {
    pub fn eta(&self, t: usize) -> S {
        match *self {
            StepSchedule::Constant(e) => e,
            StepSchedule::InvSqrt(c) => c / S::of(t as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdConfig<S> {
    pub iterations: usize,
    pub schedule: StepSchedule<S>,
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub target: Vec<S>,
    /// Row-major `d x d` symmetric positive semidefinite matrix.
    pub scale: Vec<S>,
    pub beta: S,
    pub sigma: S,
    pub epsilon: S,
    pub seed: u64,
    pub repeats: usize,
    /// Starting point; the box centre when `None`.
    pub x0: Option<Vec<S>>,
}

impl<S: Scalar> MdConfig<S> {
    /// Identity-scaled problem on `[lo, hi]^d`.
    pub fn identity(d: usize, lo: S, hi: S, target: Vec<S>) -> Self {
        let mut scale = vec![S::zero(); d * d];
        for i in 0..d {
            scale[i * d + i] = S::one();
        }
        MdConfig {
            iterations: 1000,
            schedule: StepSchedule::Constant(S::of(0.1)),
            lo: vec![lo; d],
            hi: vec![hi; d],
            target,
            scale,
            beta: S::zero(),
            sigma: S::zero(),
            epsilon: S::zero(),
            seed: 0,
            repeats: 32,
            x0: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("sandbox dimension must be positive".into()));
        }
        if self.hi.len() != d || self.target.len() != d || self.scale.len() != d * d {
            return Err(Error::Config("sandbox box, target and scale dimensions disagree".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != d {
                return Err(Error::Config("sandbox start point has the wrong dimension".into()));
            }
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("sandbox box is empty".into()));
        }
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma), ("epsilon", self.epsilon)] {
            if !(v >= S::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("sandbox {name} must be finite and non-negative")));
            }
        }
        let step_ok = match self.schedule {
            StepSchedule::Constant(e) | StepSchedule::InvSqrt(e) => e > S::zero() && e.is_finite(),
        };
        if !step_ok {
            return Err(Error::Config("sandbox step size must be positive".into()));
        }
        if self.iterations == 0 || self.repeats == 0 {
            return Err(Error::Config("sandbox iterations and repeats must be positive".into()));
        }
        if self.target.iter().chain(&self.scale).chain(&self.lo).chain(&self.hi).any(|v| !v.is_finite()) {
            return Err(Error::Config("sandbox problem has non-finite entries".into()));
        }
        let a = DMatrix::from_row_slice(d, d, &self.scale.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        let asym = (&a - a.transpose()).abs().max();
        let norm = a.abs().max().max(1.0);
        if asym > 1e-9 * norm {
            return Err(Error::Config("sandbox scale matrix is not symmetric".into()));
        }
        let min_eig = a.symmetric_eigenvalues().min();
        if min_eig < -1e-9 * norm {
            return Err(Error::Config("sandbox scale matrix is not positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn loss(&self, x: &[S]) -> S {
        let d = self.dim();
        let r: Vec<S> = x.iter().zip(&self.target).map(|(a, b)| *a - *b).collect();
        let mut s = S::zero();
        for i in 0..d {
            for j in 0..d {
                s = s + r[i] * self.scale[i * d + j] * r[j];
            }
        }
        S::of(0.5) * s
    }

    pub fn gradient(&self, x: &[S]) -> Vec<S> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.scale[i * d + j] * (x[j] - self.target[j])).sum())
            .collect()
    }

    /// Upper bound on the largest eigenvalue (max absolute row sum).
    pub fn smoothness(&self) -> S {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.scale[i * d + j].abs()).sum::<S>())
            .fold(S::zero(), S::max)
    }

    fn is_identity(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| self.scale[i * d + j] == if i == j { S::one() } else { S::zero() }))
    }

    fn clip(&self, x: &mut [S]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.max(*l).min(*h);
        }
    }

    fn start(&self) -> Vec<S> {
        let mut x = self
            .x0
            .clone()
            .unwrap_or_else(|| self.lo.iter().zip(&self.hi).map(|(l, h)| (*l + *h) * S::of(0.5)).collect());
        self.clip(&mut x);
        x
    }
}

/// Constrained minimiser of the loss. For the identity scale this is the
/// clipped target; otherwise exact projected gradient with step `1/L` run
/// until successive iterates differ by at most 1e-12 (relative to the box).
pub fn oracle_optimum<S: Scalar>(cfg: &MdConfig<S>) -> Vec<S> {
    let mut x = cfg.target.clone();
    cfg.clip(&mut x);
    if cfg.is_identity() {
        return x;
    }
    let l = cfg.smoothness();
    if l == S::zero() {
        return cfg.start();
    }
    let eta = S::one() / l;
    let tol = S::of(1e-12).max(S::epsilon() * S::of(8.0));
    for _ in 0..10_000_000 {
        let g = cfg.gradient(&x);
        let mut y: Vec<S> = x.iter().zip(&g).map(|(x, g)| *x - eta * *g).collect();
        cfg.clip(&mut y);
        let step = y.iter().zip(&x).map(|(a, b)| (*a - *b).abs()).fold(S::zero(), S::max);
        x = y;
        if step <= tol {
            break;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace<S> {
    pub optimum: Vec<S>,
    pub optimal_loss: S,
    /// Mean and standard error over repeats of `J(x_t)`, `t = 1..=T`.
    pub loss_mean: Vec<S>,
    pub loss_se: Vec<S>,
    /// Mean and standard error of `(1/t) sum_{s<=t} (J(x_s) - J(x°))`.
    pub regret_mean: Vec<S>,
    pub regret_se: Vec<S>,
    /// Per-repeat loss series.
    pub per_repeat: Vec<Vec<S>>,
}

impl<S: Scalar> RegretTrace<S> {
    pub fn final_regret(&self) -> (S, S) {
        (*self.regret_mean.last().unwrap(), *self.regret_se.last().unwrap())
    }

    pub fn final_gap(&self) -> S {
        *self.loss_mean.last().unwrap() - self.optimal_loss
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=1\niteration,loss_mean,loss_se,avg_regret_mean,avg_regret_se\n");
        for t in 0..self.loss_mean.len() {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                t + 1,
                self.loss_mean[t],
                self.loss_se[t],
                self.regret_mean[t],
                self.regret_se[t]
            );
        }
        s
    }

    /// Least-squares slope of `log(avg regret)` against `log t` over
    /// `t in [from, to]`.
    pub fn loglog_slope(&self, from: usize, to: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = (from.max(1)..=to.min(self.regret_mean.len()))
            .filter_map(|t| {
                let r = self.regret_mean[t - 1].as_f64();
                (r > 0.0).then(|| ((t as f64).ln(), r.ln()))
            })
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(sxy / sxx)
    }
}

fn gaussian<S: Scalar, R: Rng>(rng: &mut R, d: usize) -> Vec<S> {
    (0..d).map(|_| S::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Uniform random direction scaled to length `r`.
fn on_sphere<S: Scalar, R: Rng>(rng: &mut R, d: usize, r: S) -> Vec<S> {
    loop {
        let v = gaussian::<S, R>(rng, d);
        let n = v.iter().map(|x| *x * *x).sum::<S>().sqrt();
        if n > S::zero() {
            return v.into_iter().map(|x| x / n * r).collect();
        }
    }
}

fn run_one<S: Scalar>(cfg: &MdConfig<S>, repeat: usize) -> Vec<S> {
    let d = cfg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(repeat as u64);
    let bias = if cfg.beta > S::zero() {
        on_sphere(&mut rng, d, cfg.beta)
    } else {
        vec![S::zero(); d]
    };
    let mut x = cfg.start();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        losses.push(cfg.loss(&x));
        let eta = cfg.schedule.eta(t);
        let g = cfg.gradient(&x);
        let noise = if cfg.sigma > S::zero() {
            gaussian(&mut rng, d)
        } else {
            vec![S::zero(); d]
        };
        for i in 0..d {
            x[i] = x[i] - eta * (g[i] + bias[i] + cfg.sigma * noise[i]);
        }
        cfg.clip(&mut x);
        if cfg.epsilon > S::zero() {
            let p = on_sphere(&mut rng, d, cfg.epsilon);
            for i in 0..d {
                x[i] = x[i] + p[i];
            }
            cfg.clip(&mut x);
        }
    }
    losses
}

fn mean_se<S: Scalar>(xs: impl Iterator<Item = S> + Clone) -> (S, S) {
    let n = xs.clone().count();
    let nf = S::of(n as f64);
    let mean = xs.clone().sum::<S>() / nf;
    if n < 2 {
        return (mean, S::zero());
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<S>() / S::of((n - 1) as f64);
    (mean, (var / nf).sqrt())
}

/// Runs `cfg.repeats` independent repeats (in parallel, merged by repeat
/// index) and summarises them.
pub fn run_approx_pgd<S: Scalar>(cfg: &MdConfig<S>) -> Result<RegretTrace<S>> {
    cfg.validate()?;
    let optimum = oracle_optimum(cfg);
    let optimal_loss = cfg.loss(&optimum);
    let per_repeat: Vec<Vec<S>> = (0..cfg.repeats).into_par_iter().map(|r| run_one(cfg, r)).collect();
    let avg: Vec<Vec<S>> = per_repeat
        .iter()
        .map(|ls| {
            let mut acc = S::zero();
            ls.iter()
                .enumerate()
                .map(|(i, l)| {
                    acc = acc + (*l - optimal_loss);
                    acc / S::of((i + 1) as f64)
                })
                .collect()
        })
        .collect();
    let t_max = cfg.iterations;
    let mut trace = RegretTrace {
        optimum,
        optimal_loss,
        loss_mean: Vec::with_capacity(t_max),
        loss_se: Vec::with_capacity(t_max),
        regret_mean: Vec::with_capacity(t_max),
        regret_se: Vec::with_capacity(t_max),
        per_repeat: Vec::new(),
    };
    for t in 0..t_max {
        let (m, s) = mean_se(per_repeat.iter().map(|r| r[t]));
        trace.loss_mean.push(m);
        trace.loss_se.push(s);
        let (m, s) = mean_se(avg.iter().map(|r| r[t]));
        trace.regret_mean.push(m);
        trace.regret_se.push(s);
    }
    trace.per_repeat = per_repeat;
    Ok(trace)
}

/// One grid point of a sweep: `(beta, sigma, epsilon)`.
pub type SweepPoint<S> = (S, S, S);

/// Runs `base` at each grid point, writing `point_NNN.csv` per point and a
/// `manifest.csv` summarising the final average regret.
pub fn run_sweep<S: Scalar>(base: &MdConfig<S>, grid: &[SweepPoint<S>], dir: &Path) -> Result<Vec<RegretTrace<S>>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# schema=1\npoint,file,beta,sigma,epsilon,final_avg_regret,final_avg_regret_se\n");
    let mut out = Vec::with_capacity(grid.len());
    for (i, &(beta, sigma, epsilon)) in grid.iter().enumerate() {
        let cfg = MdConfig {
            beta,
            sigma,
            epsilon,
            ..base.clone()
        };
        let trace = run_approx_pgd(&cfg)?;
        let file = format!("point_{i:03}.csv");
        let path = dir.join(&file);
        fs::write(&path, trace.to_csv()).map_err(|e| Error::io(&path, e))?;
        let (m, se) = trace.final_regret();
        let _ = writeln!(manifest, "{i},{file},{beta:?},{sigma:?},{epsilon:?},{m:?},{se:?}");
        out.push(trace);
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_target_is_optimum() {
        let cfg = MdConfig::identity(2, -1.0, 1.0, vec![3.0, 0.0]);
        assert_eq!(oracle_optimum(&cfg), vec![1.0, 0.0]);
        let cfg = MdConfig::identity(2, -1.0, 1.0, vec![0.3, -0.2]);
        assert_eq!(oracle_optimum(&cfg), vec![0.3, -0.2]);
    }

    #[test]
    fn exact_descent_converges() {
        let mut cfg = MdConfig::identity(3, -1.0, 1.0, vec![2.0, 0.1, -0.4]);
        cfg.iterations = 200;
        cfg.repeats = 2;
        let tr = run_approx_pgd(&cfg).unwrap();
        assert!(tr.final_gap() < 1e-12);
        assert_eq!(tr.loss_se.last(), Some(&0.0));
    }

    #[test]
    fn iterates_stay_feasible() {
        let mut cfg = MdConfig::identity(2, -0.5, 0.5, vec![2.0, -3.0]);
        cfg.iterations = 500;
        cfg.sigma = 1.0;
        cfg.epsilon = 0.3;
        cfg.beta = 0.2;
        cfg.repeats = 4;
        let tr = run_approx_pgd(&cfg).unwrap();
        // Every loss is at most the worst corner's loss.
        let worst = cfg.loss(&[-0.5, 0.5]);
        assert!(tr.per_repeat.iter().flatten().all(|l| *l <= worst + 1e-12));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = MdConfig::identity(2, -1.0, 1.0, vec![0.0, 0.0]);
        cfg.sigma = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = MdConfig::identity(2, 1.0, -1.0, vec![0.0, 0.0]);
        assert!(cfg.validate().is_err());
        cfg.lo = vec![-1.0; 2];
        cfg.hi = vec![1.0; 2];
        cfg.scale = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn works_in_f32() {
        let mut cfg = MdConfig::<f32>::identity(2, -1.0, 1.0, vec![0.5, 2.0]);
        cfg.repeats = 1;
        let tr = run_approx_pgd(&cfg).unwrap();
        assert_eq!(tr.optimum, vec![0.5, 1.0]);
        assert!(tr.final_gap() < 1e-6);
    }
}
