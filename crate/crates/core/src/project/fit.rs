//! Least-squares projection onto the PID/affine program class.
//!
//! A template's free parameters are the PID gains and the affine weights and
//! bias. Constants, features, setpoints, `if` thresholds and clip bounds are
//! fixed. A subtree below a non-root `clip` (and any tree) is frozen at its
//! current parameters and contributes a fixed offset. Given a row's
//! observation and PID context, the output is therefore affine in the free
//! parameters, and fitting reduces to ordinary least squares.

use nalgebra::{DMatrix, DVector};

use crate::dsl::{eval_expr, eval_with_context, Expr, PidContext};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::project::ImitationDataset;
use crate::Program;

#[derive(Debug, Clone, PartialEq)]
pub struct PidFit {
    pub program: Program,
    /// Mean squared error over all rows and action dimensions.
    pub mse: f64,
}

/// Saturation bounds on the labels, per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Censor {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

fn count_params(e: &Expr<f64>) -> usize {
    match e {
        Expr::Affine { weights, .. } => weights.len() + 1,
        Expr::Pid(_) => 3,
        Expr::Sum(xs) => xs.iter().map(count_params).sum(),
        Expr::If { then, otherwise, .. } => count_params(then) + count_params(otherwise),
        _ => 0,
    }
}

fn count_pids(e: &Expr<f64>) -> usize {
    let mut n = 0;
    e.visit(&mut |x| {
        if matches!(x, Expr::Pid(_)) {
            n += 1
        }
    });
    n
}

/// Writes this row's coefficients for `e`'s free parameters into `coef`
/// (in parameter order) and returns the fixed offset.
fn linearize(
    e: &Expr<f64>,
    obs: &[f64],
    ctx: &[PidContext<f64>],
    slot: &mut usize,
    coef: &mut [f64],
    active: bool,
) -> Result<f64> {
    Ok(match e {
        Expr::Const(c) => {
            if active {
                *c
            } else {
                0.0
            }
        }
        Expr::Feature(i) => {
            let v = *obs
                .get(*i)
                .ok_or_else(|| Error::Contract(format!("feature {i} outside observation")))?;
            if active {
                v
            } else {
                0.0
            }
        }
        Expr::Affine { weights, .. } => {
            if weights.len() > obs.len() {
                return Err(Error::Contract("affine weights longer than observation".into()));
            }
            if active {
                coef[..weights.len()].copy_from_slice(&obs[..weights.len()]);
                coef[weights.len()] = 1.0;
            }
            0.0
        }
        Expr::Pid(_) => {
            let c = ctx
                .get(*slot)
                .ok_or_else(|| Error::Contract("missing PID context".into()))?;
            *slot += 1;
            if active {
                coef[0] = c.error;
                coef[1] = c.integral;
                coef[2] = c.derivative;
            }
            0.0
        }
        Expr::Sum(xs) => {
            let mut off = 0.0;
            let mut at = 0;
            for x in xs {
                let k = count_params(x);
                off += linearize(x, obs, ctx, slot, &mut coef[at..at + k], active)?;
                at += k;
            }
            off
        }
        Expr::If {
            feature,
            threshold,
            then,
            otherwise,
        } => {
            let x = *obs
                .get(*feature)
                .ok_or_else(|| Error::Contract(format!("feature {feature} outside observation")))?;
            let go_then = x < *threshold;
            let k = count_params(then);
            let (a, b) = coef.split_at_mut(k);
            linearize(then, obs, ctx, slot, a, active && go_then)? + linearize(otherwise, obs, ctx, slot, b, active && !go_then)?
        }
        Expr::Clip { .. } | Expr::Tree(_) => {
            if active {
                eval_expr(e, obs, ctx, slot)?
            } else {
                *slot += count_pids(e);
                0.0
            }
        }
    })
}

fn assign(e: &mut Expr<f64>, theta: &[f64]) -> usize {
    match e {
        Expr::Affine { weights, bias } => {
            let n = weights.len();
            weights.copy_from_slice(&theta[..n]);
            *bias = theta[n];
            n + 1
        }
        Expr::Pid(p) => {
            p.kp = theta[0];
            p.ki = theta[1];
            p.kd = theta[2];
            3
        }
        Expr::Sum(xs) => {
            let mut at = 0;
            for x in xs {
                at += assign(x, &theta[at..]);
            }
            at
        }
        Expr::If { then, otherwise, .. } => {
            let k = assign(then, theta);
            k + assign(otherwise, &theta[k..])
        }
        _ => 0,
    }
}

/// Strips root-level clips, returning the inner expression and the
/// intersection of their bounds.
fn unwrap_root(e: &Expr<f64>) -> (&Expr<f64>, f64, f64) {
    let (mut node, mut lo, mut hi) = (e, f64::NEG_INFINITY, f64::INFINITY);
    while let Expr::Clip { child, lo: l, hi: h } = node {
        lo = lo.max(*l);
        hi = hi.min(*h);
        node = child;
    }
    (node, lo, hi)
}

/// Ordinary least squares over the template's free parameters, all rows.
pub fn fit_pid(data: &ImitationDataset, template: &Program) -> Result<PidFit> {
    fit_pid_censored(data, template, None)
}

/// Least squares excluding, per action dimension, rows whose label sits on
/// a saturation bound (from `censor` or a root-level `clip`). Such labels
/// only say the unclipped output is at least as extreme.
pub fn fit_pid_censored(data: &ImitationDataset, template: &Program, censor: Option<&Censor>) -> Result<PidFit> {
    if data.is_empty() {
        return Err(Error::Contract("cannot fit a program to an empty dataset".into()));
    }
    template.check()?;
    if template.act_dim() != data.act_dim {
        return Err(Error::Contract(format!(
            "template has {} outputs, dataset has {} action dimensions",
            template.act_dim(),
            data.act_dim
        )));
    }
    if template.pid_count() != data.n_slots {
        return Err(Error::Contract(format!(
            "template has {} PID nodes, dataset carries {} PID contexts",
            template.pid_count(),
            data.n_slots
        )));
    }
    let mut program = template.clone();
    let mut slot_base = 0;
    for (j, out) in template.outputs.iter().enumerate() {
        let (inner, mut lo, mut hi) = unwrap_root(out);
        if let Some(c) = censor {
            lo = lo.max(c.low[j]);
            hi = hi.min(c.high[j]);
        }
        let k = count_params(inner);
        let slots_here = count_pids(out);
        if k > 0 {
            let mut rows: Vec<f64> = Vec::new();
            let mut targets: Vec<f64> = Vec::new();
            let mut coef = vec![0.0; k];
            for r in &data.rows {
                let y = r.action[j];
                if (censor.is_some() || lo.is_finite() || hi.is_finite()) && (y <= lo || y >= hi) {
                    continue;
                }
                coef.iter_mut().for_each(|c| *c = 0.0);
                let mut slot = slot_base;
                let off = linearize(inner, &r.obs, &r.ctx, &mut slot, &mut coef, true)?;
                rows.extend_from_slice(&coef);
                targets.push(y - off);
            }
            let m = targets.len();
            let theta = if m == 0 {
                DVector::zeros(k)
            } else {
                lstsq(&DMatrix::from_row_slice(m, k, &rows), &DVector::from_vec(targets))
            };
            let (fitted, _, _) = unwrap_root_mut(&mut program.outputs[j]);
            assign(fitted, theta.as_slice());
        }
        slot_base += slots_here;
    }
    let mse = training_mse(&program, data, censor)?;
    Ok(PidFit { program, mse })
}

fn unwrap_root_mut(e: &mut Expr<f64>) -> (&mut Expr<f64>, (), ()) {
    match e {
        Expr::Clip { child, .. } => unwrap_root_mut(child),
        other => (other, (), ()),
    }
}

/// Mean squared imitation error of `program` on `data`; outputs are clipped
/// to `censor` bounds when given.
pub fn training_mse(program: &Program, data: &ImitationDataset, censor: Option<&Censor>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("empty dataset".into()));
    }
    let use_ctx = program.pid_count() == data.n_slots;
    if !use_ctx && program.pid_count() != 0 {
        return Err(Error::Contract("program PID slots do not match dataset contexts".into()));
    }
    let mut sum = 0.0;
    for r in &data.rows {
        let ctx: &[PidContext<f64>] = if use_ctx { &r.ctx } else { &[] };
        let out = eval_with_context(program, &r.obs, ctx)?;
        for (j, (u, y)) in out.iter().zip(&r.action).enumerate() {
            let u = match censor {
                Some(c) => u.clamp(c.low[j], c.high[j]),
                None => *u,
            };
            sum += (u - y) * (u - y);
        }
    }
    Ok(sum / (data.len() * data.act_dim) as f64)
}
