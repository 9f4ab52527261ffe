use crate::dsl::ast::{Expr, Leaf, ProgramAst, TreeNode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Accumulator for one PID node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidSlot<S> {
    /// Sum of `error * dt` over past steps.
    pub integral: S,
    /// Error at the previous step; `None` before the first step.
    pub prev_error: Option<S>,
}

/// Per-episode interpreter state: one slot per PID node in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgState<S> {
    pub slots: Vec<PidSlot<S>>,
}

impl<S: Scalar> ProgState<S> {
    /// Zeroed state for the start of an episode.
    pub fn new(prog: &ProgramAst<S>) -> Self {
        Self::with_slots(prog.pid_count())
    }

    pub fn with_slots(n: usize) -> Self {
        ProgState {
            slots: vec![
                PidSlot {
                    integral: S::zero(),
                    prev_error: None,
                };
                n
            ],
        }
    }

    pub fn empty() -> Self {
        ProgState { slots: Vec::new() }
    }
}

/// Inputs to a PID term at one step: `(e, I', D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidContext<S> {
    pub error: S,
    /// Integral including the current step, `I + e dt`.
    pub integral: S,
    /// `(e - e_prev) / dt`, zero on the first step.
    pub derivative: S,
}

/// Advances every PID accumulator by one step and returns the per-slot
/// contexts together with the successor state.
pub fn advance<S: Scalar>(
    prog: &ProgramAst<S>,
    state: &ProgState<S>,
    obs: &[S],
    dt: S,
) -> Result<(Vec<PidContext<S>>, ProgState<S>)> {
    let pids = prog.pid_nodes();
    if state.slots.len() != pids.len() {
        return Err(Error::Contract(format!(
            "program state has {} PID slots, program has {}",
            state.slots.len(),
            pids.len()
        )));
    }
    let mut ctx = Vec::with_capacity(pids.len());
    let mut next = Vec::with_capacity(pids.len());
    for (p, slot) in pids.iter().zip(&state.slots) {
        let x = *obs.get(p.feature).ok_or_else(|| {
            Error::Contract(format!("PID feature {} outside observation of length {}", p.feature, obs.len()))
        })?;
        let e = p.setpoint - x;
        let integral = slot.integral + e * dt;
        let derivative = (e - slot.prev_error.unwrap_or(e)) / dt;
        ctx.push(PidContext {
            error: e,
            integral,
            derivative,
        });
        next.push(PidSlot {
            integral,
            prev_error: Some(e),
        });
    }
    Ok((ctx, ProgState { slots: next }))
}

/// One interpreter step: `(action, successor state)`.
pub fn eval_step<S: Scalar>(
    prog: &ProgramAst<S>,
    state: &ProgState<S>,
    obs: &[S],
    dt: S,
) -> Result<(Vec<S>, ProgState<S>)> {
    if !(dt > S::zero()) {
        return Err(Error::Contract("dt must be positive".into()));
    }
    if obs.iter().any(|x| x.is_nan()) {
        return Err(Error::Contract("NaN in observation".into()));
    }
    let (ctx, next) = advance(prog, state, obs, dt)?;
    let out = eval_with_context(prog, obs, &ctx)?;
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("program output is not finite".into()));
    }
    Ok((out, next))
}

/// Evaluates all outputs given precomputed PID contexts (slot order).
pub fn eval_with_context<S: Scalar>(prog: &ProgramAst<S>, obs: &[S], ctx: &[PidContext<S>]) -> Result<Vec<S>> {
    let mut slot = 0;
    let mut out = Vec::with_capacity(prog.outputs.len());
    for e in &prog.outputs {
        out.push(eval_expr(e, obs, ctx, &mut slot)?);
    }
    Ok(out)
}

fn feature<S: Scalar>(obs: &[S], i: usize) -> Result<S> {
    obs.get(i)
        .copied()
        .ok_or_else(|| Error::Contract(format!("feature {i} outside observation of length {}", obs.len())))
}

fn dot<S: Scalar>(w: &[S], obs: &[S]) -> Result<S> {
    if w.len() > obs.len() {
        return Err(Error::Contract(format!(
            "affine has {} weights, observation has {} entries",
            w.len(),
            obs.len()
        )));
    }
    Ok(w.iter().zip(obs).fold(S::zero(), |acc, (&a, &b)| acc + a * b))
}

/// Evaluates one expression. `slot` tracks the pre-order PID index and is
/// advanced past every PID node in the subtree, taken branch or not.
pub fn eval_expr<S: Scalar>(e: &Expr<S>, obs: &[S], ctx: &[PidContext<S>], slot: &mut usize) -> Result<S> {
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Feature(i) => feature(obs, *i)?,
        Expr::Affine { weights, bias } => dot(weights, obs)? + *bias,
        Expr::Pid(p) => {
            let c = ctx
                .get(*slot)
                .ok_or_else(|| Error::Contract("missing PID context".into()))?;
            *slot += 1;
            p.kp * c.error + p.ki * c.integral + p.kd * c.derivative
        }
        Expr::Clip { child, lo, hi } => {
            let v = eval_expr(child, obs, ctx, slot)?;
            v.max(*lo).min(*hi)
        }
        Expr::If {
            feature: f,
            threshold,
            then,
            otherwise,
        } => {
            let go_then = feature(obs, *f)? < *threshold;
            let a = eval_expr(then, obs, ctx, slot)?;
            let b = eval_expr(otherwise, obs, ctx, slot)?;
            if go_then {
                a
            } else {
                b
            }
        }
        Expr::Sum(xs) => {
            let mut acc = S::zero();
            for x in xs {
                acc = acc + eval_expr(x, obs, ctx, slot)?;
            }
            acc
        }
        Expr::Tree(t) => eval_tree(t, obs)?,
    })
}

pub fn eval_tree<S: Scalar>(t: &TreeNode<S>, obs: &[S]) -> Result<S> {
    let mut node = t;
    loop {
        match node {
            TreeNode::Leaf(Leaf::Const(c)) => return Ok(*c),
            TreeNode::Leaf(Leaf::Affine { weights, bias }) => return Ok(dot(weights, obs)? + *bias),
            TreeNode::Split {
                feature: f,
                threshold,
                left,
                right,
            } => {
                node = if feature(obs, *f)? < *threshold { left } else { right };
            }
        }
    }
}
