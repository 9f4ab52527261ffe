//! Interval bounds on program outputs and Lipschitz bounds on the
//! per-step feedback map, over a box of observations.
//!
//! Lipschitz bounds hold at a fixed accumulator state: they bound how the
//! action responds to the current observation, not the closed loop.

mod interval;

use std::fmt::Write as _;
use std::path::Path;

use crate::dsl::{Expr, Leaf, ProgramAst, TreeNode};
use crate::error::{Error, Result};
use crate::Scalar;

pub use interval::Interval;

/// Observation box plus bounds on the PID accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBox<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub dt: S,
    /// Bound on the per-step change of any observation; defaults to the
    /// box width when `None`.
    pub delta_bound: Option<S>,
    /// Bound on `|I + e dt|` for every PID slot.
    pub integral_bound: Option<S>,
}

impl<S: Scalar> ObsBox<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>, dt: S) -> Self {
        ObsBox {
            lo,
            hi,
            dt,
            delta_bound: None,
            integral_bound: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::Verify("box bounds have mismatched or zero length".into()));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l <= h) || !l.is_finite() || !h.is_finite() {
                return Err(Error::Verify(format!("box dimension {i} has invalid bounds [{l}, {h}]")));
            }
        }
        if !(self.dt > S::zero()) || !self.dt.is_finite() {
            return Err(Error::Verify("box dt must be positive".into()));
        }
        for (name, b) in [("delta", self.delta_bound), ("integral", self.integral_bound)] {
            if let Some(b) = b {
                if !(b >= S::zero()) || !b.is_finite() {
                    return Err(Error::Verify(format!("{name} bound must be finite and non-negative")));
                }
            }
        }
        Ok(())
    }

    /// Text format: one `lo hi` line per observation dimension, then
    /// optional `dt X`, `delta X` and `integral X` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut b = ObsBox::new(Vec::new(), Vec::new(), S::of(0.05));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |t: &str| {
                t.parse::<S>()
                    .map_err(|_| Error::parse(n + 1, 1, format!("expected a number, found '{t}'")))
            };
            match parts.as_slice() {
                ["dt", v] => b.dt = num(v)?,
                ["delta", v] => b.delta_bound = Some(num(v)?),
                ["integral", v] => b.integral_bound = Some(num(v)?),
                [lo, hi] => {
                    b.lo.push(num(lo)?);
                    b.hi.push(num(hi)?);
                }
                _ => return Err(Error::parse(n + 1, 1, format!("unrecognised box line '{line}'"))),
            }
        }
        b.validate()?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn range(&self, i: usize) -> Result<Interval<S>> {
        if i >= self.dim() {
            return Err(Error::Verify(format!("feature {i} outside the {}-dimensional box", self.dim())));
        }
        Ok(Interval::new(self.lo[i], self.hi[i]))
    }
}

/// A guard where the output may jump: `jump` bounds the branch gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate<S> {
    pub feature: usize,
    pub threshold: S,
    pub jump: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputReport<S> {
    pub range: Interval<S>,
    /// Per-coordinate bound on the partial derivatives.
    pub gradient_bound: Vec<S>,
    /// Euclidean norm of `gradient_bound`; valid across the box when
    /// `discontinuities` is empty, and within each guard region otherwise.
    pub lipschitz: S,
    pub discontinuities: Vec<Certificate<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport<S> {
    pub outputs: Vec<OutputReport<S>>,
}

impl<S: Scalar> VerifyReport<S> {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# Lipschitz bounds are for the per-step map at fixed accumulator state\n");
        for (j, o) in self.outputs.iter().enumerate() {
            let _ = writeln!(s, "output {j}: range [{}, {}]  L <= {}", o.range.lo, o.range.hi, o.lipschitz);
            for c in &o.discontinuities {
                let _ = writeln!(
                    s,
                    "  discontinuity at obs[{}] = {}: jump <= {}",
                    c.feature, c.threshold, c.jump
                );
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=1\noutput,lo,hi,lipschitz,n_discontinuities\n");
        for (j, o) in self.outputs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{j},{:?},{:?},{:?},{}",
                o.range.lo,
                o.range.hi,
                o.lipschitz,
                o.discontinuities.len()
            );
        }
        s
    }
}

/// Region of observations reachable at a node: the root box narrowed by
/// the guards taken on the way down.
#[derive(Clone)]
struct Region<'a, S> {
    root: &'a ObsBox<S>,
    lo: Vec<S>,
    hi: Vec<S>,
}

enum Side {
    Below,
    Above,
}

impl<'a, S: Scalar> Region<'a, S> {
    fn new(root: &'a ObsBox<S>) -> Self {
        Region {
            root,
            lo: root.lo.clone(),
            hi: root.hi.clone(),
        }
    }

    fn feature(&self, i: usize) -> Result<Interval<S>> {
        self.root.range(i)?;
        Ok(Interval::new(self.lo[i], self.hi[i]))
    }

    /// Which sides of `x_f < t` the region reaches.
    fn sides(&self, f: usize, t: S) -> Result<(bool, bool)> {
        let r = self.feature(f)?;
        Ok((r.lo < t, r.hi >= t))
    }

    fn narrow(&self, f: usize, t: S, side: Side) -> Self {
        let mut r = self.clone();
        match side {
            // An unreachable side collapses to an endpoint rather than an
            // inverted interval.
            Side::Below => r.hi[f] = r.hi[f].min(t).max(r.lo[f]),
            Side::Above => r.lo[f] = r.lo[f].max(t).min(r.hi[f]),
        }
        r
    }
}

fn affine_range<S: Scalar>(weights: &[S], bias: S, reg: &Region<S>) -> Result<Interval<S>> {
    let mut acc = Interval::point(bias);
    for (i, w) in weights.iter().enumerate() {
        if *w != S::zero() {
            acc = acc.add(reg.feature(i)?.scale(*w));
        }
    }
    Ok(acc)
}

fn range_expr<S: Scalar>(e: &Expr<S>, reg: &Region<S>) -> Result<Interval<S>> {
    Ok(match e {
        Expr::Const(c) => Interval::point(*c),
        Expr::Feature(i) => reg.feature(*i)?,
        Expr::Affine { weights, bias } => affine_range(weights, *bias, reg)?,
        Expr::Pid(p) => {
            let x = reg.feature(p.feature)?;
            let err = Interval::point(p.setpoint).sub(x);
            let mut out = err.scale(p.kp);
            if p.ki != S::zero() {
                let b = reg.root.integral_bound.ok_or_else(|| {
                    Error::Verify(format!(
                        "unbounded term: pid on obs[{}] has ki = {} but the box gives no integral bound",
                        p.feature, p.ki
                    ))
                })?;
                out = out.add(Interval::symmetric(b).scale(p.ki));
            }
            if p.kd != S::zero() {
                // The previous observation may lie anywhere in the root box.
                let width = reg.root.range(p.feature)?.width();
                let step = reg.root.delta_bound.map_or(width, |d| d.min(width));
                out = out.add(Interval::symmetric(step / reg.root.dt).scale(p.kd));
            }
            out
        }
        Expr::Clip { child, lo, hi } => range_expr(child, reg)?.clamp(*lo, *hi),
        Expr::If {
            feature,
            threshold,
            then,
            otherwise,
        } => {
            // Both branches are still evaluated, so their errors surface
            // even when a branch is unreachable.
            let (below, above) = reg.sides(*feature, *threshold)?;
            let a = range_expr(then, &reg.narrow(*feature, *threshold, Side::Below))?;
            let b = range_expr(otherwise, &reg.narrow(*feature, *threshold, Side::Above))?;
            match (below, above) {
                (true, false) => a,
                (false, true) => b,
                _ => a.hull(b),
            }
        }
        Expr::Sum(xs) => {
            let mut acc = Interval::point(S::zero());
            for x in xs {
                acc = acc.add(range_expr(x, reg)?);
            }
            acc
        }
        Expr::Tree(t) => range_tree(t, reg)?,
    })
}

fn range_tree<S: Scalar>(t: &TreeNode<S>, reg: &Region<S>) -> Result<Interval<S>> {
    match t {
        TreeNode::Leaf(Leaf::Const(c)) => Ok(Interval::point(*c)),
        TreeNode::Leaf(Leaf::Affine { weights, bias }) => affine_range(weights, *bias, reg),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let (below, above) = reg.sides(*feature, *threshold)?;
            let l = below
                .then(|| range_tree(left, &reg.narrow(*feature, *threshold, Side::Below)))
                .transpose()?;
            let r = above
                .then(|| range_tree(right, &reg.narrow(*feature, *threshold, Side::Above)))
                .transpose()?;
            Ok(match (l, r) {
                (Some(a), Some(b)) => a.hull(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("a non-empty region lies on some side"),
            })
        }
    }
}

/// Sound enclosure of each output over the box.
pub fn output_range<S: Scalar>(prog: &ProgramAst<S>, b: &ObsBox<S>) -> Result<Vec<Interval<S>>> {
    b.validate()?;
    let reg = Region::new(b);
    prog.outputs.iter().map(|e| range_expr(e, &reg)).collect()
}

/// Per-coordinate derivative bounds plus guard certificates.
struct Smooth<S> {
    grad: Vec<S>,
    certs: Vec<Certificate<S>>,
}

impl<S: Scalar> Smooth<S> {
    fn zero(d: usize) -> Self {
        Smooth {
            grad: vec![S::zero(); d],
            certs: Vec::new(),
        }
    }

    fn add(&mut self, o: Smooth<S>) {
        for (a, b) in self.grad.iter_mut().zip(o.grad) {
            *a = *a + b;
        }
        self.certs.extend(o.certs);
    }

    fn join(&mut self, o: Smooth<S>) {
        for (a, b) in self.grad.iter_mut().zip(o.grad) {
            *a = a.max(b);
        }
        self.certs.extend(o.certs);
    }
}

fn weights_smooth<S: Scalar>(weights: &[S], d: usize) -> Result<Smooth<S>> {
    if weights.len() > d {
        return Err(Error::Verify("affine weights longer than the box".into()));
    }
    let mut s = Smooth::zero(d);
    for (g, w) in s.grad.iter_mut().zip(weights) {
        *g = w.abs();
    }
    Ok(s)
}

fn smooth_expr<S: Scalar>(e: &Expr<S>, reg: &Region<S>) -> Result<Smooth<S>> {
    let d = reg.root.dim();
    Ok(match e {
        Expr::Const(_) => Smooth::zero(d),
        Expr::Feature(i) => {
            reg.feature(*i)?;
            let mut s = Smooth::zero(d);
            s.grad[*i] = S::one();
            s
        }
        Expr::Affine { weights, .. } => weights_smooth(weights, d)?,
        Expr::Pid(p) => {
            reg.feature(p.feature)?;
            // d/dx of kp e + ki (I + e dt) + kd (e - e_prev) / dt with e = sp - x.
            let mut s = Smooth::zero(d);
            s.grad[p.feature] = (p.kp + p.ki * reg.root.dt + p.kd / reg.root.dt).abs();
            s
        }
        Expr::Clip { child, .. } => smooth_expr(child, reg)?,
        Expr::Sum(xs) => {
            let mut acc = Smooth::zero(d);
            for x in xs {
                acc.add(smooth_expr(x, reg)?);
            }
            acc
        }
        Expr::If {
            feature,
            threshold,
            then,
            otherwise,
        } => {
            let (below, above) = reg.sides(*feature, *threshold)?;
            let lreg = reg.narrow(*feature, *threshold, Side::Below);
            let rreg = reg.narrow(*feature, *threshold, Side::Above);
            match (below, above) {
                (true, false) => smooth_expr(then, &lreg)?,
                (false, true) => smooth_expr(otherwise, &rreg)?,
                _ => {
                    let mut s = smooth_expr(then, &lreg)?;
                    s.join(smooth_expr(otherwise, &rreg)?);
                    let gap = range_expr(then, reg)?.sub(range_expr(otherwise, reg)?);
                    s.certs.push(Certificate {
                        feature: *feature,
                        threshold: *threshold,
                        jump: gap.magnitude(),
                    });
                    s
                }
            }
        }
        Expr::Tree(t) => smooth_tree(t, reg)?,
    })
}

fn smooth_tree<S: Scalar>(t: &TreeNode<S>, reg: &Region<S>) -> Result<Smooth<S>> {
    let d = reg.root.dim();
    match t {
        TreeNode::Leaf(Leaf::Const(_)) => Ok(Smooth::zero(d)),
        TreeNode::Leaf(Leaf::Affine { weights, .. }) => weights_smooth(weights, d),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let (below, above) = reg.sides(*feature, *threshold)?;
            let lreg = reg.narrow(*feature, *threshold, Side::Below);
            let rreg = reg.narrow(*feature, *threshold, Side::Above);
            match (below, above) {
                (true, false) => smooth_tree(left, &lreg),
                (false, true) => smooth_tree(right, &rreg),
                _ => {
                    let mut s = smooth_tree(left, &lreg)?;
                    s.join(smooth_tree(right, &rreg)?);
                    let gap = range_tree(left, &lreg)?.sub(range_tree(right, &rreg)?);
                    s.certs.push(Certificate {
                        feature: *feature,
                        threshold: *threshold,
                        jump: gap.magnitude(),
                    });
                    Ok(s)
                }
            }
        }
    }
}

/// Lipschitz bound per output and the guards where it does not apply.
pub fn lipschitz_bound<S: Scalar>(prog: &ProgramAst<S>, b: &ObsBox<S>) -> Result<Vec<(S, Vec<Certificate<S>>)>> {
    b.validate()?;
    let reg = Region::new(b);
    prog.outputs
        .iter()
        .map(|e| {
            let s = smooth_expr(e, &reg)?;
            let l = s.grad.iter().map(|g| *g * *g).sum::<S>().sqrt();
            Ok((l, s.certs))
        })
        .collect()
}

pub fn verify<S: Scalar>(prog: &ProgramAst<S>, b: &ObsBox<S>) -> Result<VerifyReport<S>> {
    prog.validate(b.dim(), prog.act_dim())?;
    let ranges = output_range(prog, b)?;
    let reg = Region::new(b);
    let outputs = prog
        .outputs
        .iter()
        .zip(ranges)
        .map(|(e, range)| {
            let s = smooth_expr(e, &reg)?;
            let lipschitz = s.grad.iter().map(|g| *g * *g).sum::<S>().sqrt();
            Ok(OutputReport {
                range,
                gradient_bound: s.grad,
                lipschitz,
                discontinuities: s.certs,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VerifyReport { outputs })
}
