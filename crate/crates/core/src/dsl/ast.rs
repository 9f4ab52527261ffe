use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// PID term on one observation feature, error `setpoint - obs[feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pid<S> {
    pub feature: usize,
    pub setpoint: S,
    pub kp: S,
    pub ki: S,
    pub kd: S,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Leaf<S> {
    Const(S),
    Affine { weights: Vec<S>, bias: S },
}

/// Regression tree with axis-aligned splits; `obs[feature] < threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode<S> {
    Leaf(Leaf<S>),
    Split {
        feature: usize,
        threshold: S,
        left: Box<TreeNode<S>>,
        right: Box<TreeNode<S>>,
    },
}

impl<S> TreeNode<S> {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr<S> {
    Const(S),
    Feature(usize),
    Affine {
        weights: Vec<S>,
        bias: S,
    },
    Pid(Pid<S>),
    Clip {
        child: Box<Expr<S>>,
        lo: S,
        hi: S,
    },
    /// `obs[feature] < threshold` selects `then`, otherwise `otherwise`.
    If {
        feature: usize,
        threshold: S,
        then: Box<Expr<S>>,
        otherwise: Box<Expr<S>>,
    },
    Sum(Vec<Expr<S>>),
    Tree(TreeNode<S>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Const,
    Feature,
    Affine,
    Pid,
    Clip,
    If,
    Sum,
    Tree,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::Const,
        NodeKind::Feature,
        NodeKind::Affine,
        NodeKind::Pid,
        NodeKind::Clip,
        NodeKind::If,
        NodeKind::Sum,
        NodeKind::Tree,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            NodeKind::Const => "const",
            NodeKind::Feature => "feature",
            NodeKind::Affine => "affine",
            NodeKind::Pid => "pid",
            NodeKind::Clip => "clip",
            NodeKind::If => "if",
            NodeKind::Sum => "sum",
            NodeKind::Tree => "tree",
        }
    }
}

impl<S> Expr<S> {
    pub fn kind(&self) -> NodeKind {
        match self {
            Expr::Const(_) => NodeKind::Const,
            Expr::Feature(_) => NodeKind::Feature,
            Expr::Affine { .. } => NodeKind::Affine,
            Expr::Pid(_) => NodeKind::Pid,
            Expr::Clip { .. } => NodeKind::Clip,
            Expr::If { .. } => NodeKind::If,
            Expr::Sum(_) => NodeKind::Sum,
            Expr::Tree(_) => NodeKind::Tree,
        }
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr<S>)) {
        f(self);
        match self {
            Expr::Clip { child, .. } => child.visit(f),
            Expr::If { then, otherwise, .. } => {
                then.visit(f);
                otherwise.visit(f);
            }
            Expr::Sum(xs) => xs.iter().for_each(|x| x.visit(f)),
            _ => {}
        }
    }
}

/// A programmatic policy: one expression per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramAst<S> {
    pub outputs: Vec<Expr<S>>,
}

impl<S: Scalar> ProgramAst<S> {
    pub fn new(outputs: Vec<Expr<S>>) -> Self {
        ProgramAst { outputs }
    }

    /// Constant program with the given value in each action dimension.
    pub fn constant(values: &[S]) -> Self {
        ProgramAst::new(values.iter().map(|&v| Expr::Const(v)).collect())
    }

    pub fn act_dim(&self) -> usize {
        self.outputs.len()
    }

    /// All nodes, pre-order, outputs in order.
    pub fn nodes(&self) -> Vec<&Expr<S>> {
        let mut out = Vec::new();
        for e in &self.outputs {
            e.visit(&mut |n| out.push(n));
        }
        out
    }

    /// PID nodes in slot order (pre-order over outputs).
    pub fn pid_nodes(&self) -> Vec<&Pid<S>> {
        self.nodes()
            .into_iter()
            .filter_map(|n| match n {
                Expr::Pid(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    pub fn pid_count(&self) -> usize {
        self.pid_nodes().len()
    }

    pub fn has_conditionals(&self) -> bool {
        self.nodes().iter().any(|n| match n {
            Expr::If { .. } => true,
            Expr::Tree(t) => matches!(t, TreeNode::Split { .. }),
            _ => false,
        })
    }

    /// Largest feature index referenced, if any.
    pub fn max_feature(&self) -> Option<usize> {
        let mut max: Option<usize> = None;
        let mut note = |i: usize| max = Some(max.map_or(i, |m| m.max(i)));
        for n in self.nodes() {
            match n {
                Expr::Feature(i) | Expr::If { feature: i, .. } => note(*i),
                Expr::Pid(p) => note(p.feature),
                Expr::Affine { weights, .. } if !weights.is_empty() => note(weights.len() - 1),
                Expr::Tree(t) => tree_max_feature(t, &mut note),
                _ => {}
            }
        }
        max
    }

    /// Structural checks that do not need the observation dimension.
    pub fn check(&self) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::Contract("program has no outputs".into()));
        }
        for n in self.nodes() {
            check_node(n)?;
        }
        Ok(())
    }

    /// Full validity against an observation and action dimension.
    pub fn validate(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        self.check()?;
        if self.act_dim() != act_dim {
            return Err(Error::Contract(format!(
                "program has {} outputs, environment has {act_dim} action dimensions",
                self.act_dim()
            )));
        }
        if let Some(m) = self.max_feature() {
            if m >= obs_dim {
                return Err(Error::Contract(format!(
                    "feature index {m} out of range for obs_dim {obs_dim}"
                )));
            }
        }
        for n in self.nodes() {
            let bad_affine = |w: &Vec<S>| w.len() != obs_dim;
            let mismatch = match n {
                Expr::Affine { weights, .. } => bad_affine(weights),
                Expr::Tree(t) => tree_any_affine(t, &bad_affine),
                _ => false,
            };
            if mismatch {
                return Err(Error::Contract(format!(
                    "affine weights must have length obs_dim = {obs_dim}"
                )));
            }
        }
        Ok(())
    }
}

fn tree_max_feature<S>(t: &TreeNode<S>, note: &mut impl FnMut(usize)) {
    match t {
        TreeNode::Leaf(Leaf::Affine { weights, .. }) if !weights.is_empty() => note(weights.len() - 1),
        TreeNode::Leaf(_) => {}
        TreeNode::Split {
            feature, left, right, ..
        } => {
            note(*feature);
            tree_max_feature(left, note);
            tree_max_feature(right, note);
        }
    }
}

fn tree_any_affine<S>(t: &TreeNode<S>, pred: &impl Fn(&Vec<S>) -> bool) -> bool {
    match t {
        TreeNode::Leaf(Leaf::Affine { weights, .. }) => pred(weights),
        TreeNode::Leaf(Leaf::Const(_)) => false,
        TreeNode::Split { left, right, .. } => tree_any_affine(left, pred) || tree_any_affine(right, pred),
    }
}

fn finite<S: Scalar>(x: S, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} must be finite")))
    }
}

fn check_tree<S: Scalar>(t: &TreeNode<S>) -> Result<()> {
    match t {
        TreeNode::Leaf(Leaf::Const(c)) => finite(*c, "leaf value"),
        TreeNode::Leaf(Leaf::Affine { weights, bias }) => {
            weights.iter().try_for_each(|w| finite(*w, "leaf weight"))?;
            finite(*bias, "leaf bias")
        }
        TreeNode::Split {
            threshold, left, right, ..
        } => {
            finite(*threshold, "split threshold")?;
            check_tree(left)?;
            check_tree(right)
        }
    }
}

fn check_node<S: Scalar>(n: &Expr<S>) -> Result<()> {
    match n {
        Expr::Const(c) => finite(*c, "constant"),
        Expr::Feature(_) => Ok(()),
        Expr::Affine { weights, bias } => {
            weights.iter().try_for_each(|w| finite(*w, "affine weight"))?;
            finite(*bias, "affine bias")
        }
        Expr::Pid(p) => {
            for (v, what) in [(p.setpoint, "setpoint"), (p.kp, "kp"), (p.ki, "ki"), (p.kd, "kd")] {
                finite(v, what)?;
            }
            Ok(())
        }
        Expr::Clip { lo, hi, .. } => {
            finite(*lo, "clip bound")?;
            finite(*hi, "clip bound")?;
            if lo < hi {
                Ok(())
            } else {
                Err(Error::Contract("clip requires lo < hi".into()))
            }
        }
        Expr::If { threshold, .. } => finite(*threshold, "if threshold"),
        Expr::Sum(xs) => {
            if xs.is_empty() {
                Err(Error::Contract("sum needs at least one term".into()))
            } else {
                Ok(())
            }
        }
        Expr::Tree(t) => check_tree(t),
    }
}
