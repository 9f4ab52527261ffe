//! Programmatic policy class: PID / affine / conditional expressions and
//! regression trees, with a parser, printer, interpreter and CART fitter.

mod ast;
mod cart;
mod eval;
mod parse;
mod print;
mod random;

pub use ast::{Expr, Leaf, NodeKind, Pid, ProgramAst, TreeNode};
pub use cart::{fit_tree, TreeFit};
pub use eval::{advance, eval_expr, eval_step, eval_tree, eval_with_context, PidContext, PidSlot, ProgState};
pub use parse::{load_program, parse, parse_for};
pub use print::{expr_to_string, pretty_print};
pub use random::{random_expr, random_program, RandomProgramConfig};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    PidDsl,
    Tree,
}

/// Declares the program class a projection targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassConfig {
    pub kind: ClassKind,
    pub allowed: BTreeSet<NodeKind>,
    pub max_depth: usize,
    /// Features a tree may split on (and affine leaves may use); `None` = all.
    pub features: Option<Vec<usize>>,
    pub affine_leaves: bool,
}

impl ClassConfig {
    pub fn pid_dsl() -> Self {
        ClassConfig {
            kind: ClassKind::PidDsl,
            allowed: NodeKind::ALL.into_iter().filter(|k| *k != NodeKind::Tree).collect(),
            max_depth: 0,
            features: None,
            affine_leaves: false,
        }
    }

    pub fn tree(max_depth: usize) -> Self {
        ClassConfig {
            kind: ClassKind::Tree,
            allowed: [NodeKind::Tree].into_iter().collect(),
            max_depth,
            features: None,
            affine_leaves: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.allowed.is_empty() {
            return Err(Error::Config("class admits no node kinds".into()));
        }
        if self.kind == ClassKind::Tree && !self.allowed.contains(&NodeKind::Tree) {
            return Err(Error::Config("tree class must allow tree nodes".into()));
        }
        if let Some(f) = &self.features {
            if f.is_empty() {
                return Err(Error::Config("feature whitelist is empty".into()));
            }
        }
        Ok(())
    }

    /// Class membership: node kinds, tree depth and split features.
    pub fn admits<S: Scalar>(&self, prog: &ProgramAst<S>, obs_dim: usize, act_dim: usize) -> Result<()> {
        prog.validate(obs_dim, act_dim)?;
        for n in prog.nodes() {
            if !self.allowed.contains(&n.kind()) {
                return Err(Error::Contract(format!(
                    "node '{}' is not in the configured class",
                    n.kind().keyword()
                )));
            }
            if let Expr::Tree(t) = n {
                if t.depth() > self.max_depth {
                    return Err(Error::Contract(format!(
                        "tree depth {} exceeds maximum {}",
                        t.depth(),
                        self.max_depth
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn feature_list(&self, obs_dim: usize) -> Vec<usize> {
        match &self.features {
            Some(f) => f.iter().copied().filter(|&i| i < obs_dim).collect(),
            None => (0..obs_dim).collect(),
        }
    }
}

#[cfg(test)]
mod tests;
