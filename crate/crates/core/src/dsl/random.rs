//! Random program generator, used for baselines and property checks.

use rand::Rng;

use crate::dsl::ast::{Expr, Leaf, Pid, ProgramAst, TreeNode};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RandomProgramConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_depth: usize,
    pub allow_if: bool,
    pub allow_tree: bool,
    /// Magnitude bound for constants, weights and gains.
    pub scale: f64,
}

impl RandomProgramConfig {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        RandomProgramConfig {
            obs_dim,
            act_dim,
            max_depth: 3,
            allow_if: true,
            allow_tree: true,
            scale: 2.0,
        }
    }

    /// Only nodes that keep the output continuous in the observation.
    pub fn if_free(mut self) -> Self {
        self.allow_if = false;
        self.allow_tree = false;
        self
    }
}

pub fn random_program<S: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &RandomProgramConfig) -> ProgramAst<S> {
    ProgramAst::new((0..cfg.act_dim).map(|_| random_expr(rng, cfg, cfg.max_depth)).collect())
}

fn num<S: Scalar, R: Rng + ?Sized>(rng: &mut R, scale: f64) -> S {
    S::of(rng.random_range(-scale..scale))
}

fn weights<S: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &RandomProgramConfig) -> Vec<S> {
    (0..cfg.obs_dim).map(|_| num(rng, cfg.scale)).collect()
}

pub fn random_expr<S: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &RandomProgramConfig, depth: usize) -> Expr<S> {
    let leaf_kinds = 4;
    let inner_kinds = if depth == 0 { 0 } else { 4 };
    let k = rng.random_range(0..leaf_kinds + inner_kinds);
    let feature = |rng: &mut R| rng.random_range(0..cfg.obs_dim);
    match k {
        0 => Expr::Const(num(rng, cfg.scale)),
        1 => Expr::Feature(feature(rng)),
        2 => Expr::Affine {
            weights: weights(rng, cfg),
            bias: num(rng, cfg.scale),
        },
        3 => Expr::Pid(Pid {
            feature: feature(rng),
            setpoint: num(rng, 1.0),
            kp: num(rng, cfg.scale),
            ki: num(rng, cfg.scale),
            kd: num(rng, 0.1 * cfg.scale),
        }),
        4 => {
            let a: f64 = rng.random_range(-cfg.scale..cfg.scale);
            let b = a + rng.random_range(0.01..cfg.scale);
            Expr::Clip {
                child: Box::new(random_expr(rng, cfg, depth - 1)),
                lo: S::of(a),
                hi: S::of(b),
            }
        }
        5 => {
            let n = rng.random_range(1..4);
            Expr::Sum((0..n).map(|_| random_expr(rng, cfg, depth - 1)).collect())
        }
        6 if cfg.allow_if => Expr::If {
            feature: feature(rng),
            threshold: num(rng, 1.0),
            then: Box::new(random_expr(rng, cfg, depth - 1)),
            otherwise: Box::new(random_expr(rng, cfg, depth - 1)),
        },
        7 if cfg.allow_tree => Expr::Tree(random_tree(rng, cfg, depth)),
        _ => Expr::Affine {
            weights: weights(rng, cfg),
            bias: num(rng, cfg.scale),
        },
    }
}

fn random_tree<S: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &RandomProgramConfig, depth: usize) -> TreeNode<S> {
    if depth == 0 || rng.random_bool(0.3) {
        return if rng.random_bool(0.5) {
            TreeNode::Leaf(Leaf::Const(num(rng, cfg.scale)))
        } else {
            TreeNode::Leaf(Leaf::Affine {
                weights: weights(rng, cfg),
                bias: num(rng, cfg.scale),
            })
        };
    }
    TreeNode::Split {
        feature: rng.random_range(0..cfg.obs_dim),
        threshold: num(rng, 1.0),
        left: Box::new(random_tree(rng, cfg, depth - 1)),
        right: Box::new(random_tree(rng, cfg, depth - 1)),
    }
}
