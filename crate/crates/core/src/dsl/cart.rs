//! Greedy CART regression for the tree program class.

use nalgebra::DVector;

use crate::dsl::ast::{Expr, Leaf, ProgramAst, TreeNode};
use crate::dsl::{ClassConfig, ClassKind};
use crate::error::{Error, Result};
use crate::linalg::{design, lstsq};
use crate::project::ImitationDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    pub program: ProgramAst<f64>,
    /// Training sum of squared errors, summed over action dimensions.
    pub sse: f64,
}

/// Fits one regression tree per action dimension by greedy binary splits
/// minimising the summed squared error. Thresholds are midpoints between
/// consecutive distinct feature values; `x < threshold` goes left.
pub fn fit_tree(data: &ImitationDataset, cfg: &ClassConfig) -> Result<TreeFit> {
    if data.is_empty() {
        return Err(Error::Contract("cannot fit a tree to an empty dataset".into()));
    }
    if cfg.kind != ClassKind::Tree {
        return Err(Error::Contract("fit_tree requires a tree class".into()));
    }
    cfg.validate()?;
    let features = cfg.feature_list(data.obs_dim);
    let xs: Vec<&[f64]> = data.rows.iter().map(|r| r.obs.as_slice()).collect();
    let mut outputs = Vec::with_capacity(data.act_dim);
    let mut sse = 0.0;
    for j in 0..data.act_dim {
        let ys: Vec<f64> = data.rows.iter().map(|r| r.action[j]).collect();
        let fitter = Cart {
            xs: &xs,
            ys: &ys,
            features: &features,
            obs_dim: data.obs_dim,
            max_depth: cfg.max_depth,
            affine_leaves: cfg.affine_leaves,
        };
        let idx: Vec<usize> = (0..ys.len()).collect();
        let tree = fitter.grow(idx, 0);
        sse += xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let p = crate::dsl::eval_tree(&tree, x).expect("tree features lie inside obs");
                (p - y) * (p - y)
            })
            .sum::<f64>();
        outputs.push(Expr::Tree(tree));
    }
    Ok(TreeFit {
        program: ProgramAst::new(outputs),
        sse,
    })
}

struct Cart<'a> {
    xs: &'a [&'a [f64]],
    ys: &'a [f64],
    features: &'a [usize],
    obs_dim: usize,
    max_depth: usize,
    affine_leaves: bool,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn sse_of(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

impl Cart<'_> {
    fn grow(&self, idx: Vec<usize>, depth: usize) -> TreeNode<f64> {
        if depth < self.max_depth && idx.len() >= 2 {
            if let Some(split) = self.best_split(&idx) {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.xs[i][split.feature] < split.threshold);
                return TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: Box::new(self.grow(l, depth + 1)),
                    right: Box::new(self.grow(r, depth + 1)),
                };
            }
        }
        TreeNode::Leaf(self.leaf(&idx))
    }

    fn leaf(&self, idx: &[usize]) -> Leaf<f64> {
        let mean = idx.iter().map(|&i| self.ys[i]).sum::<f64>() / idx.len() as f64;
        if !self.affine_leaves {
            return Leaf::Const(mean);
        }
        let ncols = self.features.len() + 1;
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut r: Vec<f64> = self.features.iter().map(|&f| self.xs[i][f]).collect();
                r.push(1.0);
                r
            })
            .collect();
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.ys[i]));
        let sol = lstsq(&design(&rows, ncols), &b);
        let mut weights = vec![0.0; self.obs_dim];
        for (k, &f) in self.features.iter().enumerate() {
            weights[f] = sol[k];
        }
        Leaf::Affine {
            weights,
            bias: sol[ncols - 1],
        }
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.ys[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.ys[i] * self.ys[i]).sum();
        let parent = sse_of(total, total_sq, n);
        let min_gain = 1e-10 * (1.0 + parent);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for &f in self.features {
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]));
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let y = self.ys[order[k]];
                s += y;
                sq += y * y;
                let (lo, hi) = (self.xs[order[k]][f], self.xs[order[k + 1]][f]);
                if !(lo < hi) {
                    continue;
                }
                let nl = (k + 1) as f64;
                let child = sse_of(s, sq, nl) + sse_of(total - s, total_sq - sq, n - nl);
                let gain = parent - child;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    best = Some(Split {
                        feature: f,
                        threshold: if mid > lo { mid } else { hi },
                        gain,
                    });
                }
            }
        }
        best
    }
}
