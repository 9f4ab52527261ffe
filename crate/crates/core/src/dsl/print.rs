use std::fmt::Write;

use crate::dsl::ast::{Expr, Leaf, ProgramAst, TreeNode};
use crate::scalar::Scalar;

/// Renders a program as S-expression text, one line per action dimension.
///
/// Numbers use Rust's shortest round-trip formatting, so parsing the result
/// yields a structurally identical program.
pub fn pretty_print<S: Scalar>(prog: &ProgramAst<S>) -> String {
    let mut out = String::new();
    for e in &prog.outputs {
        write_expr(&mut out, e);
        out.push('\n');
    }
    out
}

pub fn expr_to_string<S: Scalar>(e: &Expr<S>) -> String {
    let mut out = String::new();
    write_expr(&mut out, e);
    out
}

fn num<S: Scalar>(out: &mut String, x: S) {
    write!(out, "{x:?}").unwrap();
}

fn weights<S: Scalar>(out: &mut String, w: &[S]) {
    out.push('(');
    for (i, x) in w.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        num(out, *x);
    }
    out.push(')');
}

fn write_expr<S: Scalar>(out: &mut String, e: &Expr<S>) {
    match e {
        Expr::Const(c) => {
            out.push_str("(const ");
            num(out, *c);
            out.push(')');
        }
        Expr::Feature(i) => write!(out, "(feature {i})").unwrap(),
        Expr::Affine { weights: w, bias } => {
            out.push_str("(affine ");
            weights(out, w);
            out.push(' ');
            num(out, *bias);
            out.push(')');
        }
        Expr::Pid(p) => {
            write!(out, "(pid {}", p.feature).unwrap();
            for v in [p.setpoint, p.kp, p.ki, p.kd] {
                out.push(' ');
                num(out, v);
            }
            out.push(')');
        }
        Expr::Clip { child, lo, hi } => {
            out.push_str("(clip ");
            write_expr(out, child);
            out.push(' ');
            num(out, *lo);
            out.push(' ');
            num(out, *hi);
            out.push(')');
        }
        Expr::If {
            feature,
            threshold,
            then,
            otherwise,
        } => {
            write!(out, "(if {feature} ").unwrap();
            num(out, *threshold);
            out.push(' ');
            write_expr(out, then);
            out.push(' ');
            write_expr(out, otherwise);
            out.push(')');
        }
        Expr::Sum(xs) => {
            out.push_str("(sum");
            for x in xs {
                out.push(' ');
                write_expr(out, x);
            }
            out.push(')');
        }
        Expr::Tree(t) => {
            out.push_str("(tree ");
            write_tree(out, t);
            out.push(')');
        }
    }
}

fn write_tree<S: Scalar>(out: &mut String, t: &TreeNode<S>) {
    match t {
        TreeNode::Leaf(Leaf::Const(c)) => {
            out.push_str("(leaf ");
            num(out, *c);
            out.push(')');
        }
        TreeNode::Leaf(Leaf::Affine { weights: w, bias }) => {
            out.push_str("(leaf ");
            weights(out, w);
            out.push(' ');
            num(out, *bias);
            out.push(')');
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            write!(out, "(split {feature} ").unwrap();
            num(out, *threshold);
            out.push(' ');
            write_tree(out, left);
            out.push(' ');
            write_tree(out, right);
            out.push(')');
        }
    }
}
