//! Programmatic reinforcement learning by imitation-projected policy search.
//!
//! The outer loop alternates two steps: a policy-gradient update of a mixed
//! policy (program plus neural residual), and a projection of that mixed
//! policy back onto a class of symbolic programs by imitation learning.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dsl;
pub mod env;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod policy;
pub mod project;
pub mod propel;
pub mod sandbox;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Programs over `f64`, the precision used by the environments.
pub type Program = dsl::ProgramAst<f64>;
pub type Program32 = dsl::ProgramAst<f32>;
pub type Expr = dsl::Expr<f64>;
pub type ProgState = dsl::ProgState<f64>;
pub type NeuralParams = nn::Mlp<f64>;
pub type NeuralParams32 = nn::Mlp<f32>;
