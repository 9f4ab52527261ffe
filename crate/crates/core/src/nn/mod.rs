//! Small from-scratch neural networks and the DDPG learner.

mod adam;
mod ddpg;
mod io;
mod mlp;
mod replay;

pub use adam::Adam;
pub use ddpg::{init_actor, update_f, UpdateConfig, UpdateMetrics, DIVERGENCE_LIMIT};
pub use io::{from_bytes, load_nnp, save_nnp, to_bytes};
pub use mlp::{Activation, Dense, Gradient, Mlp, Trace};
pub use replay::{ReplayBuffer, Transition};
