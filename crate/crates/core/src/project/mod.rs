//! Projection of a mixed policy back onto the program class by imitation
//! learning with dataset aggregation.

mod dagger;
mod dataset;
mod fit;

pub use dagger::{
    collect_round, fit_class, probe_distance, project, BetaSchedule, DaggerConfig, ProjectionMetrics, RoundMetrics,
};
pub use dataset::{DatasetRow, ImitationDataset};
pub use fit::{fit_pid, fit_pid_censored, training_mse, Censor, PidFit};
