//! Chance-constrained training: logistic smoothing of the satisfaction
//! indicator, stochastic primal-dual updates, load sampling and test metrics.

mod config;
mod logistic;
mod metrics;
mod sampling;
mod train;

pub use config::{AdamConfig, TrainConfig};
pub use logistic::{logistic, logistic_grad};
pub use metrics::{evaluate, Metrics, MetricsBuilder, METRICS_SCHEMA_VERSION};
pub use sampling::{sample_loads, split_samples, SampleSplit};
pub use train::{
    dual_step, lagrangian_terms, spd_step, train, train_from, Adam, EpochRecord, History,
    IterationRecord, LagrangianTerms, StepOutcome, TrainOutcome, TrainState,
};
