//! Datasets, partitioning, the logistic-regression workload and the
//! learning-rate schedule.

pub mod data;
pub mod idx;
pub mod model;
pub mod schedule;

pub use data::{partition, synth_classification, synth_train_test, Dataset, PartitionMode, Shard};
pub use idx::load_idx;
pub use model::{evaluate, global_loss, gradient, loss, minibatch_gradient, ParamVector};
pub use schedule::{LearningRateSchedule, ScheduleMode};
