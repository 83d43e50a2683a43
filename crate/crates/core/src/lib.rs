//! Decentralized SGD over a worker graph where each node averages only with
//! the neighbors that finished their gradient in time.
//!
//! The pieces, bottom-up:
//!
//! * [`topology`]: worker graphs, coverage paths, B-connectivity checks.
//! * [`consensus`]: Metropolis mixing matrices and products of them.
//! * [`learning`]: datasets, partitions, the logistic model, step sizes.
//! * [`straggler`]: per-iteration compute-time draws and iteration durations.
//! * [`scheduler`]: full, static-p and DTUR participation plans.
//! * [`engine`]: the iteration loop and the final consensus phase.
//! * [`experiment`]: replicated runs, comparisons, checks and output files.

pub mod config;
pub mod consensus;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod learning;
pub mod rng;
pub mod scheduler;
pub mod straggler;
pub mod topology;

pub use config::ExperimentConfig;
pub use consensus::{build_metropolis, MixingMatrix, ProductChain};
pub use engine::{RunResult, Simulation};
pub use error::{Error, Result};
pub use scheduler::{ParticipationPlan, Scheduler, StrategyConfig, StrategyKind};
pub use topology::{coverage_path, CoveragePath, Graph};
