//! Training, evaluation and experiment drivers.

pub mod config;
pub mod experiments;
pub mod gradcheck;
pub mod manifest;
pub mod optim;
pub mod plot;
pub mod stats;
pub mod sweep;
pub mod train;

pub use config::{Backbone, DataSource, ExperimentConfig};
pub use experiments::{ablate, lowres, run_seeds, summarize, RunRecord, Summary, Variant};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use manifest::Manifest;
pub use optim::Adam;
pub use sweep::{lambda_sweep, parse_sweep_csv, SweepPairs, SweepRow};
pub use train::{evaluate, prepare, train, train_observed, train_on, Prepared, TrainReport};
