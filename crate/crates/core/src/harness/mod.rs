//! Configuration, dataset assembly, and the experiment suite behind the CLI.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod manifest;

pub use commands::{
    cmd_experiment, cmd_report, cmd_reconstruct, cmd_simulate, cmd_train, cmd_uncertainty, loss_csv, obtain_model,
    train_model, UncertaintyInput, UncertaintyMethod,
};
pub use config::{standard_training, ExperimentConfig, ExperimentId};
pub use dataset::{Phantom, PhantomSetSpec};
pub use experiments::{run_experiment, Check, ExperimentOutcome, METRICS_HEADER};
pub use manifest::{read_manifest, sha256_hex, RunManifest, RunRecorder};
