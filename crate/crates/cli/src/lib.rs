//! Experiment driver for jointly training an embedding network and a
//! product-quantization codebook, with evaluation and ablation sweeps.

pub mod commands;
pub mod config;
pub mod data;
pub mod eval;
pub mod manifest;
pub mod train;

pub use commands::{
    cmd_ablate, cmd_encode, cmd_eval, cmd_search, cmd_synth, cmd_train, cmd_train_codebook, run_experiment, RunContext,
    SweepParam, SweepRow,
};
pub use config::{ExperimentConfig, TrainMode};
