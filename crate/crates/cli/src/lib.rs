//! Command-line harness around the core toolkit: binary tensor files,
//! flat experiment configs, synthetic input generation, and the
//! EM/inversion/benchmark/sweep/metric subcommands with CSV/JSON reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod synth;
pub mod tensor_io;

pub use commands::{
    cmd_bench, cmd_em, cmd_gen, cmd_invert, cmd_metrics, cmd_sweep_k, BenchArgs, EmArgs,
    GenArgs, InvertArgs, MetricsArgs, SweepArgs,
};
pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, Result};
pub use synth::SynthKind;
pub use tensor_io::{read_tensor, write_tensor, Tensor};
