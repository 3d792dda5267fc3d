//! Command implementations behind the `bps` binary.
//!
//! Every command returns its output as a value (or bytes) and writes
//! warnings to a separate diagnostics stream, so the binary only handles
//! argument parsing, file placement and exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_calibrate, cmd_depth, cmd_evaluate, cmd_predict, cmd_synth, cmd_vertices, CalibrationDoc, CornerSet,
    Evaluation, Generator, HeatmapBins, SynthArgs, SynthOutput, Threshold,
};
pub use config::{Mode, RunConfig};
pub use error::{CliError, CliResult};
