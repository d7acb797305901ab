//! Command-line pipeline: synthesize, preprocess, train, evaluate, profile, sweep.

mod commands;
pub mod config;

use std::io::Write;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_preprocess, cmd_profile, cmd_sweep, cmd_synth, cmd_train, schedule_summary, EvalArgs, PreprocessArgs, ProfileArgs,
    SegmentList, SweepArgs, SweepRow, SynthArgs, TrainArgs, TrainArtifacts, DEFAULT_SWEEP,
};
pub use config::{RunConfig, SegmentArg};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<seglat::Error> for CliError {
    fn from(e: seglat::Error) -> Self {
        use seglat::Error as E;
        let code = match e {
            E::Config(_) | E::Usage(_) | E::Format { .. } | E::Json(_) | E::Io { .. } | E::Range(_) | E::Unsupported(_) => {
                EXIT_USAGE
            }
            _ => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "seglat", version, about = "Segmented-latent transformer for multichannel time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic three-class dataset
    Synth(SynthArgs),
    /// Convert raw recordings into wave, psd or stack tensors
    Preprocess(PreprocessArgs),
    /// Train a model and write history and checkpoints
    Train(TrainArgs),
    /// Score a checkpoint on one split
    Eval(EvalArgs),
    /// Parameter count, FLOPs and latency for one configuration
    Profile(ProfileArgs),
    /// Profile (and optionally train) across segment counts
    Sweep(SweepArgs),
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out).map(drop),
        Command::Preprocess(a) => cmd_preprocess(&a, out),
        Command::Train(a) => cmd_train(&a, out).map(drop),
        Command::Eval(a) => cmd_eval(&a, out).map(drop),
        Command::Profile(a) => cmd_profile(&a, out).map(drop),
        Command::Sweep(a) => cmd_sweep(&a, out).map(drop),
    }
}
