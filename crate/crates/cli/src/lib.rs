//! Command-line front end: configuration, versioned reports and the
//! `detect`, `calibrate`, `uncmap`, `synth` and `mc` commands.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    cmd_calibrate, cmd_detect, cmd_mc, cmd_synth, cmd_uncmap, run_calibrate, run_detect, run_mc, run_synth,
    run_uncmap,
};
pub use config::RunConfig;

/// Command failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("detection shortfall: {0}")]
    Detection(String),
    #[error("optimization failure: {0}")]
    Optimization(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) | Self::Io(_) => 2,
            Self::Detection(_) => 3,
            Self::Optimization(_) => 4,
        }
    }
}
