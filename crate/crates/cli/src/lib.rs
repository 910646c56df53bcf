//! Command implementations behind the `artfield` binary.
//!
//! Every command reads a resolved configuration, writes its outputs into a run
//! directory and returns a typed summary. The binary adds argument parsing,
//! `config.json`, `log.txt` and exit codes on top.

pub mod commands;
pub mod config;
pub mod rundir;

use std::process::ExitCode;

use artfield::Error;

/// Exit status per error class.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const DIVERGED: u8 = 4;
    pub const INFEASIBLE: u8 = 5;
    pub const CHECKPOINT: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_status(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => exit::CONFIG,
                Error::Io { .. } | Error::Json { .. } | Error::MissingGroundTruth(_) => exit::IO,
                Error::Diverged { .. } => exit::DIVERGED,
                Error::Infeasible(_) | Error::IncompatibleTask { .. } => exit::INFEASIBLE,
                Error::CorruptCheckpoint(_) | Error::HashMismatch(_) | Error::ConfigMismatch(_) => exit::CHECKPOINT,
                _ => exit::OTHER,
            },
        }
    }

    /// What to try next, when there is an obvious fix.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Config(_) => Some("run with --print-config to see the resolved configuration"),
            CliError::Core(Error::Io { .. }) => Some("check that the upstream command finished and the path is right"),
            CliError::Core(Error::Diverged { .. }) => Some("lower the learning rates; the last good checkpoint was kept"),
            CliError::Core(Error::HashMismatch(_) | Error::CorruptCheckpoint(_)) => {
                Some("the checkpoint file is damaged; re-run train")
            }
            CliError::Core(Error::ConfigMismatch(_)) => Some("pass the architecture the checkpoint was trained with"),
            CliError::Core(Error::Infeasible(_)) => Some("widen planner.workspace or move planner.home"),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.exit_status())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
