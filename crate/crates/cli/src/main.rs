mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit statuses: 0 success, 2 usage, 3 parse, 4 numeric, 5 I/O.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mvdlm::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mvdlm::Error;
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Core(Error::Parse { .. } | Error::Nifti(_) | Error::Data(_)) => 3,
            CliError::Core(Error::Numeric(_)) => 4,
            CliError::Core(Error::Io { .. }) => 5,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Map { input, run } => commands::cmd_map(input, run, cli.quiet),
        Command::SingleVoxel { input, voxel, run } => commands::cmd_single_voxel(input, *voxel, run),
        Command::GroupMap { subjects, run } => commands::cmd_group_map(subjects, run, cli.quiet),
        Command::GroupSingleVoxel { subjects, voxel, run } => {
            commands::cmd_group_single_voxel(subjects, *voxel, run)
        }
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Info { path } => commands::cmd_info(path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
