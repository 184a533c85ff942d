use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gfn_cli::plotdata::{cmd_plotdata, XAxis};
use gfn_cli::sweep::cmd_sweep;
use gfn_cli::{cmd_run, CliError};

/// Train and evaluate GFlowNet samplers from JSON configs.
#[derive(Parser)]
#[command(name = "gfn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run {
        config: PathBuf,
        /// Output directory; defaults to $GFN_OUT_DIR/<config stem>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run the Cartesian grid of a config's sweep axes and seeds.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print metrics of run directories as long-format CSV.
    Plotdata {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::Trajectories)]
        x: Axis,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Trajectories,
    Iterations,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, force } => {
            let dir = cmd_run(&config, out.as_deref(), force)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Sweep {
            config,
            jobs,
            out,
            force,
        } => {
            let dir = cmd_sweep(&config, out.as_deref(), force, jobs)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Plotdata { dirs, x } => {
            let x = match x {
                Axis::Trajectories => XAxis::Trajectories,
                Axis::Iterations => XAxis::Iterations,
            };
            let dirs: Vec<_> = dirs.iter().map(PathBuf::as_path).collect();
            cmd_plotdata(&dirs, x, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
