use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nhvi_cli::{commands, seed_from_env, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "nhvi", version, about = "Variable time-step nonholonomic integrators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the constrained integrator and write the trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check structural properties and print worst residuals.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list: energy, momentum-eq, horizontal, symplectic,
        /// chaplygin-projection, convergence, or all.
        #[arg(long, value_delimiter = ',')]
        properties: Option<Vec<String>>,
    },
    /// Convergence study against the reference solution.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = match cli.command {
        Command::Simulate { config, out: path } => commands::simulate(&config, &path, &mut err),
        Command::Check { config, properties } => match seed_from_env() {
            Ok(seed) => commands::check(&config, properties.as_deref(), seed, &mut out, &mut err),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::Compare { config, out: path } => commands::compare(&config, &path, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
