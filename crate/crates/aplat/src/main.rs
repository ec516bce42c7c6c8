use std::path::PathBuf;
use std::process::ExitCode;

use aplat::{commands, config, output, CliError, Command};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aplat", version, about = "Almost periodic solutions of monotone lattice systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Io {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory and write it as CSV.
    Simulate(Io),
    /// Approximate the invariant section by pull-back.
    Pullback(Io),
    /// Scan a trajectory CSV for ε-almost periods.
    Apscan(Io),
    /// Measure the contraction rate on random pairs.
    Contraction(Io),
    /// Contraction, absorption and pull-back over a parameter grid.
    Sweep(Io),
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    let (command, io) = match cli.command {
        Cmd::Simulate(io) => (Command::Simulate, io),
        Cmd::Pullback(io) => (Command::Pullback, io),
        Cmd::Apscan(io) => (Command::Apscan, io),
        Cmd::Contraction(io) => (Command::Contraction, io),
        Cmd::Sweep(io) => (Command::Sweep, io),
    };
    aplat::configure_threads()?;
    let loaded = config::load(&io.config)?;
    let out = commands::run(command, &loaded)?;
    output::persist_all(&io.out, &out.files)?;
    println!("{}", out.human);
    println!("outputs written to {}", io.out.display());
    match out.check_failure {
        Some(why) => {
            eprintln!("property check failed: {why}");
            Ok(1)
        }
        None => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("aplat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
