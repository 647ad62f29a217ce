use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nls_fgr::harness::{run_command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nlsfgr", version, about = "Soliton mass transfer laboratory for NLS/GP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound states of -Δ + V and the trapped-level checks
    Spectrum { config: PathBuf },
    /// Ground-state branch (cached) and the bifurcation law
    Branch { config: PathBuf },
    /// Neutral modes and linearization identities at the FGR branch points
    Modes { config: PathBuf },
    /// FGR matrices, positivity and the vanishing identities
    Fgr { config: PathBuf },
    /// Reduced modulation ODE over the amplitude sweep
    Reduce { config: PathBuf },
    /// One full evolution at the first sweep amplitude
    Evolve { config: PathBuf },
    /// Full amplitude sweep compared with the reduced model
    Equipartition { config: PathBuf },
    /// Tidy plot tables from the latest sweep
    Report { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let (name, path) = match cli.command {
        Command::Spectrum { config } => ("spectrum", config),
        Command::Branch { config } => ("branch", config),
        Command::Modes { config } => ("modes", config),
        Command::Fgr { config } => ("fgr", config),
        Command::Reduce { config } => ("reduce", config),
        Command::Evolve { config } => ("evolve", config),
        Command::Equipartition { config } => ("equipartition", config),
        Command::Report { config } => ("report", config),
    };
    let result = ExperimentConfig::load(&path).and_then(|cfg| run_command(name, &cfg));
    match result {
        Ok(art) => {
            println!("{}", art.dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nlsfgr {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
