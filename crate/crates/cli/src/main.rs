mod analysis;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Flags;

#[derive(Debug, Parser)]
#[command(name = "blowup", version, about = "Ground states and blow-up diagnostics for two-component condensates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (a manifest from a previous run is accepted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides paths.out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for independent points; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Print and enforce the command's invariant checks.
    #[arg(long, global = true)]
    check: bool,

    /// Override any configuration field, e.g. `--set solver.tolerance=1e-8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the radial ground state and tabulate its constants.
    Townes,
    /// Minimize the one-component energy at problem.a1 in trap1.
    Single,
    /// Minimize the coupled energy for the configured problem.
    Pair,
    /// Sweep the couplings toward a* and run the limit diagnostics.
    Sweep,
    /// Evaluate the trial-state energy ladder above a*.
    Unbounded,
    /// Same-trap trial upper bound along trial.fractions.
    Trial {
        /// Also minimize the coupled energy at each point and compare.
        #[arg(long)]
        compare: bool,
    },
    /// Minimize the scalar model function over the configured grid.
    LemmaA,
    /// Recompute diagnostics from an existing sweep directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let flags = Flags { check: cli.check };
    let result = commands::load_config(cli.config.as_deref(), cli.out, cli.jobs, &cli.overrides).and_then(|cfg| {
        match cli.command {
            Command::Townes => commands::townes(&cfg, &flags),
            Command::Single => commands::single(&cfg, &flags),
            Command::Pair => commands::pair(&cfg, &flags),
            Command::Sweep => commands::sweep(&cfg, &flags),
            Command::Unbounded => commands::unbounded(&cfg, &flags),
            Command::Trial { compare } => commands::trial(&cfg, &flags, compare),
            Command::LemmaA => commands::lemma_a(&cfg, &flags),
            Command::Report => commands::report(&cfg, &flags),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
