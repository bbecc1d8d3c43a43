use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gjn::runner::{execute, Command, Flags};

#[derive(Parser)]
#[command(name = "gjn", version, about = "Generalized Jackson network analysis")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run config (or a manifest.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "gjn-out")]
    out: PathBuf,
    /// Simulate even when the network is overloaded.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Transience verdict, λ* estimates and contraction of a routing chain.
    Chain,
    /// Traffic equations and the underload check.
    Traffic,
    /// Regularity conditions of service laws.
    ValidateDist,
    /// Finite-N simulation.
    Simulate,
    /// Mean-field integration.
    Nlmp,
    /// Simulation followed by Poisson-hypothesis checks.
    VerifyPh,
    /// Everything the config asks for, in order.
    Pipeline,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Chain => Command::Chain,
            Cmd::Traffic => Command::Traffic,
            Cmd::ValidateDist => Command::ValidateDist,
            Cmd::Simulate => Command::Simulate,
            Cmd::Nlmp => Command::Nlmp,
            Cmd::VerifyPh => Command::VerifyPh,
            Cmd::Pipeline => Command::Pipeline,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("GJN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let flags = Flags {
        force: cli.force,
        quiet: cli.quiet,
    };
    match execute(cli.command.into(), &config, cli.seed, &cli.out, &flags) {
        Ok(lines) => {
            if !flags.quiet {
                for l in lines {
                    println!("{l}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
