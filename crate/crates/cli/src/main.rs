//! Command-line runner. Flags select the subcommand, the config file and the
//! thread count; every physics parameter lives in the config.

use clap::{Parser, Subcommand, ValueEnum};
use levyhom::experiment::{run, Command, ExperimentConfig, Method};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "levyhom", version, about = "Jump-diffusions in random media")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with status 4 when a diagnostic misses its threshold.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tabulate the environment fields.
    EnvSample(Args),
    /// Tabulate the jump coefficient and check its pushforward.
    BuildGamma(Args),
    /// Simulate an ensemble and export trajectories.
    Simulate(Args),
    /// Compare rescaled increments with the scaling limit.
    ScalingVerify(Args),
    /// Effective diffusivity by corrector, variational bounds and Monte Carlo.
    Diffusivity {
        #[command(flatten)]
        args: Args,
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
    },
    /// Random walk among random conductances.
    RwrcDemo(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Corrector,
    Variational,
    Mc,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let (command, args, method) = match &cli.command {
        Cmd::EnvSample(a) => (Command::EnvSample, a, None),
        Cmd::BuildGamma(a) => (Command::BuildGamma, a, None),
        Cmd::Simulate(a) => (Command::Simulate, a, None),
        Cmd::ScalingVerify(a) => (Command::ScalingVerify, a, None),
        Cmd::Diffusivity { args, method } => (
            Command::Diffusivity,
            args,
            Some(match method {
                MethodArg::Corrector => Method::Corrector,
                MethodArg::Variational => Method::Variational,
                MethodArg::Mc => Method::Mc,
                MethodArg::All => Method::All,
            }),
        ),
        Cmd::RwrcDemo(a) => (Command::RwrcDemo, a, None),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|cfg| run(&cfg, command, method));
    match result {
        Ok(manifest) => {
            for f in &manifest.files {
                println!("{}  {}", f.sha256, f.name);
            }
            if !manifest.breaches.is_empty() {
                for b in &manifest.breaches {
                    eprintln!("threshold: {b}");
                }
                if cli.strict {
                    return ExitCode::from(4);
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
