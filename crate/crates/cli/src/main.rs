use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use mcam::solver::RviVariant;
use mcam_cli::{parse_config, run, Mode, RunOptions, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Variant {
    Paper,
    SemiMdp,
}

/// Long-run average reinsurance, investment and dividend control by Markov
/// chain approximation.
#[derive(Debug, Parser)]
#[command(name = "mcam", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's `mode`, then `full`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides both the training and the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "MCAM_THREADS")]
    threads: Option<usize>,
    /// Overrides `rvi.variant`.
    #[arg(long, value_enum)]
    rvi_variant: Option<Variant>,
    /// Input policy for `simulate` and `eval-policy`.
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors exit 1; exit 2 is reserved for an exhausted round limit
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the thread pool")?;
    }
    let mut config = parse_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
        config.train.seed = seed;
    }
    if let Some(v) = cli.rvi_variant {
        config.rvi.variant = match v {
            Variant::Paper => RviVariant::Paper,
            Variant::SemiMdp => RviVariant::SemiMdp,
        };
    }
    let options = RunOptions {
        mode: cli.mode.or(config.mode).unwrap_or(Mode::Full),
        out: cli.out,
        policy: cli.policy,
    };
    let outcome = run(&config, &options)?;
    let g = &outcome.gain;
    match g.se {
        Some(se) => println!(
            "gamma = {} ({:?}), Monte-Carlo se = {se}",
            g.gamma, g.method
        ),
        None => println!("gamma = {} ({:?})", g.gamma, g.method),
    }
    if let Some(mc) = &g.monte_carlo {
        if g.method != mcam::solver::GainMethod::MonteCarlo {
            println!("Monte-Carlo gamma = {} ± {}", mc.gamma, mc.se);
        }
    }
    Ok(outcome.status)
}
