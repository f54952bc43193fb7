//! Command-line front end over the library's experiment functions.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use streamfed::cache::PolicyKind;
use streamfed::experiment::{
    cmd_bounds, cmd_simulate, cmd_sweep, consecutive_seeds, load_bounds_grid,
    load_experiment_config, BoundsGrid, SimulateOptions, SweepParam,
};
use streamfed::Result;

#[derive(Parser)]
#[command(
    name = "streamfed",
    version,
    about = "Federated learning simulator over non-stationary data streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of consecutive seeds starting at the config's base seed.
    #[arg(long, conflicts_with = "seed_list", default_value_t = 10)]
    seeds: usize,
    /// Explicit comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Comma-separated policies (fifo,srsr,drsr,lazy,full). Defaults to the
    /// config's policy.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Worker-pool width; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment for every (policy, seed) pair.
    Simulate(RunArgs),
    /// Verify the policy discrepancy bounds by Monte-Carlo simulation.
    Bounds {
        /// Bounds grid (JSON). Omitting it runs the standard verification grid.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Sweep one parameter (B, B_s, or theta) across values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter to sweep: B, B_s, or theta.
        #[arg(long)]
        param: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

fn resolve_options(args: &RunArgs, base_seed: u64, default_policy: PolicyKind) -> Result<SimulateOptions> {
    let seeds = match &args.seed_list {
        Some(list) => list.clone(),
        None => consecutive_seeds(base_seed, args.seeds),
    };
    let policies = match &args.policies {
        Some(names) => names
            .iter()
            .map(|n| PolicyKind::from_str(n))
            .collect::<Result<Vec<_>>>()?,
        None => vec![default_policy],
    };
    Ok(SimulateOptions {
        policies,
        seeds,
        workers: args.workers,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = match &args.config {
                Some(path) => load_experiment_config(path)?,
                None => Default::default(),
            };
            let opts = resolve_options(&args, config.seed, config.policy.kind)?;
            let outcome = cmd_simulate(&config, &opts, &args.out)?;
            for s in &outcome.summaries {
                println!(
                    "{}: final acc {:.4} +- {:.4} | psi {:.4} +- {:.4} ({} seeds)",
                    s.policy.name(),
                    s.final_acc_mean,
                    s.final_acc_std,
                    s.psi_mean,
                    s.psi_std,
                    s.seeds
                );
            }
            println!("wrote {}", args.out.join("summary.csv").display());
        }
        Command::Bounds {
            config,
            out,
            workers,
        } => {
            let grid = match &config {
                Some(path) => load_bounds_grid(path)?,
                None => BoundsGrid::verification_default(),
            };
            let rows = cmd_bounds(&grid, &out, workers)?;
            let passed = rows.iter().filter(|r| r.pass).count();
            for row in &rows {
                println!(
                    "{} M={} beta={} t={}: estimate {:.3e} bound {:.3e} [{}]",
                    row.policy.name(),
                    row.m,
                    row.beta,
                    row.t,
                    row.mc_estimate,
                    row.bound,
                    if row.pass { "pass" } else { "FAIL" }
                );
            }
            println!("{passed}/{} cells passed", rows.len());
            println!("wrote {}", out.join("bounds.csv").display());
            if passed != rows.len() {
                return Err(streamfed::Error::Config(
                    "one or more bound checks failed".into(),
                ));
            }
        }
        Command::Sweep { run, param, values } => {
            let config = match &run.config {
                Some(path) => load_experiment_config(path)?,
                None => Default::default(),
            };
            let param = SweepParam::from_str(&param)?;
            let opts = resolve_options(&run, config.seed, config.policy.kind)?;
            let cells = cmd_sweep(&config, param, &values, &opts, &run.out)?;
            for cell in &cells {
                for s in &cell.summaries {
                    println!(
                        "{}={} {}: final acc {:.4} +- {:.4}",
                        param.name(),
                        cell.value,
                        s.policy.name(),
                        s.final_acc_mean,
                        s.final_acc_std
                    );
                }
            }
            println!("wrote {}", run.out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
