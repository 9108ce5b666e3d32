use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sensecourt_cli::commands::{cmd_benchmark, cmd_simulate, cmd_truthcheck, Overrides};

#[derive(Parser)]
#[command(
    name = "sensecourt",
    version,
    about = "Sensor-selection policy simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured policy variant and replication.
    Simulate(Common),
    /// Compute welfare benchmarks on a generated trace.
    Benchmark(Common),
    /// Sweep unilateral bid deviations in random auction instances.
    Truthcheck(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(&c.config, &c.overrides()).map(|s| {
            for p in &s.policies {
                println!(
                    "{:<24} welfare {:>12.4}  dropped {:>6.2}%  min alloc prob {:.4}",
                    p.policy,
                    p.mean_avg_welfare,
                    100.0 * p.mean_dropping_fraction,
                    p.min_alloc_prob
                );
            }
        }),
        Command::Benchmark(c) => cmd_benchmark(&c.config, &c.overrides()).map(|r| {
            println!("unconstrained    {:.6}", r.unconstrained.avg_welfare);
            println!("dual upper bound {:.6}", r.dual_upper_bound.avg_welfare);
            if let Some(b) = &r.complete_optimum {
                println!("complete optimum {:.6}", b.avg_welfare);
            }
            if let Some(c) = r.incentive_cost {
                println!("incentive cost   {:.6}", c);
            }
        }),
        Command::Truthcheck(c) => cmd_truthcheck(&c.config, &c.overrides()).map(|r| {
            if r.vacuous {
                println!("no instances checked (vacuous)");
            } else {
                println!("{} sweeps, max regret {:e}", r.sweeps, r.max_regret);
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
