//! The `simulate`, `benchmark` and `truthcheck` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sensecourt::auction::{truthfulness_sweep, AuctionRules, PaymentRule, RegulationState};
use sensecourt::benchmark::{
    dual_upper_bound_with, incentive_cost, solve_complete_bruteforce, unconstrained_trace_welfare,
    BenchmarkResult, DualBoundOptions, Trace, BRUTEFORCE_LIMIT,
};
use sensecourt::engine::{run_simulation, PolicySpec, SimulationOptions, Summary, TraceMetrics};
use sensecourt::scenarios::{generate_trace, random_instance, slot_rng, Lane};
use sensecourt::TIE_TOL;

use crate::config::ExperimentConfig;
use crate::output::{
    write_json, write_plot_alloc_prob, write_plot_dropping, write_plot_welfare, write_trace_csv,
    RunRef,
};
use crate::CliError;

/// Command-line flags that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

struct Resolved {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

fn resolve(config_path: &Path, overrides: &Overrides) -> Result<Resolved, CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = overrides.seed.unwrap_or(config.scenario.seed);
    let out = overrides
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;
    Ok(Resolved { config, seed, out })
}

/// Worker pool sized by `SENSECOURT_THREADS` when set.
fn pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SENSECOURT_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "SENSECOURT_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub spec: PolicySpec,
    pub replication: usize,
    pub seed: u64,
    pub summary: Summary,
    pub dropped_users: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub replications: usize,
    pub mean_avg_welfare: f64,
    pub mean_dropping_fraction: f64,
    pub min_alloc_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub base_seed: u64,
    pub n_users: usize,
    pub t_slots: usize,
    pub warmup_slots: usize,
    pub runs: Vec<RunSummary>,
    pub policies: Vec<PolicyAggregate>,
}

pub fn run_dir(out: &Path, policy: &str, replication: usize) -> PathBuf {
    out.join(policy).join(format!("rep{replication}"))
}

pub fn cmd_simulate(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<SimulationSummary, CliError> {
    let Resolved { config, seed, out } = resolve(config_path, overrides)?;
    let variants = config.variants();
    let opts = SimulationOptions::new(config.t_slots, config.warmup_slots, config.thresholds_vec())
        .with_solver(config.solver)
        .with_dropping(config.dropping);
    let jobs: Vec<(PolicySpec, usize)> = variants
        .iter()
        .flat_map(|v| (0..config.replications).map(move |r| (*v, r)))
        .collect();

    let results: Vec<Result<TraceMetrics, CliError>> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(spec, rep)| {
                let mut scenario = config.scenario.clone();
                scenario.seed = seed + rep as u64;
                let metrics = run_simulation(&scenario, &spec, &opts)?;
                let dir = run_dir(&out, &metrics.policy, rep);
                fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
                write_trace_csv(&dir.join("trace.csv"), &metrics, rep)?;
                Ok(metrics)
            })
            .collect()
    });
    let metrics: Vec<TraceMetrics> = results.into_iter().collect::<Result<_, _>>()?;

    let runs: Vec<RunRef<'_>> = jobs
        .iter()
        .zip(&metrics)
        .map(|(&(_, replication), metrics)| RunRef {
            replication,
            metrics,
        })
        .collect();
    write_plot_welfare(&out.join("plotdata_welfare.csv"), &runs)?;
    write_plot_alloc_prob(&out.join("plotdata_alloc_prob.csv"), &runs)?;
    write_plot_dropping(&out.join("plotdata_dropping.csv"), &runs)?;

    let run_summaries: Vec<RunSummary> = jobs
        .iter()
        .zip(&metrics)
        .map(|(&(spec, rep), m)| RunSummary {
            policy: m.policy.clone(),
            spec,
            replication: rep,
            seed: seed + rep as u64,
            summary: m.summary.clone(),
            dropped_users: m.drop_events.len(),
        })
        .collect();
    let policies = variants
        .iter()
        .map(|v| {
            let label = v.label();
            let mine: Vec<&RunSummary> =
                run_summaries.iter().filter(|r| r.policy == label).collect();
            let k = mine.len() as f64;
            PolicyAggregate {
                policy: label,
                replications: mine.len(),
                mean_avg_welfare: mine.iter().map(|r| r.summary.avg_welfare).sum::<f64>() / k,
                mean_dropping_fraction: mine
                    .iter()
                    .map(|r| r.summary.dropping_fraction)
                    .sum::<f64>()
                    / k,
                min_alloc_prob: mine
                    .iter()
                    .map(|r| r.summary.min_alloc_prob)
                    .fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    let summary = SimulationSummary {
        base_seed: seed,
        n_users: config.scenario.n_users,
        t_slots: config.t_slots,
        warmup_slots: config.warmup_slots,
        runs: run_summaries,
        policies,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub n_users: usize,
    pub t_slots: usize,
    pub thresholds: Vec<f64>,
    pub unconstrained: BenchmarkResult,
    pub dual_upper_bound: BenchmarkResult,
    pub dual_multipliers: Vec<f64>,
    pub complete_optimum: Option<BenchmarkResult>,
    pub incentive_cost: Option<f64>,
}

pub fn cmd_benchmark(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<BenchmarkReport, CliError> {
    let Resolved { config, seed, out } = resolve(config_path, overrides)?;
    let bench = &config.benchmark;
    let n = config.scenario.n_users;
    if bench.t_slots == 0 {
        return Err(CliError::Config(
            "`benchmark.t_slots` must be at least 1".into(),
        ));
    }
    if bench.brute_force && n * bench.t_slots > BRUTEFORCE_LIMIT {
        return Err(CliError::Capacity(format!(
            "brute force covers n_users × t_slots ≤ {BRUTEFORCE_LIMIT}, got {n} × {} = {}; \
             lower `benchmark.t_slots` or `scenario.n_users`, or set `benchmark.brute_force` to false",
            bench.t_slots,
            n * bench.t_slots
        )));
    }
    let mut scenario = config.scenario.clone();
    scenario.seed = seed;
    let trace = Trace::new(
        generate_trace(&scenario, bench.t_slots)?,
        config.thresholds_vec(),
    )?;
    let unconstrained = unconstrained_trace_welfare(&trace)?;
    let dual = pool()?.install(|| {
        dual_upper_bound_with(
            &trace,
            DualBoundOptions {
                iterations: bench.dual_iterations.max(1),
                step: None,
            },
        )
    })?;
    let complete_optimum = if bench.brute_force {
        Some(solve_complete_bruteforce(&trace)?)
    } else {
        None
    };
    let cost = incentive_cost(&unconstrained, &dual.result).ok();
    let report = BenchmarkReport {
        seed,
        n_users: n,
        t_slots: bench.t_slots,
        thresholds: trace.thresholds().to_vec(),
        unconstrained,
        dual_upper_bound: dual.result,
        dual_multipliers: dual.multipliers,
        complete_optimum,
        incentive_cost: cost,
    };
    write_json(&out.join("benchmark.json"), &report)?;
    Ok(report)
}

/// The first sweep where truthful bidding lost utility or a winner was paid below cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub instance: usize,
    pub user: usize,
    pub true_costs: Vec<f64>,
    pub regulation_factors: Vec<f64>,
    pub weights: Vec<f64>,
    pub regions: Vec<Vec<usize>>,
    pub truthful_utility: f64,
    pub best_bid: f64,
    pub best_utility: f64,
    pub regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthfulnessReport {
    pub seed: u64,
    pub instances: usize,
    pub sweeps: usize,
    pub grid_points: usize,
    pub payment_rule: PaymentRule,
    pub max_regret: f64,
    /// Smallest `payment − cost` over truthful winners.
    pub min_winner_surplus: Option<f64>,
    /// True when no sweep ran, so the report asserts nothing.
    pub vacuous: bool,
    pub counterexample: Option<Counterexample>,
}

struct InstanceCheck {
    sweeps: usize,
    max_regret: f64,
    min_surplus: Option<f64>,
    counterexample: Option<Counterexample>,
}

fn check_instance(
    config: &ExperimentConfig,
    seed: u64,
    i: usize,
) -> Result<InstanceCheck, CliError> {
    let tc = &config.truthcheck;
    let mut rng = slot_rng(seed, i as u64, Lane::Policy);
    let real = random_instance(&tc.shape, &mut rng);
    let n = real.n_users();
    let factors: Vec<f64> = (0..n)
        .map(|_| {
            if tc.max_factor > 0.0 {
                rng.gen_range(0.0..tc.max_factor)
            } else {
                0.0
            }
        })
        .collect();
    let state = RegulationState::with_factors(factors.clone(), tc.phi)?;
    let rules = AuctionRules {
        payment: tc.payment_rule,
        ..AuctionRules::default()
    };
    let costs = real.true_costs().to_vec();
    let mut check = InstanceCheck {
        sweeps: 0,
        max_regret: 0.0,
        min_surplus: None,
        counterexample: None,
    };
    for user in 0..n {
        let c = costs[user];
        let top = tc.max_bid_factor * c;
        let grid: Vec<f64> = match tc.grid_points {
            0 => Vec::new(),
            1 => vec![0.0],
            k => (0..k).map(|j| top * j as f64 / (k - 1) as f64).collect(),
        };
        let rep = truthfulness_sweep(&real, &state, &costs, user, &grid, rules)?;
        check.sweeps += 1;
        check.max_regret = check.max_regret.max(rep.regret);
        let surplus = rep.truthful_selected.then_some(rep.truthful_payment - c);
        if let Some(s) = surplus {
            check.min_surplus = Some(check.min_surplus.map_or(s, |m: f64| m.min(s)));
        }
        let violated = rep.regret > TIE_TOL || surplus.is_some_and(|s| s < -TIE_TOL);
        if violated && check.counterexample.is_none() {
            check.counterexample = Some(Counterexample {
                instance: i,
                user,
                true_costs: costs.clone(),
                regulation_factors: factors.clone(),
                weights: real.weights().to_vec(),
                regions: real.regions().iter().map(|r| r.iter().collect()).collect(),
                truthful_utility: rep.truthful_utility,
                best_bid: rep.best_bid,
                best_utility: rep.best_utility,
                regret: rep.regret,
            });
        }
    }
    Ok(check)
}

/// Writes `truthfulness.json`; a counterexample is returned as an error after the file is written.
pub fn cmd_truthcheck(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<TruthfulnessReport, CliError> {
    let Resolved { config, seed, out } = resolve(config_path, overrides)?;
    let tc = &config.truthcheck;
    if tc.shape.min_users == 0 || tc.shape.min_users > tc.shape.max_users {
        return Err(CliError::Config(
            "`truthcheck.shape` user range is empty".into(),
        ));
    }
    if !(tc.max_bid_factor.is_finite() && tc.max_bid_factor >= 0.0) {
        return Err(CliError::Config(
            "`truthcheck.max_bid_factor` must be >= 0".into(),
        ));
    }
    let checks: Vec<Result<InstanceCheck, CliError>> = pool()?.install(|| {
        (0..tc.instances)
            .into_par_iter()
            .map(|i| check_instance(&config, seed, i))
            .collect()
    });
    let mut report = TruthfulnessReport {
        seed,
        instances: tc.instances,
        sweeps: 0,
        grid_points: tc.grid_points,
        payment_rule: tc.payment_rule,
        max_regret: 0.0,
        min_winner_surplus: None,
        vacuous: true,
        counterexample: None,
    };
    for c in checks {
        let c = c?;
        report.sweeps += c.sweeps;
        report.max_regret = report.max_regret.max(c.max_regret);
        if let Some(s) = c.min_surplus {
            report.min_winner_surplus =
                Some(report.min_winner_surplus.map_or(s, |m: f64| m.min(s)));
        }
        if report.counterexample.is_none() {
            report.counterexample = c.counterexample;
        }
    }
    report.vacuous = report.sweeps == 0;
    write_json(&out.join("truthfulness.json"), &report)?;
    match &report.counterexample {
        Some(c) => Err(CliError::Counterexample(c.regret)),
        None => Ok(report),
    }
}
