//! Pipeline execution for each mode and the artifacts it leaves in the
//! output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcam::refine::{global_iterate, IterateOutcome};
use mcam::sim::{simulate, NearestNode, PathStats};
use mcam::solver::{
    evaluate_policy, gain_of_policy, policy_values, rvi_solve, GainEstimate, GainMethod,
    RviVariant, StationaryMethod, TabularPolicy, ValueTable,
};
use mcam::Grid;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::io::{self, JsonPolicy};

/// How a run ended; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// The refinement used up its round limit; the outputs hold the best round.
    RoundLimit,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Converged => 0,
            Status::RoundLimit => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub gamma: f64,
    pub se: f64,
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub regime_fractions: Vec<f64>,
    pub regime_fraction_se: Vec<f64>,
    /// `max |empirical − ω|` per regime, when the policy is tabular.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation_discrepancy: Option<Vec<f64>>,
}

/// Contents of `gain.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub gamma: f64,
    pub method: GainMethod,
    pub residual: f64,
    /// Monte-Carlo standard error, when a simulation ran.
    pub se: Option<f64>,
    pub mode: Mode,
    pub variant: RviVariant,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSummary>,
}

impl GainReport {
    fn new(config: &RunConfig, mode: Mode, gain: GainEstimate) -> Self {
        Self {
            gamma: gain.gamma,
            method: gain.method,
            residual: gain.residual,
            se: None,
            mode,
            variant: config.rvi.variant,
            converged: true,
            coarse_gain: None,
            rounds: None,
            monte_carlo: None,
        }
    }
}

/// Everything a run produced, also written to the output directory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    pub gain: GainReport,
    pub grid: Grid,
    pub policy: TabularPolicy,
    /// The refinement result for `refine` and `full`.
    pub refined: Option<IterateOutcome>,
    pub stats: Option<PathStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    pub out: PathBuf,
    /// Input policy for `simulate` and `eval-policy`: a policy table (`.csv`),
    /// a constant control or a network checkpoint (`.json`).
    pub policy: Option<PathBuf>,
}

pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome> {
    std::fs::create_dir_all(&options.out)
        .with_context(|| format!("cannot create {}", options.out.display()))?;
    io::write_json(&options.out.join("config.json"), config)?;
    log::info!("mode {} into {}", options.mode, options.out.display());
    let outcome = match options.mode {
        Mode::Rvi => run_rvi(config, &options.out),
        Mode::Refine => run_refine(config, &options.out, false),
        Mode::Full => run_refine(config, &options.out, true),
        Mode::Simulate => run_simulate(config, &options.out, need_policy(options)?),
        Mode::EvalPolicy => run_eval(config, &options.out, need_policy(options)?),
    }?;
    io::write_json(&options.out.join("gain.json"), &outcome.gain)?;
    Ok(outcome)
}

fn need_policy(options: &RunOptions) -> Result<&Path> {
    match &options.policy {
        Some(p) => Ok(p),
        None => bail!("mode {} needs --policy", options.mode),
    }
}

/// Relative values of `policy` with the configured recursion.
fn values_of(config: &RunConfig, grid: &Grid, policy: &TabularPolicy) -> Result<ValueTable> {
    let (v, _) = policy_values(
        &config.model,
        grid,
        policy,
        config.rvi.variant,
        config.rvi.centering,
        config.rvi.boundary,
        (grid.origin_index(), 0),
    )?;
    Ok(v)
}

fn run_rvi(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let grid = config.coarse_grid()?;
    let rvi = rvi_solve(&config.model, &grid, &config.rvi)?;
    log::info!(
        "rvi: {} sweeps, gain {} (iteration estimate {})",
        rvi.sweeps,
        rvi.gain.gamma,
        rvi.iteration_gain.gamma
    );
    io::write_policy(&out.join("policy.csv"), &grid, &rvi.policy)?;
    let v = values_of(config, &grid, &rvi.policy)?;
    io::write_values(&out.join("values.csv"), &grid, &v, Some(&rvi.values))?;
    let mut gain = GainReport::new(config, Mode::Rvi, rvi.gain);
    gain.coarse_gain = Some(rvi.gain.gamma);
    Ok(RunOutcome {
        status: Status::Converged,
        gain,
        grid,
        policy: rvi.policy,
        refined: None,
        stats: None,
    })
}

fn run_refine(config: &RunConfig, out: &Path, with_simulation: bool) -> Result<RunOutcome> {
    let coarse = config.coarse_grid()?;
    let fine = config.fine_grid()?;
    let result = global_iterate(&config.model, &coarse, &fine, &config.iterate_config())?;
    let mode = if with_simulation {
        Mode::Full
    } else {
        Mode::Refine
    };
    io::write_policy(&out.join("policy.csv"), &fine, &result.policy)?;
    let u = result.coarse_values.prolongate(&coarse, &fine);
    io::write_values(&out.join("values.csv"), &fine, &result.values, Some(&u))?;
    io::write_policy(
        &out.join("coarse_policy.csv"),
        &coarse,
        &result.coarse_policy,
    )?;
    std::fs::write(out.join("checkpoint.json"), result.net.to_json())?;
    io::write_rounds(&out.join("rounds.csv"), &result.rounds)?;
    io::write_objective(&out.join("objective.csv"), &result.objective_trace)?;
    io::write_fit_losses(&out.join("fit_loss.csv"), &result.fit_losses)?;

    let mut gain = GainReport::new(config, mode, result.gain);
    gain.converged = result.converged;
    gain.rounds = Some(result.rounds.len());
    gain.coarse_gain = result.rounds.last().map(|r| r.coarse_gain);
    let status = if result.converged {
        Status::Converged
    } else {
        log::warn!("refinement hit the round limit; reporting the best round");
        Status::RoundLimit
    };
    let mut stats = None;
    if with_simulation {
        let (summary, s) = simulate_tabular(config, &fine, &result.policy, out)?;
        gain.se = Some(summary.se);
        gain.monte_carlo = Some(summary);
        stats = Some(s);
    }
    Ok(RunOutcome {
        status,
        gain,
        grid: fine,
        policy: result.policy.clone(),
        refined: Some(result),
        stats,
    })
}

/// Simulates a tabular policy by nearest-node lookup and compares the
/// occupation with the chain's invariant measure on the same lattice.
fn simulate_tabular(
    config: &RunConfig,
    grid: &Grid,
    policy: &TabularPolicy,
    out: &Path,
) -> Result<(MonteCarloSummary, PathStats)> {
    let stats = simulate(
        &config.model,
        &NearestNode { grid, policy },
        grid,
        &config.sim,
    )?;
    let ev = evaluate_policy(&config.model, grid, policy, StationaryMethod::LinearSolve)?;
    let n = grid.len();
    let discrepancy = (0..config.model.regime_count())
        .map(|l| {
            (l * n..(l + 1) * n)
                .map(|s| (stats.occupation[s] - ev.omega[s]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    io::write_occupation(&out.join("occupation.csv"), grid, &stats, Some(&ev.omega))?;
    io::write_trace(&out.join("trace.csv"), &stats)?;
    log::info!(
        "simulation: {} ± {} over {} paths",
        stats.time_avg_reward,
        stats.std_error,
        config.sim.n_paths
    );
    Ok((summary(config, &stats, Some(discrepancy)), stats))
}

fn summary(
    config: &RunConfig,
    stats: &PathStats,
    discrepancy: Option<Vec<f64>>,
) -> MonteCarloSummary {
    MonteCarloSummary {
        gamma: stats.time_avg_reward,
        se: stats.std_error,
        paths: config.sim.n_paths,
        dt: config.sim.dt,
        horizon: config.sim.horizon,
        burn_in: config.sim.burn_in,
        regime_fractions: stats.regime_fractions.clone(),
        regime_fraction_se: stats.regime_fraction_se.clone(),
        occupation_discrepancy: discrepancy,
    }
}

/// Loads `--policy` onto a lattice. A table picks the configured lattice
/// with matching nodes; a constant control or a network is tabulated on
/// the fine lattice.
pub fn load_policy(config: &RunConfig, path: &Path) -> Result<(Grid, TabularPolicy)> {
    let fine = config.fine_grid()?;
    let coarse = config.coarse_grid()?;
    let p = &config.model;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => io::read_policy(path, p, &[&fine, &coarse]),
        Some("json") => match io::read_json_policy(path)? {
            JsonPolicy::Constant(u) => {
                if !u.in_control_set(p) {
                    bail!(
                        "{}: control {u:?} is outside the control set",
                        path.display()
                    );
                }
                let policy = TabularPolicy::constant(&fine, p, u);
                Ok((fine, policy))
            }
            JsonPolicy::Net(net) => {
                if net.regimes() != p.regime_count() {
                    bail!(
                        "{}: network has {} regimes, model has {}",
                        path.display(),
                        net.regimes(),
                        p.regime_count()
                    );
                }
                let policy = net.tabulate(p, &fine);
                Ok((fine, policy))
            }
        },
        _ => bail!(
            "{}: expected a .csv table or a .json control/checkpoint",
            path.display()
        ),
    }
}

fn run_simulate(config: &RunConfig, out: &Path, path: &Path) -> Result<RunOutcome> {
    let (grid, policy) = load_policy(config, path)?;
    let (summary, stats) = simulate_tabular(config, &grid, &policy, out)?;
    let estimate = GainEstimate {
        gamma: summary.gamma,
        method: GainMethod::MonteCarlo,
        residual: summary.se,
    };
    let mut gain = GainReport::new(config, Mode::Simulate, estimate);
    gain.se = Some(summary.se);
    gain.monte_carlo = Some(summary);
    Ok(RunOutcome {
        status: Status::Converged,
        gain,
        grid,
        policy,
        refined: None,
        stats: Some(stats),
    })
}

fn run_eval(config: &RunConfig, out: &Path, path: &Path) -> Result<RunOutcome> {
    let (grid, policy) = load_policy(config, path)?;
    let estimate = gain_of_policy(&config.model, &grid, &policy)?;
    let v = values_of(config, &grid, &policy)?;
    io::write_values(&out.join("values.csv"), &grid, &v, None)?;
    io::write_policy(&out.join("policy.csv"), &grid, &policy)?;
    Ok(RunOutcome {
        status: Status::Converged,
        gain: GainReport::new(config, Mode::EvalPolicy, estimate),
        grid,
        policy,
        refined: None,
        stats: None,
    })
}
