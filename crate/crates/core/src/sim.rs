//! Monte-Carlo simulation of the controlled surplus under a feedback policy.
//!
//! Euler–Maruyama in the surplus, first-order switching probabilities
//! `q_ij Δt` for the regime, and reflection at `±B` by mirroring the step
//! (or, optionally, by clamping it).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::model::{Control, Dynamics, ModelParams, State};
use crate::refine::PolicyNet;
use crate::solver::{evaluate_policy, StationaryMethod, TabularPolicy};

/// Anything that returns a control for a surplus level and regime.
pub trait FeedbackPolicy: Sync {
    fn control(&self, x: f64, regime: usize) -> Control;
}

/// A tabular policy read at the nearest node of its grid.
#[derive(Debug, Clone, Copy)]
pub struct NearestNode<'a> {
    pub grid: &'a Grid,
    pub policy: &'a TabularPolicy,
}

impl FeedbackPolicy for NearestNode<'_> {
    fn control(&self, x: f64, regime: usize) -> Control {
        self.policy.get(self.grid.nearest_index(x), regime)
    }
}

/// The same control everywhere, canonicalized at or below the threshold.
#[derive(Debug, Clone, Copy)]
pub struct Constant<'a> {
    pub params: &'a ModelParams,
    pub control: Control,
}

impl FeedbackPolicy for Constant<'_> {
    fn control(&self, x: f64, _regime: usize) -> Control {
        self.control.canonical(x, self.params)
    }
}

/// Evaluates the net at every step. Much slower than tabulating it first.
#[derive(Debug, Clone, Copy)]
pub struct NetFeedback<'a> {
    pub params: &'a ModelParams,
    pub net: &'a PolicyNet,
}

impl FeedbackPolicy for NetFeedback<'_> {
    fn control(&self, x: f64, regime: usize) -> Control {
        self.net.forward(self.params, x, regime)
    }
}

/// How a step that leaves `[−B, B]` is brought back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    /// Fold the overshoot back inside: `x ↦ 2B − x`. First-order accurate
    /// in the step for time averages.
    #[default]
    Mirror,
    /// Project onto the boundary. Simpler, but the path sticks to `±B` and
    /// time averages carry an `O(√Δt)` bias.
    Clamp,
}

impl Reflection {
    pub fn apply(self, x: f64, boundary: f64) -> f64 {
        let folded = match self {
            Reflection::Mirror if x > boundary => 2.0 * boundary - x,
            Reflection::Mirror if x < -boundary => -2.0 * boundary - x,
            _ => x,
        };
        // an overshoot of more than 2B still lands on the boundary
        folded.clamp(-boundary, boundary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Euler step.
    pub dt: f64,
    /// Simulated time per path, burn-in included.
    pub horizon: f64,
    /// Initial stretch of each path left out of every statistic.
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub initial_x: f64,
    pub initial_regime: usize,
    /// Spacing of the running-average trace, in time units.
    pub trace_every: f64,
    pub reflection: Reflection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 2e5,
            burn_in: 1e4,
            n_paths: 16,
            seed: 0,
            initial_x: 0.0,
            initial_regime: 0,
            trace_every: 1e3,
            reflection: Reflection::Mirror,
        }
    }
}

impl SimConfig {
    pub fn validate_at(
        &self,
        params: &ModelParams,
        prefix: &str,
    ) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0) {
            errs.push(format!("{prefix}dt: must be positive, got {}", self.dt));
        } else {
            let fastest = (0..params.regime_count())
                .map(|i| -params.rate(i, i))
                .fold(0.0, f64::max);
            if self.dt * fastest >= 0.1 {
                errs.push(format!(
                    "{prefix}dt: dt * max|q_ii| = {} must stay below 0.1",
                    self.dt * fastest
                ));
            }
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            errs.push(format!(
                "{prefix}burn_in: need 0 <= burn_in < horizon, got {} and {}",
                self.burn_in, self.horizon
            ));
        }
        if self.n_paths == 0 {
            errs.push(format!("{prefix}n_paths: must be at least 1"));
        }
        if self.initial_regime >= params.regime_count() {
            errs.push(format!(
                "{prefix}initial_regime: {} is not below the regime count {}",
                self.initial_regime,
                params.regime_count()
            ));
        }
        if !(self.initial_x.abs() <= params.boundary) {
            errs.push(format!(
                "{prefix}initial_x: {} lies outside [-B, B]",
                self.initial_x
            ));
        }
        if !(self.trace_every > 0.0) {
            errs.push(format!("{prefix}trace_every: must be positive"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        self.validate_at(params, "")
            .map_err(|e| Error::SimConfig(e.join("; ")))
    }
}

/// One Euler step with the normal draw `z` and the uniform draw `uniform`
/// supplied by the caller. The regime switches to `j` when `uniform` falls
/// in the `j`-th slice of width `q_ij Δt`.
pub fn step_with<D: Dynamics + ?Sized>(
    model: &D,
    state: State,
    u: &Control,
    dt: f64,
    z: f64,
    uniform: f64,
    reflection: Reflection,
) -> State {
    let p = model.params();
    let c = model.coefficients(state.x, state.regime, u);
    let x = state.x + c.drift * dt + c.diffusion_sq.sqrt() * dt.sqrt() * z;
    let mut regime = state.regime;
    let mut edge = 0.0;
    for j in 0..p.regime_count() {
        if j == state.regime {
            continue;
        }
        edge += p.rate(state.regime, j) * dt;
        if uniform < edge {
            regime = j;
            break;
        }
    }
    State::new(reflection.apply(x, p.boundary), regime)
}

pub fn step<D: Dynamics + ?Sized, R: Rng + ?Sized>(
    model: &D,
    state: State,
    u: &Control,
    dt: f64,
    reflection: Reflection,
    rng: &mut R,
) -> Result<State> {
    let p = model.params();
    let fastest = (0..p.regime_count())
        .map(|i| -p.rate(i, i))
        .fold(0.0, f64::max);
    if !(dt > 0.0 && dt * fastest < 0.1) {
        return Err(Error::SimConfig(format!(
            "dt = {dt} violates 0 < dt * max|q_ii| < 0.1"
        )));
    }
    let z: f64 = rng.sample(StandardNormal);
    let uniform: f64 = rng.random();
    Ok(step_with(model, state, u, dt, z, uniform, reflection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// Mean over paths of each path's post-burn-in time average of `f`.
    pub time_avg_reward: f64,
    /// Standard error of that mean across paths; zero for a single path.
    pub std_error: f64,
    pub per_path: Vec<f64>,
    /// Time fraction per `(nearest node, regime)`, regime-major over the
    /// binning grid. Sums to one.
    pub occupation: Vec<f64>,
    pub regime_fractions: Vec<f64>,
    /// Standard error across paths of each regime fraction.
    pub regime_fraction_se: Vec<f64>,
    /// Running time average per path at multiples of `trace_every`.
    pub traces: Vec<Vec<(f64, f64)>>,
}

struct PathResult {
    average: f64,
    occupation: Vec<f64>,
    regime_time: Vec<f64>,
    trace: Vec<(f64, f64)>,
}

fn run_path<D: Dynamics + ?Sized, P: FeedbackPolicy + ?Sized>(
    model: &D,
    policy: &P,
    bins: &Grid,
    config: &SimConfig,
    path: usize,
) -> PathResult {
    let p = model.params();
    let m = p.regime_count();
    let nodes = bins.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(path as u64);
    let steps = (config.horizon / config.dt).round() as u64;
    let burn = (config.burn_in / config.dt).round() as u64;
    let every = ((config.trace_every / config.dt).round() as u64).max(1);
    let mut state = State::new(config.initial_x, config.initial_regime);
    let mut occupation = vec![0u64; nodes * m];
    let mut regime_steps = vec![0u64; m];
    let mut earned = 0.0;
    let mut trace = Vec::new();
    for k in 0..steps {
        let u = policy.control(state.x, state.regime);
        if k >= burn {
            let counted = k - burn + 1;
            earned += model.coefficients(state.x, state.regime, &u).reward;
            occupation[state.regime * nodes + bins.nearest_index(state.x)] += 1;
            regime_steps[state.regime] += 1;
            if counted % every == 0 {
                trace.push((counted as f64 * config.dt, earned / counted as f64));
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        let uniform: f64 = rng.random();
        state = step_with(model, state, &u, config.dt, z, uniform, config.reflection);
    }
    let counted = (steps - burn.min(steps)).max(1) as f64;
    PathResult {
        average: earned / counted,
        occupation: occupation.iter().map(|&c| c as f64 / counted).collect(),
        regime_time: regime_steps.iter().map(|&c| c as f64 / counted).collect(),
        trace,
    }
}

/// Sample mean and its standard error; the error is zero for one sample.
fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Simulates `config.n_paths` independent paths in parallel. Path `k` draws
/// from stream `k` of a ChaCha generator seeded with `config.seed`, so the
/// result does not depend on the thread count. Occupation is binned on the
/// nodes of `bins`.
pub fn simulate<D: Dynamics + ?Sized, P: FeedbackPolicy + ?Sized>(
    model: &D,
    policy: &P,
    bins: &Grid,
    config: &SimConfig,
) -> Result<PathStats> {
    let p = model.params();
    config.check(p)?;
    let results: Vec<PathResult> = (0..config.n_paths)
        .into_par_iter()
        .map(|k| run_path(model, policy, bins, config, k))
        .collect();
    let n = results.len() as f64;
    let per_path: Vec<f64> = results.iter().map(|r| r.average).collect();
    let (mean, std_error) = mean_and_se(&per_path);
    let mut occupation = vec![0.0; results[0].occupation.len()];
    for r in &results {
        occupation
            .iter_mut()
            .zip(&r.occupation)
            .for_each(|(a, b)| *a += b / n);
    }
    let (regime_fractions, regime_fraction_se) = (0..p.regime_count())
        .map(|l| mean_and_se(&results.iter().map(|r| r.regime_time[l]).collect::<Vec<_>>()))
        .unzip();
    Ok(PathStats {
        time_avg_reward: mean,
        std_error,
        per_path,
        occupation,
        regime_fractions,
        regime_fraction_se,
        traces: results.into_iter().map(|r| r.trace).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationReport {
    /// `max_k |occupation(k, l) − ω(k, l)|` for each regime `l`.
    pub per_regime: Vec<f64>,
    /// The chain's time-weighted invariant measure on the same bins.
    pub omega: Vec<f64>,
    pub stats: PathStats,
}

/// Compares the simulated occupation of a tabular policy with the
/// time-weighted invariant measure of the lattice chain under that policy.
pub fn occupation_vs_stationary<D: Dynamics + ?Sized>(
    model: &D,
    policy: &TabularPolicy,
    grid: &Grid,
    config: &SimConfig,
) -> Result<OccupationReport> {
    let ev = evaluate_policy(model, grid, policy, StationaryMethod::LinearSolve)?;
    let stats = simulate(model, &NearestNode { grid, policy }, grid, config)?;
    let n = grid.len();
    let per_regime = (0..model.params().regime_count())
        .map(|l| {
            (l * n..(l + 1) * n)
                .map(|s| (stats.occupation[s] - ev.omega[s]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(OccupationReport {
        per_regime,
        omega: ev.omega,
        stats,
    })
}
