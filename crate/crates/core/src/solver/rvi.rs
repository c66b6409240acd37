use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    action_grid, apply_boundary_rule, gain_of_policy, ActionResolution, BoundaryRule, GainEstimate,
    GainMethod, TabularPolicy, ValueTable,
};
use crate::error::{Error, Result};
use crate::lattice::{transitions, Grid};
use crate::model::{Control, Dynamics};

/// Which recursion the relative value iteration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RviVariant {
    /// `U ← max_u [Σ p Ũ + f Δt]` with `Ũ = U − U(y₀, ·)`: centering by the
    /// reference value, no explicit gain term.
    #[default]
    Paper,
    /// `U ← max_u [(f − γ_t) Δt + Σ p U]` with the gain estimate
    /// `γ_t = (TU − U)(y₀, α_ref) / Δt(y₀, α_ref, u*)`, where `u*` is the
    /// maximizer of the backup with `γ_t` already subtracted.
    SemiMdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Subtract `U(y₀, l)` within each regime `l`.
    #[default]
    PerRegime,
    /// Subtract the single value `U(y₀, α_ref)` everywhere.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RviConfig {
    pub resolution: ActionResolution,
    /// Stop once the sup-norm change between sweeps drops below this.
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub variant: RviVariant,
    pub centering: Centering,
    pub boundary: BoundaryRule,
    /// `(node, regime)` used for centering; defaults to `(x = 0, regime 0)`.
    pub reference: Option<(usize, usize)>,
    /// Weight `τ ∈ (0, 1]` of the new backup in `U ← (1 − τ) U + τ T U`.
    /// Values below one damp the oscillation of periodic chains and of
    /// argmax switching between sweeps without moving the fixed point.
    pub relaxation: f64,
}

impl Default for RviConfig {
    fn default() -> Self {
        Self {
            resolution: ActionResolution::default(),
            epsilon: 1e-6,
            max_sweeps: 100_000,
            variant: RviVariant::default(),
            centering: Centering::default(),
            boundary: BoundaryRule::default(),
            reference: None,
            relaxation: 0.5,
        }
    }
}

impl RviConfig {
    pub fn validate_at(&self, prefix: &str) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let r = self.resolution;
        for (name, n) in [
            ("retention", r.retention),
            ("risky", r.risky),
            ("dividend", r.dividend),
        ] {
            if n < 2 {
                errs.push(format!(
                    "{prefix}resolution.{name}: must be at least 2, got {n}"
                ));
            }
        }
        if !(self.epsilon > 0.0) {
            errs.push(format!(
                "{prefix}epsilon: must be > 0, got {}",
                self.epsilon
            ));
        }
        if self.max_sweeps == 0 {
            errs.push(format!("{prefix}max_sweeps: must be at least 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            errs.push(format!(
                "{prefix}relaxation: must lie in (0, 1], got {}",
                self.relaxation
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RviOutcome {
    pub policy: TabularPolicy,
    pub values: ValueTable,
    /// Exact gain of `policy` via the invariant measure.
    pub gain: GainEstimate,
    /// Gain implied by the iteration itself at the reference state; only a
    /// diagnostic, it differs from `gain` when `Δt` varies across states.
    pub iteration_gain: GainEstimate,
    pub sweeps: usize,
    /// Largest span `max U − min U` seen over all sweeps.
    pub max_span: f64,
}

/// Per-action quantities that do not change between sweeps.
struct ActionTable {
    controls: Vec<Control>,
    up: Vec<f64>,
    down: Vec<f64>,
    dt: Vec<f64>,
    reward_dt: Vec<f64>,
}

enum StateKind {
    Interior(ActionTable),
    /// Copies the value of the given flat index.
    Reflect(usize),
}

fn build_tables<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    resolution: ActionResolution,
) -> Vec<StateKind> {
    let p = model.params();
    let n = grid.len();
    (0..p.regime_count() * n)
        .into_par_iter()
        .map(|s| {
            let (l, k) = (s / n, s % n);
            if k == 0 {
                return StateKind::Reflect(s + 1);
            }
            if k + 1 == n {
                return StateKind::Reflect(s - 1);
            }
            let x = grid.x(k);
            let controls = action_grid(p, x, resolution);
            let m = controls.len();
            let mut t = ActionTable {
                controls,
                up: Vec::with_capacity(m),
                down: Vec::with_capacity(m),
                dt: Vec::with_capacity(m),
                reward_dt: Vec::with_capacity(m),
            };
            for u in &t.controls {
                let row = transitions(model, grid, k, l, u);
                let f = model.coefficients(x, l, u).reward;
                t.up.push(row.p_up);
                t.down.push(row.p_down);
                t.dt.push(row.dt);
                t.reward_dt.push(f * row.dt);
            }
            StateKind::Interior(t)
        })
        .collect()
}

/// Best action at one interior state. The switching term is `Δt · Σ_j q_ij U_j`,
/// so it enters each action linearly through `Δt`. Ties go to the earliest
/// (lexicographically smallest) action.
#[inline]
fn best_action(
    t: &ActionTable,
    up_val: f64,
    down_val: f64,
    switch_val: f64,
    gain: f64,
) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for a in 0..t.up.len() {
        let s = t.up[a] * up_val
            + t.down[a] * down_val
            + t.dt[a] * (switch_val - gain)
            + t.reward_dt[a];
        if s > best {
            best = s;
            arg = a;
        }
    }
    (best, arg)
}

/// Gain `γ` with `max_u [S_u − γ Δt_u] = U(y₀)` at the reference state, so the
/// action defining `γ` is also the maximizer after `γ` is subtracted.
/// Dinkelbach iteration: the left side is convex and decreasing in `γ`.
fn reference_gain(
    t: &ActionTable,
    up_val: f64,
    down_val: f64,
    switch_val: f64,
    current: f64,
) -> f64 {
    let (tu, mut a) = best_action(t, up_val, down_val, switch_val, 0.0);
    let mut gain = (tu - current) / t.dt[a];
    for _ in 0..100 {
        let (_, next) = best_action(t, up_val, down_val, switch_val, gain);
        if next == a {
            break;
        }
        a = next;
        let s = t.up[a] * up_val + t.down[a] * down_val + t.dt[a] * switch_val + t.reward_dt[a];
        gain = (s - current) / t.dt[a];
    }
    gain
}

fn switch_sum(q: &[Vec<f64>], values: &[f64], n: usize, k: usize, l: usize) -> f64 {
    q[l].iter()
        .enumerate()
        .filter(|&(j, _)| j != l)
        .map(|(j, &rate)| rate * values[j * n + k])
        .sum()
}

/// Relative value iteration on `grid`, starting from zero.
pub fn rvi_solve<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    config: &RviConfig,
) -> Result<RviOutcome> {
    rvi_solve_from(model, grid, config, None)
}

/// Relative value iteration warm-started from `initial` when given.
pub fn rvi_solve_from<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    config: &RviConfig,
    initial: Option<&ValueTable>,
) -> Result<RviOutcome> {
    let p = model.params();
    let n = grid.len();
    let m = p.regime_count();
    let (y0, r0) = config.reference.unwrap_or((grid.origin_index(), 0));
    assert!(
        grid.is_interior(y0) && r0 < m,
        "reference state must be interior"
    );
    assert!(
        config.relaxation > 0.0 && config.relaxation <= 1.0,
        "relaxation must lie in (0, 1]"
    );
    let q = &p.generator;
    let tables = build_tables(model, grid, config.resolution);

    let mut table = ValueTable::zeros(grid, m);
    table.reference = (y0, r0);
    if let Some(init) = initial {
        assert_eq!(
            init.values.len(),
            table.values.len(),
            "warm start has the wrong shape"
        );
        table.values.copy_from_slice(&init.values);
    }
    let mut argmax = vec![0usize; n * m];
    let mut max_span = table.span();
    let mut residual = f64::INFINITY;

    for sweep in 1..=config.max_sweeps {
        let (source, gain) = match config.variant {
            RviVariant::Paper => (table.centered(config.centering), 0.0),
            RviVariant::SemiMdp => {
                let s0 = r0 * n + y0;
                let StateKind::Interior(t) = &tables[s0] else {
                    unreachable!()
                };
                let v = &table.values;
                let g = reference_gain(t, v[s0 + 1], v[s0 - 1], switch_sum(q, v, n, y0, r0), v[s0]);
                (table.values.clone(), g)
            }
        };
        let updates: Vec<(f64, usize)> = tables
            .par_iter()
            .enumerate()
            .map(|(s, kind)| match kind {
                StateKind::Reflect(to) => (source[*to], 0),
                StateKind::Interior(t) => {
                    let (l, k) = (s / n, s % n);
                    best_action(
                        t,
                        source[s + 1],
                        source[s - 1],
                        switch_sum(q, &source, n, k, l),
                        gain,
                    )
                }
            })
            .collect();
        let tau = config.relaxation;
        let mut next: Vec<f64> = if tau == 1.0 {
            updates.iter().map(|u| u.0).collect()
        } else {
            updates
                .iter()
                .zip(&table.values)
                .map(|(u, old)| (1.0 - tau) * old + tau * u.0)
                .collect()
        };
        for (slot, u) in argmax.iter_mut().zip(&updates) {
            *slot = u.1;
        }
        apply_boundary_rule(config.boundary, &mut next, n, m);
        let iteration_gain = if config.variant == RviVariant::SemiMdp {
            let shift = next[r0 * n + y0];
            next.iter_mut().for_each(|v| *v -= shift);
            gain
        } else {
            let s0 = r0 * n + y0;
            let StateKind::Interior(t) = &tables[s0] else {
                unreachable!()
            };
            next[s0] / t.dt[argmax[s0]]
        };
        residual = next
            .iter()
            .zip(&table.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        table.values = next;
        max_span = max_span.max(table.span());
        if !residual.is_finite() {
            return Err(Error::NonConvergence {
                sweeps: sweep,
                residual,
            });
        }
        if residual < config.epsilon {
            let policy = extract_policy(&tables, &argmax, grid, p, m);
            let gain = gain_of_policy(model, grid, &policy)?;
            log::debug!(
                "rvi converged after {sweep} sweeps, residual {residual:e}, gain {}",
                gain.gamma
            );
            return Ok(RviOutcome {
                policy,
                values: table,
                gain,
                iteration_gain: GainEstimate {
                    gamma: iteration_gain,
                    method: GainMethod::RviResidual,
                    residual,
                },
                sweeps: sweep,
                max_span,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: config.max_sweeps,
        residual,
    })
}

fn extract_policy(
    tables: &[StateKind],
    argmax: &[usize],
    grid: &Grid,
    params: &crate::model::ModelParams,
    regimes: usize,
) -> TabularPolicy {
    let n = grid.len();
    let interior = |s: usize| match &tables[s] {
        StateKind::Interior(t) => t.controls[argmax[s]],
        StateKind::Reflect(_) => unreachable!(),
    };
    TabularPolicy::from_fn(grid, regimes, |x, l| {
        let k = grid.nearest_index(x);
        let s = l * n + k.clamp(1, n - 2);
        interior(s).canonical(x, params)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstantReward, ModelParams};
    use crate::solver::gain_of_policy;
    use approx::assert_abs_diff_eq;

    fn small() -> (ModelParams, Grid) {
        let mut p = ModelParams::table1();
        p.boundary = 3.0;
        (p, Grid::new(3.0, 0.5, 2.0).unwrap())
    }

    #[test]
    fn constant_reward_gives_constant_gain() {
        let (p, g) = small();
        let hooked = ConstantReward {
            inner: &p,
            value: 0.37,
        };
        let cfg = RviConfig {
            resolution: ActionResolution::uniform(3),
            ..Default::default()
        };
        let out = rvi_solve(&hooked, &g, &cfg).unwrap();
        assert_abs_diff_eq!(out.gain.gamma, 0.37, epsilon = 1e-10);
    }

    #[test]
    fn single_action_matches_forced_policy() {
        // one regime, five nodes, every interior node at or below the
        // threshold and a single retention level
        let mut p = ModelParams::table1();
        p.regimes.truncate(1);
        p.generator = vec![vec![0.0]];
        p.boundary = 1.0;
        p.threshold = 1.0;
        p.min_retention = 1.0;
        let g = Grid::new(1.0, 1.0, 1.0).unwrap();
        // without switching the walk has period two
        let cfg = RviConfig {
            resolution: ActionResolution::uniform(2),
            epsilon: 1e-12,
            relaxation: 0.5,
            ..Default::default()
        };
        let out = rvi_solve(&p, &g, &cfg).unwrap();
        let forced = TabularPolicy::constant(&g, &p, Control::new(1.0, 0.0, 0.0));
        assert_eq!(out.policy, forced);
        let direct = gain_of_policy(&p, &g, &forced).unwrap();
        assert_abs_diff_eq!(out.gain.gamma, direct.gamma, epsilon = 1e-10);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let (p, g) = small();
        let cfg = RviConfig {
            resolution: ActionResolution::uniform(2),
            max_sweeps: 3,
            ..Default::default()
        };
        match rvi_solve(&p, &g, &cfg) {
            Err(Error::NonConvergence {
                sweeps: 3,
                residual,
            }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
