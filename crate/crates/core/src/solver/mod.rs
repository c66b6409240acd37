//! Average-reward dynamic programming on the lattice.
//!
//! Value tables and policies are stored flat, regime-major: entry
//! `regime * grid.len() + node`.

mod rvi;
mod stationary;

pub use rvi::{rvi_solve, rvi_solve_from, Centering, RviConfig, RviOutcome, RviVariant};
pub use stationary::{
    evaluate_policy, gain_of_policy, policy_values, stationary_distribution, ChainMatrix,
    PolicyEvaluation, StationaryMethod,
};

use serde::{Deserialize, Serialize};

use crate::lattice::{transitions, Grid, RowKind, TransitionRow};
use crate::model::{Control, Dynamics, ModelParams};

/// Values indexed by `(node, regime)`, with the reference state used for centering.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub nodes: usize,
    pub regimes: usize,
    pub values: Vec<f64>,
    /// `(node, regime)` of the reference state.
    pub reference: (usize, usize),
}

impl ValueTable {
    pub fn zeros(grid: &Grid, regimes: usize) -> Self {
        Self {
            nodes: grid.len(),
            regimes,
            values: vec![0.0; grid.len() * regimes],
            reference: (grid.origin_index(), 0),
        }
    }

    #[inline]
    pub fn get(&self, node: usize, regime: usize) -> f64 {
        self.values[regime * self.nodes + node]
    }

    pub fn regime_slice(&self, regime: usize) -> &[f64] {
        &self.values[regime * self.nodes..(regime + 1) * self.nodes]
    }

    /// Subtracts the reference value of each regime (or of the reference
    /// regime only, for [`Centering::Scalar`]).
    pub fn centered(&self, centering: Centering) -> Vec<f64> {
        let (y0, r0) = self.reference;
        let offsets: Vec<f64> = (0..self.regimes)
            .map(|l| match centering {
                Centering::PerRegime => self.get(y0, l),
                Centering::Scalar => self.get(y0, r0),
            })
            .collect();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v - offsets[k / self.nodes])
            .collect()
    }

    /// Sum of absolute entrywise differences.
    pub fn l1_distance(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn span(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    /// Linear interpolation onto `fine`, which must share the boundary of the
    /// grid this table was built on.
    pub fn prolongate(&self, coarse: &Grid, fine: &Grid) -> ValueTable {
        let mut values = Vec::with_capacity(fine.len() * self.regimes);
        for l in 0..self.regimes {
            let row = self.regime_slice(l);
            for &x in fine.nodes() {
                let t = (x - coarse.x(0)) / coarse.step();
                let k = (t.floor() as usize).min(coarse.len() - 2);
                let w = t - k as f64;
                values.push((1.0 - w) * row[k] + w * row[k + 1]);
            }
        }
        let (y0, r0) = self.reference;
        ValueTable {
            nodes: fine.len(),
            regimes: self.regimes,
            values,
            reference: (fine.nearest_index(coarse.x(y0)), r0),
        }
    }
}

/// A control per `(node, regime)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub nodes: usize,
    pub regimes: usize,
    pub controls: Vec<Control>,
}

impl TabularPolicy {
    /// The same control everywhere, canonicalized below the threshold.
    pub fn constant(grid: &Grid, params: &ModelParams, u: Control) -> Self {
        Self::from_fn(grid, params.regime_count(), |x, _| u.canonical(x, params))
    }

    pub fn from_fn(grid: &Grid, regimes: usize, mut f: impl FnMut(f64, usize) -> Control) -> Self {
        let mut controls = Vec::with_capacity(grid.len() * regimes);
        for l in 0..regimes {
            for &x in grid.nodes() {
                controls.push(f(x, l));
            }
        }
        Self {
            nodes: grid.len(),
            regimes,
            controls,
        }
    }

    #[inline]
    pub fn get(&self, node: usize, regime: usize) -> Control {
        self.controls[regime * self.nodes + node]
    }

    /// First entry (in regime-major order) that is not admissible at its node.
    pub fn first_inadmissible(&self, grid: &Grid, params: &ModelParams) -> Option<(usize, usize)> {
        (0..self.regimes)
            .flat_map(|l| (0..self.nodes).map(move |k| (k, l)))
            .find(|&(k, l)| {
                !params.is_admissible(crate::model::State::new(grid.x(k), l), &self.get(k, l))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    InvariantMeasure,
    MonteCarlo,
    RviResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub gamma: f64,
    pub method: GainMethod,
    /// Method-specific diagnostic: stationarity residual, Monte-Carlo
    /// standard error, or final sweep residual.
    pub residual: f64,
}

/// Points per control dimension for the finite action set searched by RVI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionResolution {
    pub retention: usize,
    pub risky: usize,
    pub dividend: usize,
}

impl Default for ActionResolution {
    fn default() -> Self {
        Self::uniform(11)
    }
}

impl ActionResolution {
    pub const fn uniform(n: usize) -> Self {
        Self {
            retention: n,
            risky: n,
            dividend: n,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| {
        if k + 1 == n {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        }
    })
}

/// Finite admissible action set at surplus `x`, in lexicographic `(a, s, l)` order.
///
/// The dividend axis is `{0}` followed by `resolution.dividend` points spanning
/// `[min_dividend, 1]`. Combinations with `s + l > 1` are dropped.
pub fn action_grid(params: &ModelParams, x: f64, resolution: ActionResolution) -> Vec<Control> {
    assert!(
        resolution.retention >= 2 && resolution.risky >= 2 && resolution.dividend >= 2,
        "action resolution must be at least 2 per dimension"
    );
    let retention: Vec<f64> = linspace(params.min_retention, 1.0, resolution.retention).collect();
    if x <= params.threshold {
        return retention
            .into_iter()
            .map(|a| Control::new(a, 0.0, 0.0))
            .collect();
    }
    let risky: Vec<f64> = linspace(0.0, params.max_risky, resolution.risky).collect();
    let dividend: Vec<f64> = std::iter::once(0.0)
        .chain(linspace(params.min_dividend, 1.0, resolution.dividend))
        .collect();
    let mut out = Vec::with_capacity(retention.len() * risky.len() * dividend.len());
    for &a in &retention {
        for &s in &risky {
            for &l in &dividend {
                if s + l <= 1.0 {
                    out.push(Control::new(a, s, l));
                } else if s + l <= 1.0 + 1e-12 && 1.0 - s >= params.min_dividend {
                    // grid rounding only; snap onto the constraint
                    out.push(Control::new(a, s, 1.0 - s));
                }
            }
        }
    }
    out
}

/// Expected next value plus the reward accrued over the step:
/// `Σ p · values + f · Δt`.
///
/// `values` is a flat table over the whole grid. Reflection rows simply copy
/// the neighbouring value.
pub fn bellman_backup<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    values: &[f64],
    node: usize,
    regime: usize,
    u: &Control,
) -> f64 {
    let row = transitions(model, grid, node, regime, u);
    let reward = match row.kind {
        RowKind::Interior => model.coefficients(grid.x(node), regime, u).reward,
        _ => 0.0,
    };
    expected_next(&row, grid.len(), values, node, regime) + reward * row.dt
}

/// `Σ p · values` for one row.
pub fn expected_next(
    row: &TransitionRow,
    nodes: usize,
    values: &[f64],
    node: usize,
    regime: usize,
) -> f64 {
    let base = regime * nodes;
    let mut acc = 0.0;
    if row.p_up != 0.0 {
        acc += row.p_up * values[base + node + 1];
    }
    if row.p_down != 0.0 {
        acc += row.p_down * values[base + node - 1];
    }
    for (j, &p) in row.p_switch.iter().enumerate() {
        if p != 0.0 {
            acc += p * values[j * nodes + node];
        }
    }
    acc
}

/// Linear extrapolation one step beyond each end of `values`:
/// `v(x₀ − h) = 2 v(x₀) − v(x₀ + h)` and its mirror image on the right.
pub fn boundary_extrapolate(values: &[f64]) -> (f64, f64) {
    assert!(values.len() >= 3, "extrapolation needs at least 3 nodes");
    let n = values.len();
    (
        2.0 * values[0] - values[1],
        2.0 * values[n - 1] - values[n - 2],
    )
}

/// How the two reflection nodes of each regime get their value after a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Copy the reflected-to neighbour (the chain's own reflection rows).
    #[default]
    Reflect,
    /// Extrapolate linearly from the two nearest interior nodes.
    Extrapolate,
}

pub(crate) fn apply_boundary_rule(
    rule: BoundaryRule,
    values: &mut [f64],
    nodes: usize,
    regimes: usize,
) {
    if rule == BoundaryRule::Reflect {
        return;
    }
    for l in 0..regimes {
        let row = &mut values[l * nodes..(l + 1) * nodes];
        let (left, right) = boundary_extrapolate(&row[1..nodes - 1]);
        row[0] = left;
        row[nodes - 1] = right;
    }
}
