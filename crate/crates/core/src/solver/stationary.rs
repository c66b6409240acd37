use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{
    BoundaryRule, Centering, GainEstimate, GainMethod, RviVariant, TabularPolicy, ValueTable,
};
use crate::error::{Error, Result};
use crate::lattice::{transitions, Grid, RowKind};
use crate::model::Dynamics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    #[default]
    LinearSolve,
    PowerIteration,
}

type Row = SmallVec<[(usize, f64); 4]>;

/// Sparse transition matrix of the chain under a fixed policy, with the
/// per-state interpolation interval and reward rate.
#[derive(Debug, Clone)]
pub struct ChainMatrix {
    pub rows: Vec<Row>,
    pub dt: Vec<f64>,
    pub reward: Vec<f64>,
}

impl ChainMatrix {
    pub fn for_policy<D: Dynamics + ?Sized>(
        model: &D,
        grid: &Grid,
        policy: &TabularPolicy,
    ) -> Self {
        let n = grid.len();
        let m = model.params().regime_count();
        assert_eq!(policy.nodes, n, "policy was built for another grid");
        let mut rows = Vec::with_capacity(n * m);
        let mut dt = Vec::with_capacity(n * m);
        let mut reward = Vec::with_capacity(n * m);
        for l in 0..m {
            for k in 0..n {
                let u = policy.get(k, l);
                let tr = transitions(model, grid, k, l, &u);
                let s = l * n + k;
                let mut row = Row::new();
                if tr.p_up > 0.0 {
                    row.push((s + 1, tr.p_up));
                }
                if tr.p_down > 0.0 {
                    row.push((s - 1, tr.p_down));
                }
                for (j, &p) in tr.p_switch.iter().enumerate() {
                    if p > 0.0 {
                        row.push((j * n + k, p));
                    }
                }
                rows.push(row);
                dt.push(tr.dt);
                reward.push(match tr.kind {
                    RowKind::Interior => model.coefficients(grid.x(k), l, &u).reward,
                    _ => 0.0,
                });
            }
        }
        Self { rows, dt, reward }
    }

    /// A bare chain, for tests and examples; every state gets `dt = 1`, reward 0.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        Self {
            rows: rows.into_iter().map(Row::from_vec).collect(),
            dt: vec![1.0; n],
            reward: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `ν P`.
    pub fn left_mul(&self, nu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, row) in self.rows.iter().enumerate() {
            let w = nu[s];
            for &(t, p) in row {
                out[t] += w * p;
            }
        }
    }

    /// `‖ν P − ν‖_∞`.
    pub fn stationarity_residual(&self, nu: &[f64]) -> f64 {
        let mut next = vec![0.0; nu.len()];
        self.left_mul(nu, &mut next);
        next.iter()
            .zip(nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(n, n);
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, w) in row {
                p[(s, t)] += w;
            }
        }
        p
    }
}

/// Invariant probability vector of the chain.
pub fn stationary_distribution(chain: &ChainMatrix, method: StationaryMethod) -> Result<Vec<f64>> {
    let nu = match method {
        StationaryMethod::LinearSolve => solve_stationary(chain)?,
        StationaryMethod::PowerIteration => power_stationary(chain, 1e-15, 20_000_000),
    };
    let total: f64 = nu.iter().sum();
    if !((total - 1.0).abs() < 1e-10) || nu.iter().any(|&v| !(v >= -1e-12)) {
        return Err(Error::NumericalRank(format!(
            "solution is not a probability vector (sum {total})"
        )));
    }
    let residual = chain.stationarity_residual(&nu);
    if !(residual < 1e-9) {
        return Err(Error::NumericalRank(format!(
            "stationarity residual {residual:e} too large; chain may be reducible"
        )));
    }
    Ok(nu)
}

fn solve_stationary(chain: &ChainMatrix) -> Result<Vec<f64>> {
    let n = chain.len();
    // (Pᵀ − I) ν = 0 with the last equation replaced by Σ ν = 1
    let mut a = chain.dense().transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let nu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NumericalRank("singular stationary system".into()))?;
    let mut nu: Vec<f64> = nu
        .iter()
        .map(|&v| if v.abs() < 1e-300 { 0.0 } else { v })
        .collect();
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalRank(
            "non-finite stationary solution".into(),
        ));
    }
    // clear round-off negatives, then renormalize
    nu.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= total);
    Ok(nu)
}

/// Power iteration on the lazy chain `(I + P) / 2`, which shares the
/// invariant measure of `P` but is aperiodic.
fn power_stationary(chain: &ChainMatrix, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = chain.len();
    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        chain.left_mul(&nu, &mut next);
        let mut diff = 0.0;
        for (a, b) in next.iter_mut().zip(&nu) {
            *a = 0.5 * (*a + b);
            diff += (*a - b).abs();
        }
        std::mem::swap(&mut nu, &mut next);
        if diff < tol {
            break;
        }
    }
    let total: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|v| *v /= total);
    nu
}

/// Everything the invariant measure says about one policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    /// Invariant measure of the embedded chain.
    pub nu: Vec<f64>,
    /// Time-weighted measure `Δt ν / Σ Δt ν`.
    pub omega: Vec<f64>,
    /// `Σ f Δt ν / Σ Δt ν`.
    pub gain_ratio: f64,
    /// `Σ f ω`.
    pub gain_weighted: f64,
    pub residual: f64,
}

pub fn evaluate_policy<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    policy: &TabularPolicy,
    method: StationaryMethod,
) -> Result<PolicyEvaluation> {
    let chain = ChainMatrix::for_policy(model, grid, policy);
    evaluate_chain(&chain, method)
}

pub(crate) fn evaluate_chain(
    chain: &ChainMatrix,
    method: StationaryMethod,
) -> Result<PolicyEvaluation> {
    let nu = stationary_distribution(chain, method)?;
    let time: f64 = chain.dt.iter().zip(&nu).map(|(d, v)| d * v).sum();
    let earned: f64 = chain
        .dt
        .iter()
        .zip(&nu)
        .zip(&chain.reward)
        .map(|((d, v), f)| f * d * v)
        .sum();
    let omega: Vec<f64> = chain
        .dt
        .iter()
        .zip(&nu)
        .map(|(d, v)| d * v / time)
        .collect();
    let gain_weighted = omega.iter().zip(&chain.reward).map(|(w, f)| w * f).sum();
    let residual = chain.stationarity_residual(&nu);
    Ok(PolicyEvaluation {
        nu,
        omega,
        gain_ratio: earned / time,
        gain_weighted,
        residual,
    })
}

/// Long-run average reward of `policy` from the time-weighted invariant measure.
pub fn gain_of_policy<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    policy: &TabularPolicy,
) -> Result<GainEstimate> {
    let ev = evaluate_policy(model, grid, policy, StationaryMethod::LinearSolve)?;
    Ok(GainEstimate {
        gamma: ev.gain_ratio,
        method: GainMethod::InvariantMeasure,
        residual: ev.residual,
    })
}

/// Exact fixed point of the centered backup under a fixed policy, i.e. what
/// relative value iteration would converge to if the policy never changed.
///
/// For [`RviVariant::Paper`] this solves `V = P (V − c(V)) + f Δt`, where
/// `c(V)` is the reference value used for centering. For
/// [`RviVariant::SemiMdp`] it solves `V = P V + (f − γ) Δt` jointly for `V`
/// and `γ` with `V(y₀, α_ref) = 0`; under reflecting edges that `γ` is the
/// policy's gain, returned alongside the table.
pub fn policy_values<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    policy: &TabularPolicy,
    variant: RviVariant,
    centering: Centering,
    boundary: BoundaryRule,
    reference: (usize, usize),
) -> Result<(ValueTable, Option<f64>)> {
    let chain = ChainMatrix::for_policy(model, grid, policy);
    let n = grid.len();
    let m = model.params().regime_count();
    let size = n * m;
    let (y0, r0) = reference;
    let ref_of = |state: usize| match centering {
        Centering::PerRegime => (state / n) * n + y0,
        Centering::Scalar => r0 * n + y0,
    };
    // the semi-MDP system carries the gain as one extra unknown, pinned by V(y₀, α_ref) = 0
    let unknowns = if variant == RviVariant::SemiMdp {
        size + 1
    } else {
        size
    };
    let mut a = DMatrix::<f64>::identity(unknowns, unknowns);
    let mut rhs = DVector::<f64>::zeros(unknowns);
    for (s, row) in chain.rows.iter().enumerate() {
        for &(t, p) in row {
            a[(s, t)] -= p;
            if variant == RviVariant::Paper {
                a[(s, ref_of(t))] += p;
            }
        }
        rhs[s] = chain.reward[s] * chain.dt[s];
        if variant == RviVariant::SemiMdp {
            a[(s, size)] = chain.dt[s];
        }
    }
    if boundary == BoundaryRule::Extrapolate {
        for l in 0..m {
            for (edge, inner, inner2) in [(0, 1, 2), (n - 1, n - 2, n - 3)] {
                let s = l * n;
                for j in 0..unknowns {
                    a[(s + edge, j)] = 0.0;
                }
                a[(s + edge, s + edge)] = 1.0;
                a[(s + edge, s + inner)] = -2.0;
                a[(s + edge, s + inner2)] = 1.0;
                rhs[s + edge] = 0.0;
            }
        }
    }
    if variant == RviVariant::SemiMdp {
        a[(size, size)] = 0.0;
        a[(size, r0 * n + y0)] = 1.0;
    }
    let v = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalRank("singular policy-evaluation system".into()))?;
    let table = ValueTable {
        nodes: n,
        regimes: m,
        values: v.iter().take(size).copied().collect(),
        reference,
    };
    Ok((table, (variant == RviVariant::SemiMdp).then(|| v[size])))
}
