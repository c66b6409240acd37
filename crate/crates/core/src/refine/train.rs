use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{heads, squash, PolicyNet};
use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::model::{Dynamics, ModelParams};
use crate::solver::{Centering, RviVariant, TabularPolicy, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Step size `h₁`, halved whenever a step is rejected.
    pub learning_rate: f64,
    /// Fitting stops once an accepted step improves the loss by less than this.
    pub fit_tolerance: f64,
    /// Ascent stops once an accepted step changes `G` by less than this.
    pub ascent_tolerance: f64,
    pub fit_epochs: usize,
    pub ascent_epochs: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            fit_tolerance: 1e-9,
            ascent_tolerance: 1e-7,
            fit_epochs: 5000,
            ascent_epochs: 2000,
            width: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate_at(&self, prefix: &str) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("fit_tolerance", self.fit_tolerance),
            ("ascent_tolerance", self.ascent_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{prefix}{name}: must be positive, got {v}"));
            }
        }
        if self.width == 0 {
            errs.push(format!("{prefix}width: must be at least 1"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Adam moments; the step size itself comes from the caller.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Candidate parameters `θ + sign · rate · m̂ / (√v̂ + ε)`. Moments are
    /// updated whether or not the caller keeps the step.
    fn propose(&mut self, theta: &[f64], grad: &[f64], rate: f64, sign: f64) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        theta
            .iter()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|((&th, &g), (m, v))| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                th + sign * rate * (*m / c1) / ((*v / c2).sqrt() + 1e-8)
            })
            .collect()
    }
}

/// One fitting sample: a node, its regime and the target control there.
#[derive(Debug, Clone, Copy)]
struct Sample {
    x: f64,
    regime: usize,
    target: [f64; 3],
}

fn samples(policy: &TabularPolicy, grid: &Grid) -> Vec<Sample> {
    let mut out = Vec::new();
    for l in 0..policy.regimes {
        for k in grid.interior() {
            out.push(Sample {
                x: grid.x(k),
                regime: l,
                target: policy.get(k, l).as_array(),
            });
        }
    }
    out
}

/// Squared error of the squashed heads against one target. Above the
/// threshold all three heads count, with the dividend head taken before the
/// snap to zero; below it only the retention head has any effect.
fn sample_loss(params: &ModelParams, sample: &Sample, raw: [f64; 3]) -> (f64, [f64; 3]) {
    let h = heads(params, raw);
    let out = [h.retention, h.risky, h.dividend];
    let active = if sample.x > params.threshold { 3 } else { 1 };
    let mut loss = 0.0;
    let mut d_raw = [0.0; 3];
    for c in 0..active {
        let diff = out[c] - sample.target[c];
        loss += diff * diff;
        d_raw[c] = 2.0 * diff * h.slope[c];
    }
    (loss, d_raw)
}

const CHUNK: usize = 16;

/// Mean fitting loss and, when asked, its gradient. Chunks are reduced in a
/// fixed order so the result does not depend on the thread count.
fn fit_loss(
    net: &PolicyNet,
    params: &ModelParams,
    data: &[Sample],
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let n = net.param_count();
    let parts: Vec<(f64, Vec<f64>)> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = if with_grad { vec![0.0; n] } else { Vec::new() };
            let mut loss = 0.0;
            for s in chunk {
                let trace = net.trace(s.x, s.regime);
                let (l, d_raw) = sample_loss(params, s, trace.raw);
                loss += l;
                if with_grad {
                    net.backward(&trace, d_raw, &mut grad);
                }
            }
            (loss, grad)
        })
        .collect();
    reduce(parts, n, with_grad, data.len())
}

fn reduce(parts: Vec<(f64, Vec<f64>)>, n: usize, with_grad: bool, count: usize) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut grad = if with_grad { vec![0.0; n] } else { Vec::new() };
    for (l, g) in parts {
        total += l;
        if with_grad {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (total * scale, grad)
}

/// Mean squared error of the net against `policy` on the interior nodes of `grid`.
pub fn fit_loss_value(
    net: &PolicyNet,
    params: &ModelParams,
    policy: &TabularPolicy,
    grid: &Grid,
) -> f64 {
    fit_loss(net, params, &samples(policy, grid), false).0
}

/// Gradient of [`fit_loss_value`] with respect to the flat parameters.
pub fn fit_loss_gradient(
    net: &PolicyNet,
    params: &ModelParams,
    policy: &TabularPolicy,
    grid: &Grid,
) -> Vec<f64> {
    fit_loss(net, params, &samples(policy, grid), true).1
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub epochs: usize,
    pub loss: f64,
    /// Largest `|net − target|` over nodes and control components.
    pub max_abs: f64,
    /// Loss after each accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
}

/// Largest componentwise deviation of the net's controls from `policy`.
pub fn max_abs_deviation(
    net: &PolicyNet,
    params: &ModelParams,
    policy: &TabularPolicy,
    grid: &Grid,
) -> f64 {
    samples(policy, grid)
        .iter()
        .map(|s| {
            let u = net.forward(params, s.x, s.regime).as_array();
            (0..3)
                .map(|c| (u[c] - s.target[c]).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Fits the net to a tabular policy by full-batch Adam steps, rejecting any
/// step that raises the loss and halving the rate when that happens.
pub fn fit_to_tabular(
    net: &mut PolicyNet,
    params: &ModelParams,
    policy: &TabularPolicy,
    grid: &Grid,
    config: &TrainConfig,
) -> Result<FitReport> {
    let data = samples(policy, grid);
    let (mut loss, mut grad) = fit_loss(net, params, &data, true);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("initial fit loss is {loss}")));
    }
    let mut adam = Adam::new(net.param_count());
    let mut rate = config.learning_rate;
    let mut losses = vec![loss];
    let mut epochs = 0;
    while epochs < config.fit_epochs {
        epochs += 1;
        let candidate = adam.propose(net.params(), &grad, rate, -1.0);
        let saved = net.params().to_vec();
        net.params_mut().copy_from_slice(&candidate);
        let (next, next_grad) = fit_loss(net, params, &data, true);
        if !next.is_finite() || next_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "fit loss became {next} at epoch {epochs}; try a smaller learning rate"
            )));
        }
        if next > loss {
            net.params_mut().copy_from_slice(&saved);
            rate *= 0.5;
            if rate < 1e-12 {
                break;
            }
            continue;
        }
        let improvement = loss - next;
        loss = next;
        grad = next_grad;
        losses.push(loss);
        if improvement < config.fit_tolerance {
            break;
        }
    }
    Ok(FitReport {
        epochs,
        loss,
        max_abs: max_abs_deviation(net, params, policy, grid),
        losses,
    })
}

/// What the backups inside `G` read: a flat value table over the whole grid
/// and the gain charged per unit time (zero for the centered recursion).
#[derive(Debug, Clone, PartialEq)]
pub struct BackupTarget {
    pub values: Vec<f64>,
    pub gain: f64,
}

impl BackupTarget {
    pub fn new(
        table: &ValueTable,
        variant: RviVariant,
        centering: Centering,
        gain: Option<f64>,
    ) -> Self {
        match variant {
            RviVariant::Paper => Self {
                values: table.centered(centering),
                gain: 0.0,
            },
            RviVariant::SemiMdp => Self {
                values: table.values.clone(),
                gain: gain.unwrap_or(0.0),
            },
        }
    }
}

/// Backup `S = [(σ²/2 + h b⁺) V₊ + (σ²/2 + h b⁻) V₋ + h² Σ q V_j + h² (f − γ)] / D`
/// at one interior state and its gradient with respect to `(a, s, l)`.
fn backup_with_gradient<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    target: &BackupTarget,
    node: usize,
    regime: usize,
    u: &crate::model::Control,
) -> (f64, [f64; 3]) {
    let p = model.params();
    let n = grid.len();
    let h = grid.step();
    let x = grid.x(node);
    let v = &target.values;
    let base = regime * n;
    let (vp, vm) = (v[base + node + 1], v[base + node - 1]);
    let switch: f64 = (0..p.regime_count())
        .filter(|&j| j != regime)
        .map(|j| p.rate(regime, j) * v[j * n + node])
        .sum();
    let (c, jac) = model.jacobian(x, regime, u);
    let (b, var) = (c.drift, c.diffusion_sq);
    let d = var + h * b.abs() - h * h * p.rate(regime, regime);
    let num = (0.5 * var + h * b.max(0.0)) * vp
        + (0.5 * var + h * (-b).max(0.0)) * vm
        + h * h * switch
        + h * h * (c.reward - target.gain);
    let s = num / d;
    // subgradient 0 for b⁺ and b⁻ at b = 0
    let (pos, neg) = (f64::from(u8::from(b > 0.0)), f64::from(u8::from(b < 0.0)));
    let ds_dvar = (0.5 * (vp + vm) - s) / d;
    let ds_db = (h * (pos * vp - neg * vm) - s * h * (pos - neg)) / d;
    let ds_df = h * h / d;
    let mut grad = [0.0; 3];
    for k in 0..3 {
        grad[k] = ds_dvar * jac.diffusion_sq[k] + ds_db * jac.drift[k] + ds_df * jac.reward[k];
    }
    (s, grad)
}

/// `G`: mean of the backup over every interior `(node, regime)` of `grid`
/// with the net's control, and optionally `∂G/∂θ`.
fn objective<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    net: &PolicyNet,
    target: &BackupTarget,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let p = model.params();
    let n = grid.len();
    let m = p.regime_count();
    assert_eq!(
        target.values.len(),
        n * m,
        "value table does not match the grid"
    );
    let states: Vec<(usize, usize)> = (0..m)
        .flat_map(|l| grid.interior().map(move |k| (k, l)))
        .collect();
    let count = states.len();
    let parts: Vec<(f64, Vec<f64>)> = states
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = if with_grad {
                vec![0.0; net.param_count()]
            } else {
                Vec::new()
            };
            let mut total = 0.0;
            for &(k, l) in chunk {
                let x = grid.x(k);
                let trace = net.trace(x, l);
                let sq = squash(p, x, trace.raw);
                let (s, ds_du) = backup_with_gradient(model, grid, target, k, l, &sq.control);
                total += s;
                if with_grad {
                    let mut d_raw = [0.0; 3];
                    for (r, slot) in d_raw.iter_mut().enumerate() {
                        *slot = (0..3).map(|c| ds_du[c] * sq.jacobian[c][r]).sum();
                    }
                    net.backward(&trace, d_raw, &mut grad);
                }
            }
            (total, grad)
        })
        .collect();
    reduce(parts, net.param_count(), with_grad, count)
}

/// Smallest distance, over the interior states of `grid`, from the net's
/// control to a point where `G` is not differentiable: `b = 0`, the dividend
/// snap at the minimum dividend, or the `s + l = 1` projection.
pub fn kink_margin<D: Dynamics + ?Sized>(model: &D, grid: &Grid, net: &PolicyNet) -> f64 {
    let p = model.params();
    let mut margin = f64::INFINITY;
    for l in 0..p.regime_count() {
        for k in grid.interior() {
            let x = grid.x(k);
            let raw = net.raw(x, l);
            let u = squash(p, x, raw).control;
            margin = margin.min(model.coefficients(x, l, &u).drift.abs());
            if x > p.threshold {
                let hd = heads(p, raw);
                margin = margin
                    .min((hd.dividend - p.min_dividend).abs())
                    .min((hd.risky + hd.dividend - 1.0).abs());
            }
        }
    }
    margin
}

pub fn global_objective<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    net: &PolicyNet,
    target: &BackupTarget,
) -> f64 {
    objective(model, grid, net, target, false).0
}

pub fn objective_gradient<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    net: &PolicyNet,
    target: &BackupTarget,
) -> (f64, Vec<f64>) {
    objective(model, grid, net, target, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentReport {
    pub epochs: usize,
    /// `G` after each accepted step, starting with the initial value.
    pub objective: Vec<f64>,
}

/// Gradient ascent on `G` with Adam-scaled steps. A step that lowers `G` is
/// rejected and halves the rate; the run ends when an accepted step moves `G`
/// by less than the tolerance.
pub fn ascend<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    net: &mut PolicyNet,
    target: &BackupTarget,
    config: &TrainConfig,
) -> Result<AscentReport> {
    let (mut g, mut grad) = objective(model, grid, net, target, true);
    if !g.is_finite() {
        return Err(Error::Divergence(format!("initial objective is {g}")));
    }
    let mut adam = Adam::new(net.param_count());
    let mut rate = config.learning_rate;
    let mut history = vec![g];
    let mut epochs = 0;
    while epochs < config.ascent_epochs {
        epochs += 1;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient at epoch {epochs}"
            )));
        }
        let candidate = adam.propose(net.params(), &grad, rate, 1.0);
        let saved = net.params().to_vec();
        net.params_mut().copy_from_slice(&candidate);
        let (next, next_grad) = objective(model, grid, net, target, true);
        if !(next >= g) {
            net.params_mut().copy_from_slice(&saved);
            rate *= 0.5;
            if rate < 1e-12 {
                break;
            }
            continue;
        }
        let change = next - g;
        g = next;
        grad = next_grad;
        history.push(g);
        if change < config.ascent_tolerance {
            break;
        }
    }
    Ok(AscentReport {
        epochs,
        objective: history,
    })
}
