//! Policy refinement on the fine lattice.
//!
//! A small perceptron is fitted to the coarse relative-value-iteration policy
//! and then pushed uphill on `G`, the mean one-step backup over every fine
//! state under the net's controls. Each round re-evaluates the refined policy
//! and feeds its values into the next ascent.

mod net;
mod train;

pub use net::{
    heads, squash, Checkpoint, HeadOutputs, LayerCheckpoint, PolicyNet, SquashedControl, Trace,
};
pub use train::{
    ascend, fit_loss_gradient, fit_loss_value, fit_to_tabular, global_objective, kink_margin,
    max_abs_deviation, objective_gradient, AscentReport, BackupTarget, FitReport, TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::model::Dynamics;
use crate::solver::{
    gain_of_policy, policy_values, rvi_solve_from, GainEstimate, RviConfig, TabularPolicy,
    ValueTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateConfig {
    pub rvi: RviConfig,
    pub train: TrainConfig,
    /// Stop once `Σ |V^k − V^{k−1}|` over the fine grid drops below this.
    pub epsilon: f64,
    pub max_rounds: usize,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            rvi: RviConfig::default(),
            train: TrainConfig::default(),
            epsilon: 1e-4,
            max_rounds: 20,
        }
    }
}

impl IterateConfig {
    pub fn validate_at(&self, prefix: &str) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if let Err(e) = self.rvi.validate_at(&format!("{prefix}rvi.")) {
            errs.extend(e);
        }
        if let Err(e) = self.train.validate_at(&format!("{prefix}train.")) {
            errs.extend(e);
        }
        if !(self.epsilon > 0.0) {
            errs.push(format!(
                "{prefix}epsilon: must be > 0, got {}",
                self.epsilon
            ));
        }
        if self.max_rounds == 0 {
            errs.push(format!("{prefix}max_rounds: must be at least 1"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Diagnostics of one global round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub coarse_gain: f64,
    pub rvi_sweeps: usize,
    pub fit_epochs: usize,
    pub fit_max_abs: f64,
    pub objective_start: f64,
    pub objective_end: f64,
    pub ascent_epochs: usize,
    /// `Σ |V^k − V^{k−1}|`.
    pub value_change: f64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct IterateOutcome {
    pub net: PolicyNet,
    /// The net's controls on the fine grid.
    pub policy: TabularPolicy,
    pub values: ValueTable,
    pub gain: GainEstimate,
    pub coarse_policy: TabularPolicy,
    pub coarse_values: ValueTable,
    pub rounds: Vec<RoundReport>,
    /// Every accepted `G` over all rounds, in order, one vector per round.
    pub objective_trace: Vec<Vec<f64>>,
    pub fit_losses: Vec<f64>,
    /// False when the round limit ran out first; the outcome is then the
    /// best round seen.
    pub converged: bool,
}

/// Runs rounds of coarse relative value iteration, fitting, ascent on the
/// fine grid and exact evaluation of the refined policy, until successive
/// fine value tables agree.
pub fn global_iterate<D: Dynamics + ?Sized>(
    model: &D,
    coarse: &Grid,
    fine: &Grid,
    config: &IterateConfig,
) -> Result<IterateOutcome> {
    coarse.refinement_ratio(fine)?;
    if config.max_rounds == 0 {
        return Err(Error::Domain("max_rounds must be at least 1".into()));
    }
    let p = model.params();
    let m = p.regime_count();
    let rvi_cfg = config.rvi;
    let (_, r0) = rvi_cfg.reference.unwrap_or((coarse.origin_index(), 0));
    let fine_ref = (fine.origin_index(), r0);

    let mut values = ValueTable::zeros(fine, m);
    values.reference = fine_ref;
    let mut gain_estimate: Option<f64> = None;
    let mut coarse_values: Option<ValueTable> = None;
    let mut fitted: Option<(TabularPolicy, PolicyNet, FitReport)> = None;
    let mut rounds = Vec::new();
    let mut objective_trace = Vec::new();
    let mut best: Option<(f64, PolicyNet, TabularPolicy, ValueTable, GainEstimate)> = None;
    let mut last_rvi = None;
    let mut converged = false;

    for round in 1..=config.max_rounds {
        // (a) coarse relative value iteration, warm-started from the last round
        let rvi = rvi_solve_from(model, coarse, &rvi_cfg, coarse_values.as_ref())?;

        // (b) fit, reused while the coarse policy stays the same
        let reuse = matches!(&fitted, Some((target, _, _)) if *target == rvi.policy);
        if !reuse {
            let mut net = match &fitted {
                Some((_, net, _)) => net.clone(),
                None => PolicyNet::for_grid(p, fine, config.train.width, config.train.seed),
            };
            let report = fit_to_tabular(&mut net, p, &rvi.policy, coarse, &config.train)?;
            log::info!(
                "round {round}: fit {} epochs, loss {:.3e}, max abs {:.4}",
                report.epochs,
                report.loss,
                report.max_abs
            );
            fitted = Some((rvi.policy.clone(), net, report));
        }
        let (_, start, fit_report) = fitted.as_ref().expect("fitted above");

        // (c) ascent on G against the previous round's values
        let target = BackupTarget::new(&values, rvi_cfg.variant, rvi_cfg.centering, gain_estimate);
        let mut net = start.clone();
        let ascent = ascend(model, fine, &mut net, &target, &config.train)?;

        // (d) exact evaluation of the refined policy
        let policy = net.tabulate(p, fine);
        let (next_values, gain_hint) = policy_values(
            model,
            fine,
            &policy,
            rvi_cfg.variant,
            rvi_cfg.centering,
            rvi_cfg.boundary,
            fine_ref,
        )?;
        let gain = gain_of_policy(model, fine, &policy)?;
        let change = next_values.l1_distance(&values);
        let report = RoundReport {
            round,
            coarse_gain: rvi.gain.gamma,
            rvi_sweeps: rvi.sweeps,
            fit_epochs: fit_report.epochs,
            fit_max_abs: fit_report.max_abs,
            objective_start: ascent.objective[0],
            objective_end: *ascent.objective.last().expect("nonempty"),
            ascent_epochs: ascent.epochs,
            value_change: change,
            gain: gain.gamma,
        };
        log::info!("round {round}: {report:?}");
        rounds.push(report);
        objective_trace.push(ascent.objective);
        if best.as_ref().is_none_or(|b| gain.gamma > b.0) {
            best = Some((
                gain.gamma,
                net.clone(),
                policy.clone(),
                next_values.clone(),
                gain,
            ));
        }
        values = next_values;
        gain_estimate = gain_hint.or(Some(gain.gamma));
        coarse_values = Some(rvi.values.clone());
        last_rvi = Some(rvi);

        // (e)
        if change < config.epsilon {
            converged = true;
            best = Some((gain.gamma, net, policy, values.clone(), gain));
            break;
        }
    }
    if !converged {
        log::warn!(
            "global iteration stopped after {} rounds without reaching Σ|ΔV| < {}",
            config.max_rounds,
            config.epsilon
        );
    }
    let rvi = last_rvi.expect("at least one round");
    let (_, net, policy, values, gain) = best.expect("at least one round");
    let fit_losses = fitted.map(|f| f.2.losses).unwrap_or_default();
    Ok(IterateOutcome {
        net,
        policy,
        values,
        gain,
        coarse_policy: rvi.policy,
        coarse_values: rvi.values,
        rounds,
        objective_trace,
        fit_losses,
        converged,
    })
}
