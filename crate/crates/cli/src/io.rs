//! CSV tables and JSON reports.
//!
//! Floats are written in their shortest round-trip form, so a table read back
//! holds bit-identical values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mcam::refine::{PolicyNet, RoundReport};
use mcam::sim::PathStats;
use mcam::solver::{TabularPolicy, ValueTable};
use mcam::{Control, Grid, ModelParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct PolicyRow {
    regime: usize,
    x: f64,
    a: f64,
    s: f64,
    l: f64,
}

#[derive(Debug, Serialize)]
struct ValueRow {
    regime: usize,
    x: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "U")]
    u: Option<f64>,
}

#[derive(Debug, Serialize)]
struct OccupationRow {
    regime: usize,
    x: f64,
    empirical: f64,
    stationary: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    path: usize,
    t: f64,
    average: f64,
}

#[derive(Debug, Serialize)]
struct ObjectiveRow {
    round: usize,
    step: usize,
    objective: f64,
}

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn each_state(grid: &Grid, regimes: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    (0..regimes).flat_map(move |l| (0..grid.len()).map(move |k| (l, k, grid.x(k))))
}

/// Writes `regime,x,a,s,l` for every node of every regime, reflection nodes included.
pub fn write_policy(path: &Path, grid: &Grid, policy: &TabularPolicy) -> Result<()> {
    write_rows(
        path,
        each_state(grid, policy.regimes).map(|(l, k, x)| {
            let u = policy.get(k, l);
            PolicyRow {
                regime: l,
                x,
                a: u.retention,
                s: u.risky,
                l: u.dividend,
            }
        }),
    )
}

fn read_policy_rows(path: &Path) -> Result<Vec<PolicyRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows: std::result::Result<Vec<PolicyRow>, _> = r.deserialize().collect();
    rows.with_context(|| format!("malformed policy table {}", path.display()))
}

/// Reads a policy table written by [`write_policy`] onto whichever of
/// `grids` has exactly its nodes. Every `(regime, node)` must appear once
/// and every control must be admissible at its node.
pub fn read_policy(
    path: &Path,
    params: &ModelParams,
    grids: &[&Grid],
) -> Result<(Grid, TabularPolicy)> {
    let rows = read_policy_rows(path)?;
    let m = params.regime_count();
    if rows.is_empty() || rows.len() % m != 0 {
        bail!(
            "{}: {} rows do not split evenly over {m} regimes",
            path.display(),
            rows.len()
        );
    }
    let nodes = rows.len() / m;
    let Some(grid) = grids.iter().find(|g| g.len() == nodes) else {
        bail!(
            "{}: {nodes} nodes per regime match none of the configured lattices",
            path.display()
        );
    };
    let mut controls = vec![None; nodes * m];
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        if row.regime >= m {
            bail!(
                "{}:{line}: regime {} out of range",
                path.display(),
                row.regime
            );
        }
        let k = grid.nearest_index(row.x);
        if (grid.x(k) - row.x).abs() > 1e-9 * grid.step() {
            bail!(
                "{}:{line}: x = {} is not a lattice node",
                path.display(),
                row.x
            );
        }
        let slot = &mut controls[row.regime * nodes + k];
        if slot.is_some() {
            bail!(
                "{}:{line}: duplicate state (regime {}, x = {})",
                path.display(),
                row.regime,
                row.x
            );
        }
        *slot = Some(Control::new(row.a, row.s, row.l));
    }
    let policy = TabularPolicy {
        nodes,
        regimes: m,
        controls: controls
            .into_iter()
            .map(|c| c.expect("every slot filled"))
            .collect(),
    };
    if let Some((k, l)) = policy.first_inadmissible(grid, params) {
        bail!(
            "{}: control {:?} at regime {l}, x = {} is not admissible",
            path.display(),
            policy.get(k, l),
            grid.x(k)
        );
    }
    Ok(((*grid).clone(), policy))
}

/// A policy given as JSON: either one control applied everywhere or a
/// network checkpoint.
#[derive(Debug, Clone)]
pub enum JsonPolicy {
    Constant(Control),
    Net(PolicyNet),
}

pub fn read_json_policy(path: &Path) -> Result<JsonPolicy> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    if value.get("layers").is_some() {
        let net = PolicyNet::from_json(&text)
            .with_context(|| format!("bad checkpoint {}", path.display()))?;
        Ok(JsonPolicy::Net(net))
    } else {
        let u: Control = serde_json::from_value(value).with_context(|| {
            format!(
                "{}: expected {{retention, risky, dividend}}",
                path.display()
            )
        })?;
        Ok(JsonPolicy::Constant(u))
    }
}

/// Writes `regime,x,V,U`; `U` is left empty when absent.
pub fn write_values(
    path: &Path,
    grid: &Grid,
    v: &ValueTable,
    u: Option<&ValueTable>,
) -> Result<()> {
    write_rows(
        path,
        each_state(grid, v.regimes).map(|(l, k, x)| ValueRow {
            regime: l,
            x,
            v: v.get(k, l),
            u: u.map(|u| u.get(k, l)),
        }),
    )
}

/// Writes `regime,x,empirical,stationary` on the binning lattice.
pub fn write_occupation(
    path: &Path,
    grid: &Grid,
    stats: &PathStats,
    omega: Option<&[f64]>,
) -> Result<()> {
    let regimes = stats.regime_fractions.len();
    let n = grid.len();
    write_rows(
        path,
        each_state(grid, regimes).map(|(l, k, x)| OccupationRow {
            regime: l,
            x,
            empirical: stats.occupation[l * n + k],
            stationary: omega.map(|w| w[l * n + k]),
        }),
    )
}

/// Running post-burn-in averages per path.
pub fn write_trace(path: &Path, stats: &PathStats) -> Result<()> {
    write_rows(
        path,
        stats.traces.iter().enumerate().flat_map(|(p, tr)| {
            tr.iter().map(move |&(t, average)| TraceRow {
                path: p,
                t,
                average,
            })
        }),
    )
}

pub fn write_rounds(path: &Path, rounds: &[RoundReport]) -> Result<()> {
    write_rows(path, rounds)
}

/// Accepted values of `G` per round.
pub fn write_objective(path: &Path, trace: &[Vec<f64>]) -> Result<()> {
    write_rows(
        path,
        trace.iter().enumerate().flat_map(|(r, gs)| {
            gs.iter()
                .enumerate()
                .map(move |(step, &objective)| ObjectiveRow {
                    round: r + 1,
                    step,
                    objective,
                })
        }),
    )
}

pub fn write_fit_losses(path: &Path, losses: &[f64]) -> Result<()> {
    write_rows(
        path,
        losses
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| LossRow { epoch, loss }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
