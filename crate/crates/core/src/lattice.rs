//! Discretized state space and the locally consistent approximating chain.
//!
//! Surplus levels live on `{−(B+h), −B, …, B, B+h}`. From an interior node the
//! chain moves one step up or down in the same regime, or switches regime in
//! place. With `D = σ² + h|b| − h² q_ii`:
//!
//! ```text
//! p(x → x+h) = (σ²/2 + h b⁺) / D
//! p(x → x−h) = (σ²/2 + h b⁻) / D
//! p(i → j)   = q_ij h² / D
//! Δt         = h² / D
//! ```
//!
//! The outermost nodes reflect back onto `±B` with probability one and take
//! no time.

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::model::{Control, Dynamics, ModelParams};

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    h: f64,
    nodes: Vec<f64>,
    threshold_index: usize,
}

fn steps(len: f64, h: f64, what: &str) -> Result<i64> {
    let ratio = len / h;
    let k = ratio.round();
    if (ratio - k).abs() > ALIGN_TOL * ratio.abs().max(1.0) {
        return Err(Error::Alignment(format!(
            "{what} = {len} is not an integer multiple of the step {h}"
        )));
    }
    Ok(k as i64)
}

impl Grid {
    /// Builds `{−(B+h), …, B+h}` with step `h`. Both `boundary` and
    /// `threshold` must be integer multiples of `h`; nothing is rounded.
    pub fn new(boundary: f64, h: f64, threshold: f64) -> Result<Self> {
        if !(h > 0.0 && boundary > 0.0) {
            return Err(Error::Alignment(format!(
                "need positive boundary and step, got B={boundary}, h={h}"
            )));
        }
        if !(threshold.abs() <= boundary) {
            return Err(Error::Alignment(format!(
                "threshold {threshold} lies outside [-{boundary}, {boundary}]"
            )));
        }
        let nb = steps(boundary, h, "boundary")?;
        let nk = steps(threshold, h, "threshold")?;
        let mut nodes: Vec<f64> = (-(nb + 1)..=nb + 1).map(|k| k as f64 * h).collect();
        let threshold_index = (nb + 1 + nk) as usize;
        // pin the special nodes to their exact values
        nodes[threshold_index] = threshold;
        nodes[1] = -boundary;
        let n = nodes.len();
        nodes[n - 2] = boundary;
        nodes[(nb + 1) as usize] = 0.0;
        Ok(Self {
            h,
            nodes,
            threshold_index,
        })
    }

    pub fn for_model(params: &ModelParams, h: f64) -> Result<Self> {
        Self::new(params.boundary, h, params.threshold)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn x(&self, index: usize) -> f64 {
        self.nodes[index]
    }

    pub fn threshold_index(&self) -> usize {
        self.threshold_index
    }

    /// Index of the node at `x = 0`.
    pub fn origin_index(&self) -> usize {
        self.nodes.len() / 2
    }

    /// `B`, the outermost interior node.
    pub fn boundary(&self) -> f64 {
        self.nodes[self.nodes.len() - 2]
    }

    #[inline]
    pub fn is_interior(&self, index: usize) -> bool {
        index > 0 && index + 1 < self.nodes.len()
    }

    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.nodes.len() - 1
    }

    pub fn boundary_kind(&self, index: usize) -> RowKind {
        if index == 0 {
            RowKind::LeftReflect
        } else if index + 1 == self.nodes.len() {
            RowKind::RightReflect
        } else {
            RowKind::Interior
        }
    }

    /// Nearest node to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = ((x - self.nodes[0]) / self.h).round();
        k.clamp(0.0, (self.nodes.len() - 1) as f64) as usize
    }

    /// If every node of `self` is a node of `fine`, the integer ratio of steps.
    pub fn refinement_ratio(&self, fine: &Grid) -> Result<usize> {
        let k = steps(self.h, fine.h, "coarse step")?;
        if k < 1 || (self.boundary() - fine.boundary()).abs() > ALIGN_TOL {
            return Err(Error::Alignment(format!(
                "coarse grid (h={}, B={}) is not a subsequence of the fine grid (h={}, B={})",
                self.h,
                self.boundary(),
                fine.h,
                fine.boundary()
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Interior,
    LeftReflect,
    RightReflect,
}

/// One row of the approximating chain's transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub p_up: f64,
    pub p_down: f64,
    /// Probability of switching to each regime, zero at the current one.
    pub p_switch: SmallVec<[f64; 4]>,
    /// Interpolation interval attached to the step.
    pub dt: f64,
    pub kind: RowKind,
}

impl TransitionRow {
    pub fn total(&self) -> f64 {
        self.p_up + self.p_down + self.p_switch.iter().sum::<f64>()
    }
}

/// Transition row at `(grid[index], regime)` under `u`. Reflection rows are
/// returned for the two outermost nodes regardless of `u`.
pub fn transitions<D: Dynamics + ?Sized>(
    model: &D,
    grid: &Grid,
    index: usize,
    regime: usize,
    u: &Control,
) -> TransitionRow {
    let m = model.params().regime_count();
    let kind = grid.boundary_kind(index);
    let reflect = |up: bool| TransitionRow {
        p_up: if up { 1.0 } else { 0.0 },
        p_down: if up { 0.0 } else { 1.0 },
        p_switch: SmallVec::from_elem(0.0, m),
        dt: 0.0,
        kind,
    };
    match kind {
        RowKind::LeftReflect => reflect(true),
        RowKind::RightReflect => reflect(false),
        RowKind::Interior => {
            let h = grid.step();
            let c = model.coefficients(grid.x(index), regime, u);
            let p = model.params();
            let d = c.diffusion_sq + h * c.drift.abs() - h * h * p.rate(regime, regime);
            assert!(
                d > 0.0,
                "non-positive normalizer {d} at x={}",
                grid.x(index)
            );
            let dt = h * h / d;
            let half = 0.5 * c.diffusion_sq;
            let p_switch = (0..m)
                .map(|j| {
                    if j == regime {
                        0.0
                    } else {
                        p.rate(regime, j) * dt
                    }
                })
                .collect();
            TransitionRow {
                p_up: (half + h * c.drift.max(0.0)) / d,
                p_down: (half + h * (-c.drift).max(0.0)) / d,
                p_switch,
                dt,
                kind,
            }
        }
    }
}

/// Conditional mean and variance of one surplus step.
pub fn chain_step_moments(row: &TransitionRow, h: f64) -> (f64, f64) {
    let mean = h * (row.p_up - row.p_down);
    let var = h * h * (row.p_up + row.p_down) - mean * mean;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_examples() {
        let g = Grid::new(10.0, 0.5, 2.0).unwrap();
        assert_eq!(g.len(), 43);
        assert_eq!(g.threshold_index(), 25);
        assert_eq!(g.x(25), 2.0);

        let g = Grid::new(10.0, 0.1, 2.0).unwrap();
        assert_eq!(g.len(), 203);
        assert_eq!(g.x(g.threshold_index()), 2.0);
        assert_eq!(g.x(g.origin_index()), 0.0);
        assert_eq!(g.x(1), -10.0);
        assert_eq!(g.x(201), 10.0);

        let g = Grid::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.nodes(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        assert!(matches!(
            Grid::new(10.0, 0.3, 2.0),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            Grid::new(10.0, 0.5, 2.2),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn nodes_are_evenly_spaced() {
        let g = Grid::new(10.0, 0.1, 2.0).unwrap();
        for w in g.nodes().windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn refinement_ratio() {
        let fine = Grid::new(10.0, 0.1, 2.0).unwrap();
        let coarse = Grid::new(10.0, 0.5, 2.0).unwrap();
        assert_eq!(coarse.refinement_ratio(&fine).unwrap(), 5);
        let other = Grid::new(10.0, 0.2, 2.0).unwrap();
        assert!(coarse.refinement_ratio(&other).is_err());
    }

    #[test]
    fn interior_row_example() {
        let p = ModelParams::table1();
        let g = Grid::new(10.0, 0.1, 2.0).unwrap();
        let i = g.nearest_index(4.0);
        assert_eq!(g.x(i), 4.0);
        let row = transitions(&p, &g, i, 0, &Control::new(1.0, 0.3, 0.062));
        let d = 0.147998;
        assert_abs_diff_eq!(row.p_up, 0.0722 / d, epsilon = 1e-12);
        assert_abs_diff_eq!(row.p_up, 0.48784, epsilon = 1e-5);
        assert_abs_diff_eq!(row.p_down, 0.50878, epsilon = 1e-5);
        assert_abs_diff_eq!(row.p_switch[1], 0.003378, epsilon = 1e-6);
        assert_eq!(row.p_switch[0], 0.0);
        assert_abs_diff_eq!(row.dt, 0.067568, epsilon = 1e-6);
        assert_abs_diff_eq!(row.total(), 1.0, epsilon = 1e-12);

        let (mean, var) = chain_step_moments(&row, 0.1);
        assert_abs_diff_eq!(mean, -0.03098 * row.dt, epsilon = 1e-15);
        assert_abs_diff_eq!(mean, -0.0020933, epsilon = 1e-7);
        let expect = 0.1444 * row.dt + 0.1 * 0.03098 * row.dt - (0.03098 * row.dt).powi(2);
        assert_abs_diff_eq!(var, expect, epsilon = 1e-15);
    }

    #[test]
    fn zero_drift_row_is_symmetric() {
        // below the threshold b = μ(ρ − β(1 − a)), zero at a = 1 − ρ/β = 0.4
        let p = ModelParams::table1();
        let g = Grid::new(10.0, 0.1, 2.0).unwrap();
        let row = transitions(&p, &g, g.origin_index(), 0, &Control::new(0.4, 0.0, 0.0));
        assert_abs_diff_eq!(row.p_up, row.p_down, epsilon = 1e-15);
        assert_abs_diff_eq!(chain_step_moments(&row, 0.1).0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reflection_rows() {
        let p = ModelParams::table1();
        let g = Grid::new(10.0, 0.1, 2.0).unwrap();
        let u = Control::new(1.0, 0.0, 0.0);
        let left = transitions(&p, &g, 0, 1, &u);
        assert_eq!((left.p_up, left.p_down, left.dt), (1.0, 0.0, 0.0));
        assert_eq!(left.kind, RowKind::LeftReflect);
        let right = transitions(&p, &g, g.len() - 1, 0, &u);
        assert_eq!((right.p_up, right.p_down, right.dt), (0.0, 1.0, 0.0));
        assert!(right.p_switch.iter().all(|&q| q == 0.0));
    }
}
