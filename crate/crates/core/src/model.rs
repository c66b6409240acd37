//! Regime-switching surplus model.
//!
//! The insurer's surplus `X(t)` is modulated by a continuous-time Markov chain
//! `α(t)` with generator `Q`. In regime `i` claims arrive at rate `λ_i` and are
//! collapsed to their first two moments, giving
//!
//! ```text
//! μ_C(i)  = λ_i E[Y]          σ_C²(i) = λ_i E[Y²]
//! c(i)    = (1 + ρ) μ_C(i)    Ψ(a, i) = (1 + β)(1 − a) μ_C(i)
//! ```
//!
//! With the feedback control `u = (a, s, l)` (retention, risky share,
//! dividend rate) and `y = (x − K)^+`, the controlled coefficients are
//!
//! ```text
//! f(x, i, u)  = c − Ψ − a μ_C + [s r₁(i) + (1 − s − l) r₂] y
//! b(x, i, u)  = f − l y
//! σ²(x, i, u) = a² σ_C²(i) + (s σ_S(i) y)²
//! ```
//!
//! Below the regulatory threshold `K` the factor `y` vanishes, so the risky
//! share and dividend rate carry no payoff there and are stored as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-regime market constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeParams {
    /// Claim arrival intensity.
    pub claim_intensity: f64,
    /// Expected return of the risky asset.
    pub risky_return: f64,
    /// Volatility of the risky asset.
    pub risky_volatility: f64,
}

/// Every market and regulatory constant of the model, plus the regime generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub regimes: Vec<RegimeParams>,
    /// Generator of the regime chain, row-major, `regimes.len()` square.
    pub generator: Vec<Vec<f64>>,
    /// Mean claim size `E[Y]`.
    pub claim_mean: f64,
    /// Second moment of the claim size `E[Y²]`.
    pub claim_second_moment: f64,
    /// Premium loading of the insurer.
    pub premium_loading: f64,
    /// Loading charged by the reinsurer; must exceed `premium_loading`.
    pub reinsurance_loading: f64,
    /// Risk-free rate, at most every regime's risky return.
    pub risk_free_rate: f64,
    /// Regulatory threshold below which neither investment nor dividends happen.
    pub threshold: f64,
    /// Reflecting computational boundary.
    pub boundary: f64,
    pub min_retention: f64,
    pub max_risky: f64,
    /// Smallest nonzero dividend rate.
    pub min_dividend: f64,
}

impl ModelParams {
    /// The parameter set used throughout the documentation and the shipped config.
    pub fn table1() -> Self {
        Self {
            regimes: vec![
                RegimeParams {
                    claim_intensity: 0.13,
                    risky_return: 0.08,
                    risky_volatility: 0.2,
                },
                RegimeParams {
                    claim_intensity: 0.28,
                    risky_return: 0.05,
                    risky_volatility: 0.4,
                },
            ],
            generator: vec![vec![-0.05, 0.05], vec![0.1, -0.1]],
            claim_mean: 1.0,
            claim_second_moment: 1.0,
            premium_loading: 0.15,
            reinsurance_loading: 0.25,
            risk_free_rate: 0.02,
            threshold: 2.0,
            boundary: 10.0,
            min_retention: 0.4,
            max_risky: 0.3,
            min_dividend: 0.062,
        }
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    /// Generator entry `q_ij`.
    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from][to]
    }

    /// Checks every invariant and reports all violations at once, each
    /// prefixed with its field path under `prefix`.
    pub fn validate_at(&self, prefix: &str) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut fail = |field: &str, msg: String| errs.push(format!("{prefix}{field}: {msg}"));
        let m = self.regimes.len();
        if m == 0 {
            fail("regimes", "at least one regime is required".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !(r.claim_intensity > 0.0) {
                fail(
                    &format!("regimes[{i}].claim_intensity"),
                    "must be > 0".into(),
                );
            }
            if !(r.risky_volatility > 0.0) {
                fail(
                    &format!("regimes[{i}].risky_volatility"),
                    "must be > 0".into(),
                );
            }
            if !(self.risk_free_rate <= r.risky_return) {
                fail(
                    &format!("regimes[{i}].risky_return"),
                    format!(
                        "risk-free rate {} exceeds risky return {} (need r2 <= r1)",
                        self.risk_free_rate, r.risky_return
                    ),
                );
            }
        }
        if self.generator.len() != m || self.generator.iter().any(|row| row.len() != m) {
            fail("generator", format!("must be a {m}x{m} matrix"));
        } else {
            for (i, row) in self.generator.iter().enumerate() {
                for (j, &q) in row.iter().enumerate() {
                    if i != j && !(q >= 0.0) {
                        fail(
                            &format!("generator[{i}][{j}]"),
                            "off-diagonal rates must be >= 0".into(),
                        );
                    }
                }
                if !(row[i] < 0.0) {
                    fail(
                        &format!("generator[{i}][{i}]"),
                        "diagonal must be < 0".into(),
                    );
                }
                let sum: f64 = row.iter().sum();
                if !(sum.abs() <= 1e-12) {
                    fail(
                        &format!("generator[{i}]"),
                        format!("row sums to {sum:e}, expected 0"),
                    );
                }
            }
        }
        if !(self.claim_mean > 0.0) {
            fail("claim_mean", "must be > 0".into());
        }
        if !(self.claim_second_moment >= self.claim_mean * self.claim_mean) {
            fail("claim_second_moment", "must be >= claim_mean^2".into());
        }
        if !(self.premium_loading > 0.0) {
            fail("premium_loading", "must be > 0".into());
        }
        if !(self.reinsurance_loading > self.premium_loading) {
            fail(
                "reinsurance_loading",
                format!(
                    "must exceed premium_loading (beta > rho), got beta={} rho={}",
                    self.reinsurance_loading, self.premium_loading
                ),
            );
        }
        if !(self.threshold > 0.0 && self.threshold < self.boundary) {
            fail("threshold", "need 0 < threshold < boundary".into());
        }
        if !(self.min_retention > 0.0 && self.min_retention <= 1.0) {
            fail("min_retention", "need 0 < min_retention <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_risky) {
            fail("max_risky", "need 0 <= max_risky <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_dividend) {
            fail("min_dividend", "need 0 <= min_dividend <= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("").map_err(Error::InvalidParams)
    }

    fn check_regime(&self, regime: usize) -> Result<()> {
        if regime < self.regimes.len() {
            Ok(())
        } else {
            Err(Error::RegimeIndex {
                index: regime,
                count: self.regimes.len(),
            })
        }
    }

    /// Mean and variance rates of the aggregate claim process in `regime`.
    pub fn claim_moments(&self, regime: usize) -> Result<(f64, f64)> {
        self.check_regime(regime)?;
        Ok(self.claim_moments_unchecked(regime))
    }

    #[inline]
    fn claim_moments_unchecked(&self, regime: usize) -> (f64, f64) {
        let lambda = self.regimes[regime].claim_intensity;
        (lambda * self.claim_mean, lambda * self.claim_second_moment)
    }

    pub fn premium(&self, regime: usize) -> Result<f64> {
        let (mu, _) = self.claim_moments(regime)?;
        Ok((1.0 + self.premium_loading) * mu)
    }

    /// Premium paid to the reinsurer when retaining the fraction `retention`.
    pub fn reinsurance_premium(&self, regime: usize, retention: f64) -> Result<f64> {
        let (mu, _) = self.claim_moments(regime)?;
        if !(0.0..=1.0).contains(&retention) {
            return Err(Error::Domain(format!(
                "retention {retention} outside [0, 1]"
            )));
        }
        Ok((1.0 + self.reinsurance_loading) * (1.0 - retention) * mu)
    }

    pub fn drift(&self, state: State, u: &Control) -> Result<f64> {
        self.checked(state, u).map(|c| c.drift)
    }

    pub fn diffusion_sq(&self, state: State, u: &Control) -> Result<f64> {
        self.checked(state, u).map(|c| c.diffusion_sq)
    }

    pub fn reward(&self, state: State, u: &Control) -> Result<f64> {
        self.checked(state, u).map(|c| c.reward)
    }

    fn checked(&self, state: State, u: &Control) -> Result<Coefficients> {
        self.check_regime(state.regime)?;
        if !u.in_control_set(self) {
            return Err(Error::Domain(format!(
                "control {u:?} outside the admissible set"
            )));
        }
        Ok(self.coefficients(state.x, state.regime, u))
    }

    /// True iff `u` lies in the admissible set and respects the threshold rule
    /// (no investment or dividends at or below `threshold`).
    pub fn is_admissible(&self, state: State, u: &Control) -> bool {
        if state.regime >= self.regimes.len() || !u.in_control_set(self) {
            return false;
        }
        state.x > self.threshold || (u.risky == 0.0 && u.dividend == 0.0)
    }

    /// A constant `C` with `|b| + |σ| <= C (1 + |x|)` over all admissible controls.
    pub fn linear_growth_constant(&self) -> f64 {
        self.regimes
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (mu, var) = self.claim_moments_unchecked(i);
                // c − Ψ − aμ = μ(ρ − β(1 − a)), extreme at a ∈ {Ma, 1}
                let base = (mu * self.premium_loading).abs().max(
                    (mu * (self.premium_loading
                        - self.reinsurance_loading * (1.0 - self.min_retention)))
                        .abs(),
                );
                let intercept = base + var.sqrt();
                let slope = r.risky_return.abs()
                    + self.risk_free_rate.abs()
                    + 1.0
                    + self.max_risky * r.risky_volatility;
                intercept.max(slope)
            })
            .fold(0.0, f64::max)
    }
}

/// Feedback control `(a, s, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// Fraction of each claim kept by the insurer.
    pub retention: f64,
    /// Fraction of the surplus above the threshold held in the risky asset.
    pub risky: f64,
    /// Rate at which surplus above the threshold is paid out as dividends.
    pub dividend: f64,
}

impl Control {
    pub const fn new(retention: f64, risky: f64, dividend: f64) -> Self {
        Self {
            retention,
            risky,
            dividend,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.retention, self.risky, self.dividend]
    }

    /// Membership in the state-independent control set:
    /// `a ∈ [Ma, 1]`, `s ∈ [0, Ms]`, `l ∈ {0} ∪ [Ml, 1]`, `s + l <= 1`.
    pub fn in_control_set(&self, p: &ModelParams) -> bool {
        let Control {
            retention: a,
            risky: s,
            dividend: l,
        } = *self;
        (p.min_retention..=1.0).contains(&a)
            && (0.0..=p.max_risky).contains(&s)
            && (l == 0.0 || (p.min_dividend..=1.0).contains(&l))
            && s + l <= 1.0
    }

    /// Canonical form at surplus `x`: below the threshold the risky share and
    /// dividend rate are zeroed.
    pub fn canonical(self, x: f64, p: &ModelParams) -> Self {
        if x <= p.threshold {
            Self::new(self.retention, 0.0, 0.0)
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: f64,
    pub regime: usize,
}

impl State {
    pub const fn new(x: f64, regime: usize) -> Self {
        Self { x, regime }
    }
}

/// Drift, squared diffusion and running reward at one `(x, i, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub drift: f64,
    pub diffusion_sq: f64,
    pub reward: f64,
}

/// Partial derivatives of [`Coefficients`] with respect to
/// `(retention, risky, dividend)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefficientJacobian {
    pub drift: [f64; 3],
    pub diffusion_sq: [f64; 3],
    pub reward: [f64; 3],
}

/// Anything that supplies controlled coefficients on top of a parameter set.
///
/// [`ModelParams`] is the model itself; the wrappers below replace single
/// coefficients and exist so that solver and simulator paths can be checked
/// against closed-form answers.
pub trait Dynamics: Sync {
    fn params(&self) -> &ModelParams;

    fn coefficients(&self, x: f64, regime: usize, u: &Control) -> Coefficients;

    fn jacobian(&self, x: f64, regime: usize, u: &Control) -> (Coefficients, CoefficientJacobian);
}

impl Dynamics for ModelParams {
    fn params(&self) -> &ModelParams {
        self
    }

    #[inline]
    fn coefficients(&self, x: f64, regime: usize, u: &Control) -> Coefficients {
        let (mu, var) = self.claim_moments_unchecked(regime);
        let r = &self.regimes[regime];
        let excess = (x - self.threshold).max(0.0);
        let Control {
            retention: a,
            risky: s,
            dividend: l,
        } = *u;
        let underwriting = (1.0 + self.premium_loading) * mu
            - (1.0 + self.reinsurance_loading) * (1.0 - a) * mu
            - a * mu;
        let investment = (s * r.risky_return + (1.0 - s - l) * self.risk_free_rate) * excess;
        let reward = underwriting + investment;
        let vol = s * r.risky_volatility * excess;
        Coefficients {
            drift: reward - l * excess,
            diffusion_sq: a * a * var + vol * vol,
            reward,
        }
    }

    fn jacobian(&self, x: f64, regime: usize, u: &Control) -> (Coefficients, CoefficientJacobian) {
        let (mu, var) = self.claim_moments_unchecked(regime);
        let r = &self.regimes[regime];
        let excess = (x - self.threshold).max(0.0);
        let r2 = self.risk_free_rate;
        let d_reward = [
            self.reinsurance_loading * mu,
            (r.risky_return - r2) * excess,
            -r2 * excess,
        ];
        let jac = CoefficientJacobian {
            drift: [d_reward[0], d_reward[1], d_reward[2] - excess],
            diffusion_sq: [
                2.0 * u.retention * var,
                2.0 * u.risky * (r.risky_volatility * excess).powi(2),
                0.0,
            ],
            reward: d_reward,
        };
        (self.coefficients(x, regime, u), jac)
    }
}

/// Replaces the running reward by a constant; every policy then earns exactly
/// that constant per unit time.
#[derive(Debug, Clone)]
pub struct ConstantReward<'a, D: ?Sized> {
    pub inner: &'a D,
    pub value: f64,
}

impl<D: Dynamics + ?Sized> Dynamics for ConstantReward<'_, D> {
    fn params(&self) -> &ModelParams {
        self.inner.params()
    }

    fn coefficients(&self, x: f64, regime: usize, u: &Control) -> Coefficients {
        Coefficients {
            reward: self.value,
            ..self.inner.coefficients(x, regime, u)
        }
    }

    fn jacobian(&self, x: f64, regime: usize, u: &Control) -> (Coefficients, CoefficientJacobian) {
        let (c, j) = self.inner.jacobian(x, regime, u);
        (
            Coefficients {
                reward: self.value,
                ..c
            },
            CoefficientJacobian {
                reward: [0.0; 3],
                ..j
            },
        )
    }
}

/// Switches the diffusion off. Only meaningful for simulation; the lattice
/// needs a strictly positive variance.
#[derive(Debug, Clone)]
pub struct Noiseless<'a, D: ?Sized> {
    pub inner: &'a D,
}

impl<D: Dynamics + ?Sized> Dynamics for Noiseless<'_, D> {
    fn params(&self) -> &ModelParams {
        self.inner.params()
    }

    fn coefficients(&self, x: f64, regime: usize, u: &Control) -> Coefficients {
        Coefficients {
            diffusion_sq: 0.0,
            ..self.inner.coefficients(x, regime, u)
        }
    }

    fn jacobian(&self, x: f64, regime: usize, u: &Control) -> (Coefficients, CoefficientJacobian) {
        let (c, j) = self.inner.jacobian(x, regime, u);
        (
            Coefficients {
                diffusion_sq: 0.0,
                ..c
            },
            CoefficientJacobian {
                diffusion_sq: [0.0; 3],
                ..j
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p() -> ModelParams {
        ModelParams::table1()
    }

    #[test]
    fn table1_is_valid() {
        p().validate().unwrap();
    }

    #[test]
    fn claim_moments_examples() {
        let (mu, var) = p().claim_moments(0).unwrap();
        assert_abs_diff_eq!(mu, 0.13, epsilon = 1e-15);
        assert_abs_diff_eq!(var, 0.13, epsilon = 1e-15);
        let (mu, var) = p().claim_moments(1).unwrap();
        assert_abs_diff_eq!(mu, 0.28, epsilon = 1e-15);
        assert_abs_diff_eq!(var, 0.28, epsilon = 1e-15);

        let mut unit = p();
        unit.regimes[0].claim_intensity = 1.0;
        assert_eq!(unit.claim_moments(0).unwrap(), (1.0, 1.0));

        assert!(matches!(
            p().claim_moments(2),
            Err(Error::RegimeIndex { index: 2, count: 2 })
        ));
    }

    #[test]
    fn premium_examples() {
        assert_abs_diff_eq!(p().premium(0).unwrap(), 0.1495, epsilon = 1e-12);
        assert_abs_diff_eq!(p().premium(1).unwrap(), 0.322, epsilon = 1e-12);
        let mut flat = p();
        flat.premium_loading = 0.0;
        assert_eq!(flat.premium(1).unwrap(), flat.claim_moments(1).unwrap().0);
    }

    #[test]
    fn reinsurance_premium_examples() {
        assert_eq!(p().reinsurance_premium(0, 1.0).unwrap(), 0.0);
        assert_eq!(p().reinsurance_premium(1, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            p().reinsurance_premium(0, 0.4).unwrap(),
            0.0975,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            p().reinsurance_premium(1, 0.4).unwrap(),
            0.21,
            epsilon = 1e-12
        );
        assert!(matches!(
            p().reinsurance_premium(0, 1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            p().reinsurance_premium(0, -0.1),
            Err(Error::Domain(_))
        ));
    }

    const U: Control = Control::new(1.0, 0.3, 0.062);

    #[test]
    fn drift_examples() {
        let p = p();
        assert_abs_diff_eq!(
            p.drift(State::new(4.0, 0), &U).unwrap(),
            -0.03098,
            epsilon = 1e-12
        );
        for x in [-3.0, 0.0, 1.5, 2.0] {
            for (s, l) in [(0.0, 0.0), (0.3, 0.062), (0.1, 0.5)] {
                let b = p.drift(State::new(x, 0), &Control::new(1.0, s, l)).unwrap();
                assert_abs_diff_eq!(b, 0.0195, epsilon = 1e-12);
            }
        }
        assert!(matches!(
            p.drift(State::new(4.0, 0), &Control::new(0.1, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn diffusion_examples() {
        let p = p();
        assert_abs_diff_eq!(
            p.diffusion_sq(State::new(4.0, 0), &U).unwrap(),
            0.1444,
            epsilon = 1e-12
        );
        let v = p
            .diffusion_sq(State::new(1.0, 1), &Control::new(0.5, 0.2, 0.1))
            .unwrap();
        assert_abs_diff_eq!(v, 0.25 * 0.28, epsilon = 1e-15);
        let v = p
            .diffusion_sq(State::new(7.0, 1), &Control::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_abs_diff_eq!(v, 0.28, epsilon = 1e-15);
    }

    #[test]
    fn reward_examples() {
        let p = p();
        let st = State::new(4.0, 0);
        assert_abs_diff_eq!(p.reward(st, &U).unwrap(), 0.09302, epsilon = 1e-12);
        let below = p
            .reward(State::new(1.0, 0), &Control::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_abs_diff_eq!(below, 0.0195, epsilon = 1e-12);
        let gap = p.reward(st, &U).unwrap() - p.drift(st, &U).unwrap();
        assert_abs_diff_eq!(gap, 0.124, epsilon = 1e-12);
    }

    #[test]
    fn admissibility_examples() {
        let p = p();
        assert!(p.is_admissible(State::new(5.0, 0), &Control::new(0.7, 0.3, 0.062)));
        assert!(!p.is_admissible(State::new(1.0, 0), &Control::new(0.7, 0.1, 0.0)));
        assert!(!p.is_admissible(State::new(5.0, 0), &Control::new(0.5, 0.3, 0.8)));
        // dividends strictly between 0 and the minimum are not allowed
        assert!(!p.is_admissible(State::new(5.0, 0), &Control::new(0.5, 0.1, 0.03)));
        assert!(p.is_admissible(State::new(5.0, 1), &Control::new(0.5, 0.1, 0.0)));
        assert!(!p.is_admissible(State::new(5.0, 2), &Control::new(0.5, 0.1, 0.0)));
    }

    #[test]
    fn validation_reports_every_violation() {
        let mut bad = p();
        bad.reinsurance_loading = 0.1;
        bad.risk_free_rate = 0.09;
        bad.generator[0][1] = 0.07;
        let errs = bad.validate_at("model.").unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.starts_with("model.reinsurance_loading") && e.contains("beta > rho")));
        assert!(errs
            .iter()
            .any(|e| e.starts_with("model.regimes[0].risky_return")));
        assert!(errs
            .iter()
            .any(|e| e.starts_with("model.regimes[1].risky_return")));
        assert!(errs.iter().any(|e| e.starts_with("model.generator[0]")));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = p();
        let u = Control::new(0.7, 0.2, 0.3);
        let (_, jac) = p.jacobian(5.5, 1, &u);
        let eps = 1e-6;
        for k in 0..3 {
            let mut up = u.as_array();
            let mut dn = u.as_array();
            up[k] += eps;
            dn[k] -= eps;
            let cu = p.coefficients(5.5, 1, &Control::new(up[0], up[1], up[2]));
            let cd = p.coefficients(5.5, 1, &Control::new(dn[0], dn[1], dn[2]));
            assert_abs_diff_eq!(
                jac.drift[k],
                (cu.drift - cd.drift) / (2.0 * eps),
                epsilon = 1e-8
            );
            assert_abs_diff_eq!(
                jac.reward[k],
                (cu.reward - cd.reward) / (2.0 * eps),
                epsilon = 1e-8
            );
            assert_abs_diff_eq!(
                jac.diffusion_sq[k],
                (cu.diffusion_sq - cd.diffusion_sq) / (2.0 * eps),
                epsilon = 1e-8
            );
        }
    }

    fn control_strategy() -> impl Strategy<Value = Control> {
        let p = ModelParams::table1();
        (
            p.min_retention..=1.0,
            0.0..=p.max_risky,
            prop_oneof![Just(0.0), p.min_dividend..=1.0],
        )
            .prop_map(|(a, s, l): (f64, f64, f64)| Control::new(a, s, l.min(1.0 - s)))
            .prop_filter("dividend projection may fall below the minimum", move |u| {
                u.dividend == 0.0 || u.dividend >= 0.062
            })
    }

    proptest! {
        #[test]
        fn threshold_region_ignores_investment_and_dividends(
            x in -10.0..=2.0f64, regime in 0usize..2, u in control_strategy()
        ) {
            let p = p();
            let c = p.coefficients(x, regime, &u);
            let c0 = p.coefficients(x, regime, &Control::new(u.retention, 0.0, 0.0));
            prop_assert_eq!(c, c0);
        }

        #[test]
        fn reward_minus_drift_is_dividend_outflow(
            x in -10.0..=10.0f64, regime in 0usize..2, u in control_strategy()
        ) {
            let p = p();
            let c = p.coefficients(x, regime, &u);
            let outflow = u.dividend * (x - p.threshold).max(0.0);
            prop_assert!((c.reward - c.drift - outflow).abs() <= 1e-14);
        }

        #[test]
        fn linear_growth_bound_holds(
            x in -50.0..=50.0f64, regime in 0usize..2, u in control_strategy()
        ) {
            let p = p();
            let c = p.coefficients(x, regime, &u);
            let bound = p.linear_growth_constant() * (1.0 + x.abs());
            prop_assert!(c.drift.abs() + c.diffusion_sq.sqrt() <= bound);
        }
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        for row in &p().generator {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
