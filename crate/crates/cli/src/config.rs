//! Run configuration: one JSON document holding the model, both lattices and
//! every solver, training and simulation setting.

use std::fmt;
use std::path::Path;

use mcam::refine::{IterateConfig, TrainConfig};
use mcam::sim::SimConfig;
use mcam::solver::RviConfig;
use mcam::{Grid, ModelParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Relative value iteration on the coarse lattice.
    Rvi,
    /// The full refinement loop on the fine lattice.
    Refine,
    /// Monte-Carlo simulation of a given policy.
    Simulate,
    /// Exact gain and relative values of a given policy.
    EvalPolicy,
    /// Refinement followed by simulation of the refined policy.
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Rvi => "rvi",
            Mode::Refine => "refine",
            Mode::Simulate => "simulate",
            Mode::EvalPolicy => "eval-policy",
            Mode::Full => "full",
        };
        f.write_str(name)
    }
}

/// Lattice steps. The boundary and threshold come from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Step of the coarse lattice searched by relative value iteration.
    pub coarse_step: f64,
    /// Step of the fine lattice the network is refined on.
    pub fine_step: f64,
}

/// Outer-loop settings of the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSpec {
    /// Stop once `Σ |V^k − V^{k−1}|` falls below this.
    pub epsilon: f64,
    pub max_rounds: usize,
}

impl Default for RefineSpec {
    fn default() -> Self {
        let d = IterateConfig::default();
        Self {
            epsilon: d.epsilon,
            max_rounds: d.max_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grids: GridSpec,
    #[serde(default)]
    pub rvi: RviConfig,
    #[serde(default)]
    pub refine: RefineSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
    /// Used when no mode is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

/// Every problem found in a config, each prefixed by its field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.errors {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(msg: String) -> Self {
        Self { errors: vec![msg] }
    }
}

/// Reads, parses and fully validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ConfigError::single(inner.to_string())
        } else {
            ConfigError::single(format!("{path}: {inner}"))
        }
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// The parameters of the worked example with the default settings.
    pub fn table1() -> Self {
        Self {
            model: ModelParams::table1(),
            grids: GridSpec {
                coarse_step: 0.5,
                fine_step: 0.1,
            },
            rvi: RviConfig::default(),
            refine: RefineSpec::default(),
            train: TrainConfig::default(),
            sim: SimConfig::default(),
            mode: None,
        }
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let model_ok = match self.model.validate_at("model.") {
            Ok(()) => true,
            Err(e) => {
                errors.extend(e);
                false
            }
        };
        errors.extend(self.grid_errors(model_ok));
        if let Err(e) = self.rvi.validate_at("rvi.") {
            errors.extend(e);
        }
        if let Err(e) = self.train.validate_at("train.") {
            errors.extend(e);
        }
        if !(self.refine.epsilon > 0.0) {
            errors.push(format!(
                "refine.epsilon: must be > 0, got {}",
                self.refine.epsilon
            ));
        }
        if self.refine.max_rounds == 0 {
            errors.push("refine.max_rounds: must be at least 1".into());
        }
        let m = self.model.regime_count();
        let shape_ok = m > 0
            && self.model.generator.len() == m
            && self.model.generator.iter().all(|r| r.len() == m);
        if shape_ok {
            if let Err(e) = self.sim.validate_at(&self.model, "sim.") {
                errors.extend(e);
            }
        }
        if model_ok {
            if let Some((node, regime)) = self.rvi.reference {
                if let Ok(coarse) = self.coarse_grid() {
                    if !coarse.is_interior(node) || regime >= self.model.regime_count() {
                        errors.push(format!(
                            "rvi.reference: ({node}, {regime}) is not an interior state of the coarse lattice"
                        ));
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { errors })
        }
    }

    fn grid_errors(&self, model_ok: bool) -> Vec<String> {
        let GridSpec {
            coarse_step,
            fine_step,
        } = self.grids;
        let mut errors = Vec::new();
        for (name, v) in [("coarse_step", coarse_step), ("fine_step", fine_step)] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("grids.{name}: must be positive, got {v}"));
            }
        }
        if !errors.is_empty() {
            return errors;
        }
        let ratio = coarse_step / fine_step;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio {
            errors.push(format!(
                "grids.coarse_step: {coarse_step} is not an integer multiple of fine_step {fine_step}"
            ));
        } else if k < 2.0 {
            errors.push(format!(
                "grids.coarse_step: must be at least twice fine_step, got ratio {k}"
            ));
        }
        if model_ok {
            for (name, h) in [("coarse_step", coarse_step), ("fine_step", fine_step)] {
                if let Err(e) = Grid::for_model(&self.model, h) {
                    errors.push(format!("grids.{name}: {e}"));
                }
            }
        }
        errors
    }

    pub fn coarse_grid(&self) -> mcam::Result<Grid> {
        Grid::for_model(&self.model, self.grids.coarse_step)
    }

    pub fn fine_grid(&self) -> mcam::Result<Grid> {
        Grid::for_model(&self.model, self.grids.fine_step)
    }

    pub fn iterate_config(&self) -> IterateConfig {
        IterateConfig {
            rvi: self.rvi,
            train: self.train,
            epsilon: self.refine.epsilon,
            max_rounds: self.refine.max_rounds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
