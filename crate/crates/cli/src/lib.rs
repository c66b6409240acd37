//! Orchestration for the `mcam` binary: config ingestion, the run modes and
//! the files each one writes.
//!
//! Every mode writes `config.json` (the effective config) and `gain.json`
//! into the output directory. The rest depends on the mode:
//!
//! | mode          | files |
//! |---------------|-------|
//! | `rvi`         | `policy.csv`, `values.csv` on the coarse lattice |
//! | `refine`      | `policy.csv`, `values.csv`, `coarse_policy.csv`, `checkpoint.json`, `rounds.csv`, `objective.csv`, `fit_loss.csv` |
//! | `full`        | everything `refine` writes plus `occupation.csv` and `trace.csv` |
//! | `simulate`    | `occupation.csv`, `trace.csv` |
//! | `eval-policy` | `policy.csv`, `values.csv` |

pub mod config;
pub mod io;
pub mod run;

pub use config::{
    parse_config, parse_config_str, ConfigError, GridSpec, Mode, RefineSpec, RunConfig,
};
pub use run::{load_policy, run, GainReport, MonteCarloSummary, RunOptions, RunOutcome, Status};
