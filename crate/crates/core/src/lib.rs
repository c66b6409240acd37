//! Long-run average reinsurance, investment and dividend control for a
//! regime-switching surplus diffusion.
//!
//! The pipeline discretizes the surplus into a locally consistent Markov
//! chain ([`lattice`]), solves the average-reward dynamic programming
//! equation on a coarse lattice by relative value iteration ([`solver`]),
//! refines the resulting policy with a small neural network on a fine
//! lattice ([`refine`]), and checks the answer against Monte-Carlo
//! simulation of the original diffusion ([`sim`]).

pub mod error;
pub mod lattice;
pub mod model;
pub mod refine;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use lattice::{chain_step_moments, transitions, Grid, RowKind, TransitionRow};
pub use model::{Control, Dynamics, ModelParams, RegimeParams, State};
