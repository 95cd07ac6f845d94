//! Environment interface and the built-in toy tasks.

mod chain_walk;
mod point_mass;

pub use chain_walk::{ChainWalk, Start};
pub use point_mass::PointMass2D;

use serde::{Deserialize, Serialize};

use crate::dist::{Action, ActionSpace};
use crate::error::Result;
use crate::scalar::Scalar;

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub state: Vec<T>,
    pub reward: T,
    /// The episode reached a terminal state; its value is zero.
    pub terminated: bool,
    /// The episode hit the horizon; its value must be bootstrapped.
    pub truncated: bool,
}

/// An episodic MDP.
///
/// `reset` with equal seeds must yield equal initial states, and `step` must be
/// a deterministic function of the state and the internal RNG seeded by `reset`.
pub trait Environment<T: Scalar>: Send {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Maximum episode length.
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<T>;
    fn step(&mut self, action: &Action<T>) -> Result<StepOutcome<T>>;
}

/// Built-in environment identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    #[serde(rename = "point_mass_2d", alias = "point_mass2d")]
    PointMass2d,
    ChainWalk,
}

impl EnvId {
    pub fn make<T: Scalar>(self) -> Box<dyn Environment<T>> {
        match self {
            EnvId::PointMass2d => Box::new(PointMass2D::new()),
            EnvId::ChainWalk => Box::new(ChainWalk::new()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::PointMass2d => "point_mass_2d",
            EnvId::ChainWalk => "chain_walk",
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
