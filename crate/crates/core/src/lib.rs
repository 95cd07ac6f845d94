//! On-policy reinforcement learning with a KL-penalized policy update whose
//! fixup phase guarantees `max_s KL(π_new(s), π_old(s)) ≤ eps_kl` after every
//! policy improvement step.
//!
//! The crate is generic over the floating-point type through [`Scalar`]; the
//! `*64` aliases below fix it to `f64`, which the experiment harness uses.
//!
//! Layout:
//! - [`autodiff`], [`adam`], [`nn`]: reverse-mode differentiation, the optimizer
//!   and the policy/value networks.
//! - [`dist`]: Gaussian and categorical action distributions.
//! - [`env`], [`rollout`]: environments, trajectory collection, GAE, minibatching.
//! - [`engine`]: losses, the β controller, primary and fixup phases, PPO-clip.

pub mod adam;
pub mod autodiff;
pub mod dist;
pub mod engine;
pub mod env;
mod error;
pub mod nn;
pub mod rng;
pub mod rollout;
mod scalar;
mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub use adam::{AdamConfig, AdamState};
pub use dist::{Action, ActionSpace, Actions, DistParams, DistVars};
pub use engine::{
    policy_improvement_step, Ablation, BetaState, FixPo, KlDirection, PolicyOptimizer, PpoClip,
    StepReport, TrustRegionConfig, UpdateStats,
};
pub use env::{ChainWalk, EnvId, Environment, PointMass2D, StepOutcome};
pub use nn::{NetworkConfig, PolicyParams, Snapshot};
pub use rollout::{EnvSet, EpisodeEnd, RolloutConfig, TrajectoryBatch};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type PolicyParams64 = PolicyParams<f64>;
pub type PolicyParams32 = PolicyParams<f32>;
pub type DistParams64 = DistParams<f64>;
pub type TrajectoryBatch64 = TrajectoryBatch<f64>;
pub type FixPo64 = FixPo<f64>;
pub type PpoClip64 = PpoClip<f64>;
pub type EnvSet64 = EnvSet<f64>;
