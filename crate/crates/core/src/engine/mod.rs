//! Policy optimizers and the outer policy-improvement loop.

mod beta;
mod config;
mod fixpo;
pub mod losses;
mod ppo;

pub use beta::{beta_loss_grad, BetaState, PlateauDetector};
pub use config::{Ablation, KlDirection, TrustRegionConfig, VALUE_CLIP_RANGE};
pub use fixpo::{FixPo, FixupOutcome};
pub use ppo::{ppo_clip_update, PpoClip};

use rand::Rng;

use crate::dist::DistParams;
use crate::error::Result;
use crate::nn::PolicyParams;
use crate::rollout::{rollout, EnvSet, RolloutConfig, TrajectoryBatch};
use crate::scalar::Scalar;

/// Counters and loss averages accumulated during one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub primary_grad_steps: usize,
    pub fixup_grad_steps: usize,
    pub fixup_passes: usize,
    pub lr_halvings: usize,
    /// β after every β update, in order.
    pub beta_trace: Vec<f64>,
    /// Max per-state KL over the batch at the end of the last epoch's primary
    /// phase, before any fixup.
    pub primary_end_max_kl: Option<f64>,
    loss_sums: [f64; 3],
    loss_count: usize,
}

impl UpdateStats {
    fn record_losses(&mut self, pi: f64, vf: f64, kl: f64) {
        self.loss_sums[0] += pi;
        self.loss_sums[1] += vf;
        self.loss_sums[2] += kl;
        self.loss_count += 1;
    }

    /// Mean `(L_π, L_VF, L_KL)` over primary-phase minibatches.
    pub fn mean_losses(&self) -> (f64, f64, f64) {
        if self.loss_count == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.loss_count as f64;
        (self.loss_sums[0] / n, self.loss_sums[1] / n, self.loss_sums[2] / n)
    }
}

/// Anything that turns a batch into a parameter update.
pub trait PolicyOptimizer<T: Scalar> {
    fn update(&mut self, params: &mut PolicyParams<T>, batch: &TrajectoryBatch<T>) -> Result<UpdateStats>;
    /// Current KL penalty coefficient, if the optimizer has one.
    fn beta(&self) -> Option<f64>;
    /// Whether the per-state trust region is guaranteed at update exit.
    fn enforces_trust_region(&self) -> bool;
    fn kl_direction(&self) -> KlDirection;
}

/// Metrics of one policy improvement step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Zero-based index of the improvement step (set by the caller's loop).
    pub step: usize,
    /// Timesteps in this step's batch.
    pub batch_steps: usize,
    pub episodes: usize,
    pub avg_return: f64,
    /// Mean per-state KL between the updated policy and the snapshot.
    pub mean_kl: f64,
    /// Max per-state KL between the updated policy and the snapshot.
    pub max_kl_at_exit: f64,
    pub beta: Option<f64>,
    pub beta_trace: Vec<f64>,
    pub primary_grad_steps: usize,
    pub fixup_grad_steps: usize,
    pub fixup_passes: usize,
    pub lr_halvings: usize,
    pub primary_end_max_kl: Option<f64>,
    /// Mean entropy of the updated policy over the batch states.
    pub entropy: f64,
    pub loss_pi: f64,
    pub loss_vf: f64,
    pub loss_kl: f64,
    pub trust_region_enforced: bool,
}

/// Per-state KL of `new` against `old` in the requested direction.
pub fn directional_kl<T: Scalar>(
    new: &DistParams<T>,
    old: &DistParams<T>,
    direction: KlDirection,
) -> Result<Vec<T>> {
    match direction {
        KlDirection::NewOld => new.kl(old),
        KlDirection::OldNew => old.kl(new),
    }
}

/// Rollout, snapshot, update and exit measurement.
///
/// The returned batch holds the snapshot's per-state distributions, so callers
/// can recompute the exit KL independently.
pub fn policy_improvement_step<T: Scalar, R: Rng + ?Sized>(
    params: &mut PolicyParams<T>,
    optimizer: &mut dyn PolicyOptimizer<T>,
    envs: &mut EnvSet<T>,
    rollout_cfg: &RolloutConfig,
    batch_timesteps: usize,
    rng: &mut R,
) -> Result<(StepReport, TrajectoryBatch<T>)> {
    let batch = rollout(params, envs, batch_timesteps, rollout_cfg, rng)?;
    let stats = optimizer.update(params, &batch)?;

    let new = params.evaluate_dist(&batch.states)?;
    let kls = directional_kl(&new, &batch.behavior, optimizer.kl_direction())?;
    let n = kls.len().max(1) as f64;
    let entropy = new.entropy().iter().map(|e| e.f64()).sum::<f64>() / n;
    let (loss_pi, loss_vf, loss_kl) = stats.mean_losses();

    let report = StepReport {
        step: 0,
        batch_steps: batch.len(),
        episodes: batch.episode_returns.len(),
        avg_return: batch.average_return(),
        mean_kl: kls.iter().map(|k| k.f64()).sum::<f64>() / n,
        max_kl_at_exit: kls.iter().map(|k| k.f64()).fold(0.0, f64::max),
        beta: optimizer.beta(),
        beta_trace: stats.beta_trace,
        primary_grad_steps: stats.primary_grad_steps,
        fixup_grad_steps: stats.fixup_grad_steps,
        fixup_passes: stats.fixup_passes,
        lr_halvings: stats.lr_halvings,
        primary_end_max_kl: stats.primary_end_max_kl,
        entropy,
        loss_pi,
        loss_vf,
        loss_kl,
        trust_region_enforced: optimizer.enforces_trust_region(),
    };
    Ok((report, batch))
}
