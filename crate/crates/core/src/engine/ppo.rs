//! PPO-clip baseline: same epoch/minibatch loop, clipped surrogate, no β and no fixup.

use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::PolicyParams;
use crate::rollout::{minibatches, TrajectoryBatch};
use crate::scalar::Scalar;

use super::config::{KlDirection, TrustRegionConfig, VALUE_CLIP_RANGE};
use super::losses::{kl_penalty_loss, ppo_clip_loss, value_loss};
use super::{PolicyOptimizer, UpdateStats};

/// Runs `n_epochs` of clipped-surrogate updates on `batch`.
pub fn ppo_clip_update<T: Scalar>(
    params: &mut PolicyParams<T>,
    adam: &mut AdamState<T>,
    batch: &TrajectoryBatch<T>,
    cfg: &TrustRegionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let clip = T::c(cfg.clip_eps);
    let vclip = cfg.value_clip.then(|| T::c(VALUE_CLIP_RANGE));
    for _ in 0..cfg.n_epochs {
        for idx in minibatches(batch.len(), cfg.minibatch_size, rng) {
            let mb = batch.minibatch(&idx);
            let g = Graph::new();
            let leaves = params.leaves(&g);
            let out = params.forward(&leaves, &mb.states)?;
            let new_lp = out.dist.log_prob(&mb.actions)?;
            let surrogate = ppo_clip_loss(new_lp, &mb.log_probs, &mb.advantages, clip)?;
            let vf = value_loss(out.value, &mb.values, &mb.returns, vclip);
            let kl = kl_penalty_loss(&out.dist, &mb.behavior.to_vars(&g), cfg.kl_direction)?;
            stats.record_losses(surrogate.item().f64(), vf.item().f64(), kl.mean.item().f64());
            let total = surrogate + vf * T::c(cfg.value_coef);
            let grads = g.backward(total)?;
            params.apply_gradients(adam, &grads, &leaves)?;
            stats.primary_grad_steps += 1;
        }
    }
    Ok(stats)
}

/// Stateful PPO-clip optimizer.
#[derive(Debug, Clone)]
pub struct PpoClip<T> {
    cfg: TrustRegionConfig,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> PpoClip<T> {
    pub fn new(cfg: TrustRegionConfig, params: &PolicyParams<T>, rng: ChaCha8Rng) -> Result<Self> {
        let bad = cfg.violations();
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        Ok(Self {
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr_theta), params.tensors()),
            cfg,
            rng,
        })
    }
}

impl<T: Scalar> PolicyOptimizer<T> for PpoClip<T> {
    fn update(&mut self, params: &mut PolicyParams<T>, batch: &TrajectoryBatch<T>) -> Result<UpdateStats> {
        ppo_clip_update(params, &mut self.adam, batch, &self.cfg, &mut self.rng)
    }

    fn beta(&self) -> Option<f64> {
        None
    }

    fn enforces_trust_region(&self) -> bool {
        false
    }

    fn kl_direction(&self) -> KlDirection {
        self.cfg.kl_direction
    }
}
