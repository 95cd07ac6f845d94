//! KL-penalized updates with a fixup phase that enforces the per-state trust region.
//!
//! Each epoch runs the primary phase (one θ step on `L_θ` and one β step on
//! `L_β` per minibatch) and then, depending on the ablation mode, the fixup
//! phase: minibatches are re-scanned and any minibatch containing a state with
//! `KL > eps_kl` gets a θ step on `β·L_KL` plus a β step, until a full scan
//! finds no violation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::PolicyParams;
use crate::rollout::{minibatches, Minibatch, TrajectoryBatch};
use crate::scalar::Scalar;

use super::beta::{beta_loss_grad, BetaState};
use super::config::{Ablation, KlDirection, TrustRegionConfig};
use super::losses::{kl_penalty_loss, mean_kl_exit_test, minibatch_losses, per_state_kl};
use super::{PolicyOptimizer, UpdateStats};

/// Work done by one fixup phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FixupOutcome {
    pub grad_steps: usize,
    /// Full scans over the batch, including the final clean one.
    pub passes: usize,
    /// Times θ's learning rate was halved by the plateau safeguard.
    pub lr_halvings: usize,
}

/// The trust-region optimizer: θ's Adam state, β and the minibatch RNG.
#[derive(Debug, Clone)]
pub struct FixPo<T> {
    cfg: TrustRegionConfig,
    adam: AdamState<T>,
    beta: BetaState<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> FixPo<T> {
    pub fn new(cfg: TrustRegionConfig, params: &PolicyParams<T>, rng: ChaCha8Rng) -> Result<Self> {
        let bad = cfg.violations();
        if !bad.is_empty() {
            return Err(Error::Config(bad.join("; ")));
        }
        for w in cfg.warnings() {
            log::warn!("{w}");
        }
        Ok(Self {
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr_theta), params.tensors()),
            beta: BetaState::new(&cfg),
            cfg,
            rng,
        })
    }

    /// Seeded convenience constructor.
    pub fn with_seed(cfg: TrustRegionConfig, params: &PolicyParams<T>, seed: u64) -> Result<Self> {
        Self::new(cfg, params, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &TrustRegionConfig {
        &self.cfg
    }

    pub fn beta_state(&self) -> &BetaState<T> {
        &self.beta
    }

    pub fn beta_state_mut(&mut self) -> &mut BetaState<T> {
        &mut self.beta
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// KL statistic driving β: max over states, or mean under the mean-KL ablation.
    fn controller_kl(&self, kls: &[T]) -> T {
        if self.cfg.ablation == Ablation::MeanKl {
            kls.iter().copied().sum::<T>() / T::from_usize_lossy(kls.len().max(1))
        } else {
            kls.iter().copied().fold(T::zero(), T::max)
        }
    }

    fn violates(&self, kls: &[T]) -> bool {
        let eps = T::c(self.cfg.eps_kl);
        if self.cfg.ablation == Ablation::MeanKl {
            !mean_kl_exit_test(kls, eps)
        } else {
            kls.iter().any(|&k| k > eps)
        }
    }

    /// β step from the KL measured on `mb` under the current θ.
    fn beta_step(&mut self, params: &PolicyParams<T>, mb: &Minibatch<T>, stats: &mut UpdateStats) -> Result<()> {
        if self.beta.is_frozen() {
            return Ok(());
        }
        let kls = per_state_kl(params, mb, self.cfg.kl_direction)?;
        let grad = beta_loss_grad(
            self.controller_kl(&kls),
            T::c(self.cfg.eps_kl),
            T::c(self.cfg.c_beta),
        );
        self.beta.step(grad)?;
        stats.beta_trace.push(self.beta.value().f64());
        Ok(())
    }

    /// One epoch of the primary phase over shuffled minibatches.
    pub fn primary_epoch(
        &mut self,
        params: &mut PolicyParams<T>,
        batch: &TrajectoryBatch<T>,
        stats: &mut UpdateStats,
    ) -> Result<()> {
        for idx in minibatches(batch.len(), self.cfg.minibatch_size, &mut self.rng) {
            let mb = batch.minibatch(&idx);
            let g = Graph::new();
            let losses = minibatch_losses(&g, params, &mb, self.beta.value(), &self.cfg)?;
            stats.record_losses(
                losses.loss_pi.item().f64(),
                losses.loss_vf.item().f64(),
                losses.kl.mean.item().f64(),
            );
            let grads = g.backward(losses.total)?;
            params.apply_gradients(&mut self.adam, &grads, &losses.leaves)?;
            stats.primary_grad_steps += 1;
            self.beta_step(params, &mb, stats)?;
        }
        Ok(())
    }

    /// Repeats full scans until no minibatch violates the trust region.
    pub fn fixup_phase(
        &mut self,
        params: &mut PolicyParams<T>,
        batch: &TrajectoryBatch<T>,
        stats: &mut UpdateStats,
    ) -> Result<FixupOutcome> {
        let base_lr = self.adam.lr();
        self.beta.plateau.reset();
        let mut out = FixupOutcome::default();
        let result = self.fixup_loop(params, batch, stats, &mut out);
        self.adam.set_lr(base_lr);
        result.map(|()| out)
    }

    fn fixup_loop(
        &mut self,
        params: &mut PolicyParams<T>,
        batch: &TrajectoryBatch<T>,
        stats: &mut UpdateStats,
        out: &mut FixupOutcome,
    ) -> Result<()> {
        loop {
            if out.passes >= self.cfg.fixup_pass_cap {
                let kls = per_state_kl(params, &batch.full(), self.cfg.kl_direction)?;
                return Err(Error::FixupCap {
                    passes: out.passes,
                    max_kl: kls.iter().map(|k| k.f64()).fold(0.0, f64::max),
                    eps_kl: self.cfg.eps_kl,
                    beta: self.beta.value().f64(),
                });
            }
            out.passes += 1;
            let mut fixed = true;
            let mut pass_max = T::zero();
            for idx in minibatches(batch.len(), self.cfg.minibatch_size, &mut self.rng) {
                let mb = batch.minibatch(&idx);
                let g = Graph::new();
                let leaves = params.leaves(&g);
                let new = params.forward_dist(&leaves, &mb.states)?;
                let old = mb.behavior.to_vars(&g);
                let kl = kl_penalty_loss(&new, &old, self.cfg.kl_direction)?;
                pass_max = pass_max.max(kl.max);
                if !kl.per_state.with_value(|v| self.violates(v)) {
                    continue;
                }
                fixed = false;
                let loss = kl.mean.scale_by(g.constant_scalar(self.beta.value()));
                let grads = g.backward(loss)?;
                params.apply_gradients(&mut self.adam, &grads, &leaves)?;
                out.grad_steps += 1;
                self.beta_step(params, &mb, stats)?;
            }
            if fixed {
                return Ok(());
            }
            if self.beta.plateau.observe(pass_max.f64()) {
                self.adam.set_lr(self.adam.lr() * 0.5);
                out.lr_halvings += 1;
            }
        }
    }

    /// Primary phase over all epochs with the fixup phase placed per the ablation mode.
    pub fn primary_phase(
        &mut self,
        params: &mut PolicyParams<T>,
        batch: &TrajectoryBatch<T>,
    ) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        let n_epochs = self.cfg.n_epochs;
        for epoch in 0..n_epochs {
            self.primary_epoch(params, batch, &mut stats)?;
            let last = epoch + 1 == n_epochs;
            if last {
                let kls = per_state_kl(params, &batch.full(), self.cfg.kl_direction)?;
                stats.primary_end_max_kl = Some(kls.iter().map(|k| k.f64()).fold(0.0, f64::max));
            }
            let run_fixup = match self.cfg.ablation {
                Ablation::NoFixup => false,
                Ablation::FixupLastEpochOnly => last,
                Ablation::None | Ablation::MeanKl | Ablation::ConstantBeta => true,
            };
            if run_fixup {
                let f = self.fixup_phase(params, batch, &mut stats)?;
                stats.fixup_grad_steps += f.grad_steps;
                stats.fixup_passes += f.passes;
                stats.lr_halvings += f.lr_halvings;
            }
        }
        Ok(stats)
    }
}

impl<T: Scalar> PolicyOptimizer<T> for FixPo<T> {
    fn update(&mut self, params: &mut PolicyParams<T>, batch: &TrajectoryBatch<T>) -> Result<UpdateStats> {
        self.primary_phase(params, batch)
    }

    fn beta(&self) -> Option<f64> {
        Some(self.beta.value().f64())
    }

    fn enforces_trust_region(&self) -> bool {
        self.cfg.ablation.enforces_max_kl()
    }

    fn kl_direction(&self) -> KlDirection {
        self.cfg.kl_direction
    }
}
