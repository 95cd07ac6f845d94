//! The KL-penalty multiplier β and its controller.

use crate::adam::{AdamConfig, AdamState};
use crate::error::Result;
use crate::scalar::Scalar;

use super::config::TrustRegionConfig;

/// `∂L_β/∂β` for `L_β = β · sg[eps_kl − c_beta · kl]`.
///
/// Negative when the measured KL overshoots `eps_kl / c_beta`, so a descent
/// step raises β; positive when it undershoots.
pub fn beta_loss_grad<T: Scalar>(kl: T, eps_kl: T, c_beta: T) -> T {
    eps_kl - c_beta * kl
}

/// Counts consecutive observations without a new minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauDetector {
    best: f64,
    stall: usize,
    patience: usize,
}

impl PlateauDetector {
    pub fn new(patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            stall: 0,
            patience: patience.max(1),
        }
    }

    pub fn reset(&mut self) {
        self.best = f64::INFINITY;
        self.stall = 0;
    }

    /// Records `x`; returns true once `patience` observations in a row failed
    /// to improve on the best value, then starts counting again.
    pub fn observe(&mut self, x: f64) -> bool {
        if x < self.best {
            self.best = x;
            self.stall = 0;
            return false;
        }
        self.stall += 1;
        if self.stall >= self.patience {
            self.stall = 0;
            return true;
        }
        false
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stall(&self) -> usize {
        self.stall
    }
}

/// β with its Adam state, clamp bounds and the fixup plateau detector.
#[derive(Debug, Clone)]
pub struct BetaState<T> {
    value: T,
    adam: AdamState<T>,
    min: T,
    max: T,
    frozen: bool,
    pub plateau: PlateauDetector,
}

impl<T: Scalar> BetaState<T> {
    pub fn new(cfg: &TrustRegionConfig) -> Self {
        let frozen = cfg.ablation == super::Ablation::ConstantBeta;
        Self {
            value: T::c(cfg.initial_beta()),
            adam: AdamState::with_sizes(AdamConfig::with_lr(cfg.lr_beta), [1]),
            min: T::c(cfg.beta_min),
            max: T::c(cfg.beta_max),
            frozen,
            plateau: PlateauDetector::new(cfg.plateau_patience),
        }
    }

    pub fn value(&self) -> T {
        self.value
    }

    pub fn bounds(&self) -> (T, T) {
        (self.min, self.max)
    }

    /// Whether β is held constant.
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// One Adam descent step on β followed by clamping. No-op when frozen.
    pub fn step(&mut self, grad: T) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let mut v = [self.value];
        self.adam.update(&mut [&mut v[..]], &[&[grad][..]])?;
        self.value = self.clamp(v[0]);
        Ok(())
    }

    /// Plain gradient-descent step `β ← β − lr·grad`, clamped.
    pub fn sgd_step(&mut self, grad: T, lr: T) {
        if self.frozen {
            return;
        }
        self.value = self.clamp(self.value - lr * grad);
    }

    fn clamp(&self, v: T) -> T {
        if v.is_nan() {
            return self.min;
        }
        v.max(self.min).min(self.max)
    }
}
