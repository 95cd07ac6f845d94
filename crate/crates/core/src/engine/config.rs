use serde::{Deserialize, Serialize};

/// Which component of the optimizer is switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full algorithm.
    #[default]
    None,
    /// Skip the fixup phase; β tuning alone bounds the update.
    NoFixup,
    /// Tune β against the mean KL and exit fixup on the mean KL.
    MeanKl,
    /// Run the fixup phase once, after the final epoch.
    FixupLastEpochOnly,
    /// Freeze β at `constant_beta`.
    ConstantBeta,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoFixup,
        Ablation::MeanKl,
        Ablation::FixupLastEpochOnly,
        Ablation::ConstantBeta,
    ];

    /// Whether the per-state trust region is guaranteed at step exit.
    pub fn enforces_max_kl(self) -> bool {
        matches!(
            self,
            Ablation::None | Ablation::FixupLastEpochOnly | Ablation::ConstantBeta
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoFixup => "no_fixup",
            Ablation::MeanKl => "mean_kl",
            Ablation::FixupLastEpochOnly => "fixup_last_epoch_only",
            Ablation::ConstantBeta => "constant_beta",
        }
    }
}

/// Argument order of the KL penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(π_θ ‖ π_θ′)`.
    #[default]
    NewOld,
    /// `KL(π_θ′ ‖ π_θ)`.
    OldNew,
}

/// Hyperparameters of the trust-region optimizer (and of the PPO-clip baseline,
/// which reads the shared fields plus `clip_eps`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    /// Trust-region radius in nats.
    pub eps_kl: f64,
    /// Target offset: β settles where `max KL ≈ eps_kl / c_beta`.
    pub c_beta: f64,
    /// Adam learning rate for θ.
    pub lr_theta: f64,
    /// Adam learning rate for β.
    pub lr_beta: f64,
    pub n_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub value_clip: bool,
    pub kl_direction: KlDirection,
    pub ablation: Ablation,
    /// β used by [`Ablation::ConstantBeta`].
    pub constant_beta: f64,
    pub beta_init: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Fixup passes without a new best max-KL before θ's learning rate is halved.
    pub plateau_patience: usize,
    /// Fixup passes after which the run is aborted.
    pub fixup_pass_cap: usize,
    /// Likelihood-ratio clip range of the PPO-clip baseline.
    pub clip_eps: f64,
}

/// Clip range for the clipped value objective.
pub const VALUE_CLIP_RANGE: f64 = 0.2;

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            eps_kl: 0.2,
            c_beta: 3.0,
            lr_theta: 3e-4,
            lr_beta: 0.01,
            n_epochs: 10,
            minibatch_size: 64,
            value_coef: 0.5,
            value_clip: false,
            kl_direction: KlDirection::NewOld,
            ablation: Ablation::None,
            constant_beta: 10.0,
            beta_init: 10.0,
            beta_min: 1e-2,
            beta_max: 1e3,
            plateau_patience: 50,
            fixup_pass_cap: 1000,
            clip_eps: 0.2,
        }
    }
}

impl TrustRegionConfig {
    /// Wide trust region for large discrete-action tasks.
    pub fn dmlab_like() -> Self {
        Self {
            eps_kl: 1.0,
            c_beta: 2.0,
            ..Self::default()
        }
    }

    /// Field names that violate their constraints, with reasons.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_string());
            }
        };
        check(self.eps_kl > 0.0 && self.eps_kl.is_finite(), "eps_kl: must be > 0");
        check(self.c_beta >= 1.0 && self.c_beta.is_finite(), "c_beta: must be >= 1");
        check(self.lr_theta > 0.0 && self.lr_theta.is_finite(), "lr_theta: must be > 0");
        check(
            self.lr_beta >= 0.0 && self.lr_beta.is_finite(),
            "lr_beta: must be >= 0",
        );
        check(
            self.lr_beta > 0.0 || self.ablation == Ablation::ConstantBeta,
            "lr_beta: must be > 0 unless ablation is constant_beta",
        );
        check(self.minibatch_size >= 1, "minibatch_size: must be >= 1");
        check(
            self.value_coef >= 0.0 && self.value_coef.is_finite(),
            "value_coef: must be >= 0",
        );
        check(self.beta_min > 0.0, "beta_min: must be > 0");
        check(self.beta_max >= self.beta_min, "beta_max: must be >= beta_min");
        check(
            self.beta_init >= self.beta_min && self.beta_init <= self.beta_max,
            "beta_init: must lie in [beta_min, beta_max]",
        );
        check(
            self.constant_beta >= self.beta_min && self.constant_beta <= self.beta_max,
            "constant_beta: must lie in [beta_min, beta_max]",
        );
        check(self.plateau_patience >= 1, "plateau_patience: must be >= 1");
        check(self.fixup_pass_cap >= 1, "fixup_pass_cap: must be >= 1");
        check(self.clip_eps > 0.0 && self.clip_eps < 1.0, "clip_eps: must be in (0, 1)");
        bad
    }

    /// Non-fatal configuration concerns.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.c_beta > 1.0 && self.c_beta < 2.0 {
            w.push(format!(
                "c_beta = {} is below 2; Adam momentum can carry KL-penalty steps into the primary phase",
                self.c_beta
            ));
        }
        w
    }

    /// β value the run starts from.
    pub fn initial_beta(&self) -> f64 {
        if self.ablation == Ablation::ConstantBeta {
            self.constant_beta
        } else {
            self.beta_init
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(TrustRegionConfig::default().violations().is_empty());
        assert!(TrustRegionConfig::dmlab_like().violations().is_empty());
    }

    #[test]
    fn reports_every_bad_field() {
        let cfg = TrustRegionConfig {
            eps_kl: 0.0,
            c_beta: 0.5,
            lr_theta: -1.0,
            ..Default::default()
        };
        let v = cfg.violations();
        assert!(v.iter().any(|s| s.starts_with("eps_kl")));
        assert!(v.iter().any(|s| s.starts_with("c_beta")));
        assert!(v.iter().any(|s| s.starts_with("lr_theta")));
    }

    #[test]
    fn warns_for_small_c_beta() {
        let cfg = TrustRegionConfig {
            c_beta: 1.5,
            ..Default::default()
        };
        assert_eq!(cfg.warnings().len(), 1);
        assert!(TrustRegionConfig::default().warnings().is_empty());
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            let s = serde_json::to_string(&a).unwrap();
            assert_eq!(s, format!("\"{}\"", a.name()));
            assert_eq!(serde_json::from_str::<Ablation>(&s).unwrap(), a);
        }
    }
}
