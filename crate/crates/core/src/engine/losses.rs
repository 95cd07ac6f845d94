//! Loss terms of the trust-region optimizer and of the PPO-clip baseline.
//!
//! Each function works on graph nodes produced by a forward pass of θ and on
//! constants recorded under the snapshot θ′, so gradients flow into θ only.

use crate::autodiff::{Graph, Var};
use crate::dist::DistVars;
use crate::error::{Error, Result};
use crate::nn::PolicyParams;
use crate::rollout::Minibatch;
use crate::scalar::Scalar;

use super::config::{KlDirection, TrustRegionConfig, VALUE_CLIP_RANGE};

/// Log-ratios above this abort the step instead of overflowing `exp`.
pub const MAX_LOG_RATIO: f64 = 30.0;

/// Importance ratios `π_θ(a|s) / π_θ′(a|s)` as a graph node.
pub fn likelihood_ratio<'g, T: Scalar>(new_log_prob: Var<'g, T>, old_log_prob: &[T]) -> Result<Var<'g, T>> {
    let g = new_log_prob.graph();
    let log_ratio = new_log_prob - g.constant_vec(old_log_prob.to_vec());
    let worst = log_ratio.with_value(|v| v.iter().copied().fold(T::neg_infinity(), T::max));
    if !worst.is_finite() || worst > T::c(MAX_LOG_RATIO) {
        return Err(Error::Numerical(format!(
            "importance log-ratio {worst} exceeds {MAX_LOG_RATIO}"
        )));
    }
    Ok(log_ratio.exp())
}

/// `L_π = mean(−ratio · Â)`.
pub fn policy_gradient_loss<'g, T: Scalar>(
    new_log_prob: Var<'g, T>,
    old_log_prob: &[T],
    advantages: &[T],
) -> Result<Var<'g, T>> {
    let g = new_log_prob.graph();
    let ratio = likelihood_ratio(new_log_prob, old_log_prob)?;
    Ok(-(ratio * g.constant_vec(advantages.to_vec())).mean())
}

/// KL penalty over a set of states.
#[derive(Debug, Clone, Copy)]
pub struct KlTerms<'g, T> {
    /// Per-state KL, `[n]`.
    pub per_state: Var<'g, T>,
    /// `L_KL`: mean over states, differentiable in θ.
    pub mean: Var<'g, T>,
    /// Largest per-state KL (no gradient).
    pub max: T,
}

/// Per-state KL between θ's distribution and the frozen snapshot's.
pub fn kl_penalty_loss<'g, T: Scalar>(
    new: &DistVars<'g, T>,
    old: &DistVars<'g, T>,
    direction: KlDirection,
) -> Result<KlTerms<'g, T>> {
    let per_state = match direction {
        KlDirection::NewOld => new.kl_divergence(old)?,
        KlDirection::OldNew => old.stop_gradient().kl_raw(new)?,
    };
    let max = per_state.with_value(|v| v.iter().copied().fold(T::zero(), T::max));
    Ok(KlTerms {
        per_state,
        mean: per_state.mean(),
        max,
    })
}

/// `L_VF`: mean squared error to the return targets, optionally with the
/// clipped objective `max((V − R)², (V_old + clip(V − V_old) − R)²)`.
pub fn value_loss<'g, T: Scalar>(
    predicted: Var<'g, T>,
    old_values: &[T],
    returns: &[T],
    clip: Option<T>,
) -> Var<'g, T> {
    let g = predicted.graph();
    let targets = g.constant_vec(returns.to_vec());
    let unclipped = (predicted - targets).square();
    match clip {
        None => unclipped.mean(),
        Some(c) => {
            let old = g.constant_vec(old_values.to_vec());
            let clipped = old + (predicted - old).clip(-c, c);
            unclipped.maximum((clipped - targets).square()).mean()
        }
    }
}

/// `L_θ = L_π + c_v · L_VF + β · L_KL` with β entering through a stop-gradient.
pub fn combined_theta_loss<'g, T: Scalar>(
    loss_pi: Var<'g, T>,
    loss_vf: Var<'g, T>,
    loss_kl: Var<'g, T>,
    beta: Var<'g, T>,
    value_coef: T,
) -> Var<'g, T> {
    loss_pi + loss_vf * value_coef + loss_kl.scale_by(beta.stop_gradient())
}

/// Clipped surrogate `mean(−min(r·Â, clip(r, 1 ± ε)·Â))`.
pub fn ppo_clip_loss<'g, T: Scalar>(
    new_log_prob: Var<'g, T>,
    old_log_prob: &[T],
    advantages: &[T],
    clip_eps: T,
) -> Result<Var<'g, T>> {
    let g = new_log_prob.graph();
    let ratio = likelihood_ratio(new_log_prob, old_log_prob)?;
    let adv = g.constant_vec(advantages.to_vec());
    let one = T::one();
    let unclipped = ratio * adv;
    let clipped = ratio.clip(one - clip_eps, one + clip_eps) * adv;
    Ok(-unclipped.minimum(clipped).mean())
}

/// Exit test of the mean-KL ablation: the mean per-state KL is within `eps_kl`.
pub fn mean_kl_exit_test<T: Scalar>(kls: &[T], eps_kl: T) -> bool {
    if kls.is_empty() {
        return true;
    }
    let mean = kls.iter().copied().sum::<T>() / T::from_usize_lossy(kls.len());
    mean <= eps_kl
}

/// Every term of `L_θ` for one minibatch, recorded on `g`.
#[derive(Debug, Clone)]
pub struct MinibatchLosses<'g, T> {
    pub leaves: Vec<Var<'g, T>>,
    pub loss_pi: Var<'g, T>,
    pub loss_vf: Var<'g, T>,
    pub kl: KlTerms<'g, T>,
    pub total: Var<'g, T>,
}

/// Forward pass of θ on `mb` plus the combined loss at penalty `beta`.
pub fn minibatch_losses<'g, T: Scalar>(
    g: &'g Graph<T>,
    params: &PolicyParams<T>,
    mb: &Minibatch<T>,
    beta: T,
    cfg: &TrustRegionConfig,
) -> Result<MinibatchLosses<'g, T>> {
    let leaves = params.leaves(g);
    let out = params.forward(&leaves, &mb.states)?;
    let new_lp = out.dist.log_prob(&mb.actions)?;
    let loss_pi = policy_gradient_loss(new_lp, &mb.log_probs, &mb.advantages)?;
    let clip = cfg.value_clip.then(|| T::c(VALUE_CLIP_RANGE));
    let loss_vf = value_loss(out.value, &mb.values, &mb.returns, clip);
    let old = mb.behavior.to_vars(g);
    let kl = kl_penalty_loss(&out.dist, &old, cfg.kl_direction)?;
    let beta_var = g.constant_scalar(beta);
    let total = combined_theta_loss(loss_pi, loss_vf, kl.mean, beta_var, T::c(cfg.value_coef));
    Ok(MinibatchLosses {
        leaves,
        loss_pi,
        loss_vf,
        kl,
        total,
    })
}

/// Per-state KL of θ against the snapshot on `mb`, without gradients.
pub fn per_state_kl<T: Scalar>(
    params: &PolicyParams<T>,
    mb: &Minibatch<T>,
    direction: KlDirection,
) -> Result<Vec<T>> {
    let g = Graph::new();
    let leaves = params.constant_leaves(&g);
    let new = params.forward_dist(&leaves, &mb.states)?;
    let old = mb.behavior.to_vars(&g);
    Ok(kl_penalty_loss(&new, &old, direction)?.per_state.value())
}
