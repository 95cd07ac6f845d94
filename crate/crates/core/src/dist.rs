//! Diagonal Gaussian and categorical action distributions.
//!
//! [`DistParams`] holds plain per-state parameters (used for sampling and for
//! the frozen snapshot); [`DistVars`] holds the same parameters as graph nodes
//! so log-probabilities, KL divergences and entropies are differentiable.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower clamp for Gaussian log standard deviations.
pub const LOG_STD_MIN: f64 = -20.0;
/// Upper clamp for Gaussian log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Shape of an environment's action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum ActionSpace {
    /// Real-valued actions of the given dimension.
    Continuous(usize),
    /// One of `n` discrete actions.
    Discrete(usize),
}

impl ActionSpace {
    /// Width of the policy head's output.
    pub fn param_width(&self) -> usize {
        match *self {
            ActionSpace::Continuous(d) | ActionSpace::Discrete(d) => d,
        }
    }
}

/// A single action.
#[derive(Debug, Clone, PartialEq)]
pub enum Action<T> {
    Continuous(Vec<T>),
    Discrete(usize),
}

/// A batch of actions, one per state.
#[derive(Debug, Clone, PartialEq)]
pub enum Actions<T> {
    /// `[n×d]` matrix.
    Continuous(Tensor<T>),
    Discrete(Vec<usize>),
}

impl<T: Scalar> Actions<T> {
    pub fn len(&self) -> usize {
        match self {
            Actions::Continuous(t) => t.rows(),
            Actions::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Actions::Continuous(t) => Actions::Continuous(t.select_rows(idx)),
            Actions::Discrete(v) => Actions::Discrete(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn get(&self, i: usize) -> Action<T> {
        match self {
            Actions::Continuous(t) => Action::Continuous(t.row(i).to_vec()),
            Actions::Discrete(v) => Action::Discrete(v[i]),
        }
    }

    /// Builds a batch from individual actions of one family.
    pub fn from_actions(actions: &[Action<T>], space: ActionSpace) -> Result<Self> {
        match space {
            ActionSpace::Continuous(d) => {
                let mut data = Vec::with_capacity(actions.len() * d);
                for a in actions {
                    match a {
                        Action::Continuous(v) if v.len() == d => data.extend_from_slice(v),
                        _ => return Err(Error::Input(format!("expected {d}-dim continuous action"))),
                    }
                }
                Ok(Actions::Continuous(Tensor::matrix(actions.len(), d, data)?))
            }
            ActionSpace::Discrete(k) => actions
                .iter()
                .map(|a| match a {
                    Action::Discrete(i) if *i < k => Ok(*i),
                    _ => Err(Error::Input(format!("expected discrete action below {k}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Actions::Discrete),
        }
    }
}

/// Per-state distribution parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DistParams<T> {
    /// Mean and log-std, both `[n×d]`.
    Gaussian { mean: Tensor<T>, log_std: Tensor<T> },
    /// Unnormalized logits `[n×k]`.
    Categorical { logits: Tensor<T> },
}

/// Differentiable distribution parameters living on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub enum DistVars<'g, T> {
    /// Mean and clamped log-std, both `[n×d]`.
    Gaussian { mean: Var<'g, T>, log_std: Var<'g, T> },
    /// Row-normalized log-probabilities `[n×k]`.
    Categorical { log_probs: Var<'g, T> },
}

impl<T: Scalar> DistParams<T> {
    pub fn num_states(&self) -> usize {
        match self {
            DistParams::Gaussian { mean, .. } => mean.rows(),
            DistParams::Categorical { logits } => logits.rows(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            DistParams::Gaussian { mean, log_std } => DistParams::Gaussian {
                mean: mean.select_rows(idx),
                log_std: log_std.select_rows(idx),
            },
            DistParams::Categorical { logits } => DistParams::Categorical {
                logits: logits.select_rows(idx),
            },
        }
    }

    /// Places the parameters on `g` as constants.
    pub fn to_vars<'g>(&self, g: &'g Graph<T>) -> DistVars<'g, T> {
        match self {
            DistParams::Gaussian { mean, log_std } => DistVars::Gaussian {
                mean: g.constant(mean),
                log_std: g
                    .constant(log_std)
                    .clip(T::c(LOG_STD_MIN), T::c(LOG_STD_MAX)),
            },
            DistParams::Categorical { logits } => DistVars::Categorical {
                log_probs: g.constant(logits).log_softmax_rows(),
            },
        }
    }

    /// Softmax probabilities of state `i` (categorical only).
    pub fn probs(&self, i: usize) -> Option<Vec<T>> {
        match self {
            DistParams::Categorical { logits } => Some(softmax(logits.row(i))),
            DistParams::Gaussian { .. } => None,
        }
    }

    /// Draws one action for state `i`.
    pub fn sample<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Action<T> {
        match self {
            DistParams::Gaussian { mean, log_std } => Action::Continuous(
                mean.row(i)
                    .iter()
                    .zip(log_std.row(i))
                    .map(|(&mu, &ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + clamp_log_std(ls).exp() * T::c(z)
                    })
                    .collect(),
            ),
            DistParams::Categorical { logits } => {
                let probs = softmax(logits.row(i));
                let u = T::c(rng.gen::<f64>());
                let mut acc = T::zero();
                for (k, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(k);
                    }
                }
                // u landed in the rounding gap above the final cumulative sum.
                Action::Discrete(
                    probs
                        .iter()
                        .rposition(|&p| p > T::zero())
                        .unwrap_or(probs.len() - 1),
                )
            }
        }
    }

    /// Per-state log-probability of `actions` (no graph retained).
    pub fn log_prob(&self, actions: &Actions<T>) -> Result<Vec<T>> {
        let g = Graph::new();
        Ok(self.to_vars(&g).log_prob(actions)?.value())
    }

    /// Per-state `KL(self ‖ other)`.
    pub fn kl(&self, other: &DistParams<T>) -> Result<Vec<T>> {
        let g = Graph::new();
        Ok(self.to_vars(&g).kl_raw(&other.to_vars(&g))?.value())
    }

    pub fn entropy(&self) -> Vec<T> {
        let g = Graph::new();
        self.to_vars(&g).entropy().value()
    }
}

fn clamp_log_std<T: Scalar>(ls: T) -> T {
    ls.max(T::c(LOG_STD_MIN)).min(T::c(LOG_STD_MAX))
}

/// Max-subtracted softmax of one row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - mx).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl<'g, T: Scalar> DistVars<'g, T> {
    pub fn family(&self) -> &'static str {
        match self {
            DistVars::Gaussian { .. } => "gaussian",
            DistVars::Categorical { .. } => "categorical",
        }
    }

    /// Per-state log density (Gaussian) or log mass (categorical), shape `[n]`.
    pub fn log_prob(&self, actions: &Actions<T>) -> Result<Var<'g, T>> {
        match (self, actions) {
            (DistVars::Gaussian { mean, log_std }, Actions::Continuous(a)) => {
                if a.shape() != mean.shape().as_slice() {
                    return Err(Error::Input(format!(
                        "action shape {:?} does not match distribution shape {:?}",
                        a.shape(),
                        mean.shape()
                    )));
                }
                let g = mean.graph();
                let z = (g.constant(a) - *mean) * (-*log_std).exp();
                let per_dim = z.square() * T::c(-0.5) - *log_std;
                Ok(per_dim.affine(T::one(), T::c(-HALF_LN_2PI)).sum_rows())
            }
            (DistVars::Categorical { log_probs }, Actions::Discrete(idx)) => {
                log_probs.pick_rows(idx)
            }
            _ => Err(Error::Input(format!(
                "action family does not match {} distribution",
                self.family()
            ))),
        }
    }

    /// Per-state `KL(self ‖ q)` with gradient flowing into both arguments.
    pub fn kl_raw(&self, q: &DistVars<'g, T>) -> Result<Var<'g, T>> {
        match (self, q) {
            (
                DistVars::Gaussian {
                    mean: mp,
                    log_std: lp,
                },
                DistVars::Gaussian {
                    mean: mq,
                    log_std: lq,
                },
            ) => {
                if mp.shape() != mq.shape() {
                    return Err(Error::Usage("gaussian KL between different dimensions".into()));
                }
                // log σq − log σp + (σp² + (μp − μq)²) / (2σq²) − ½
                let log_ratio = *lp - *lq;
                let var_ratio = (log_ratio * T::c(2.0)).exp();
                let maha = (*mp - *mq).square() * (*lq * T::c(-2.0)).exp();
                let per_dim = (var_ratio + maha).affine(T::c(0.5), T::c(-0.5)) - log_ratio;
                Ok(per_dim.sum_rows())
            }
            (DistVars::Categorical { log_probs: lp }, DistVars::Categorical { log_probs: lq }) => {
                if lp.shape() != lq.shape() {
                    return Err(Error::Usage(
                        "categorical KL between different support sizes".into(),
                    ));
                }
                Ok((lp.exp() * (*lp - *lq)).sum_rows())
            }
            _ => Err(Error::Usage(format!(
                "KL between {} and {} distributions",
                self.family(),
                q.family()
            ))),
        }
    }

    /// Per-state `KL(self ‖ q)` where `q` is frozen: no gradient reaches `q`.
    pub fn kl_divergence(&self, q: &DistVars<'g, T>) -> Result<Var<'g, T>> {
        self.kl_raw(&q.stop_gradient())
    }

    pub fn stop_gradient(&self) -> DistVars<'g, T> {
        match *self {
            DistVars::Gaussian { mean, log_std } => DistVars::Gaussian {
                mean: mean.stop_gradient(),
                log_std: log_std.stop_gradient(),
            },
            DistVars::Categorical { log_probs } => DistVars::Categorical {
                log_probs: log_probs.stop_gradient(),
            },
        }
    }

    /// Per-state entropy, shape `[n]`.
    pub fn entropy(&self) -> Var<'g, T> {
        match *self {
            DistVars::Gaussian { log_std, .. } => log_std
                .affine(T::one(), T::c(HALF_LN_2PI + 0.5))
                .sum_rows(),
            DistVars::Categorical { log_probs } => -(log_probs.exp() * log_probs).sum_rows(),
        }
    }

    /// Copies the parameters out of the graph.
    pub fn to_params(&self) -> DistParams<T> {
        match self {
            DistVars::Gaussian { mean, log_std } => DistParams::Gaussian {
                mean: mean.to_tensor(),
                log_std: log_std.to_tensor(),
            },
            DistVars::Categorical { log_probs } => DistParams::Categorical {
                logits: log_probs.to_tensor(),
            },
        }
    }
}
