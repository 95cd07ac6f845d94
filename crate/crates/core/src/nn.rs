//! Policy and value networks: parameter storage, initialization and forward passes.

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::autodiff::{Gradients, Graph, Var};
use crate::dist::{ActionSpace, DistParams, DistVars, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture of the policy and value networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden layer widths, each followed by tanh.
    pub hidden: Vec<usize>,
    /// When set, policy and value heads sit on one shared trunk.
    pub share_trunk: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            share_trunk: false,
        }
    }
}

/// Scale applied to the initial weights of the policy output layer.
const POLICY_HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    obs_dim: usize,
    action_space: ActionSpace,
    /// Index of each layer's weight tensor; the bias follows it.
    trunk: Vec<usize>,
    policy: Vec<usize>,
    value: Vec<usize>,
    log_std: Option<usize>,
}

/// Parameters θ of the policy network, the value network and (for continuous
/// actions) the state-independent log-std vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    layout: Arc<Layout>,
    tensors: Vec<Tensor<T>>,
    version: u64,
}

/// Outputs of one forward pass over a batch of states.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput<'g, T> {
    pub dist: DistVars<'g, T>,
    /// `[n]` value predictions.
    pub value: Var<'g, T>,
}

fn push_layer<T: Scalar, R: Rng + ?Sized>(
    tensors: &mut Vec<Tensor<T>>,
    fan_in: usize,
    fan_out: usize,
    scale: f64,
    rng: &mut R,
) -> usize {
    let bound = scale / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| T::c(rng.gen_range(-bound..=bound)))
        .collect();
    tensors.push(Tensor::matrix(fan_in, fan_out, w).expect("layer shape"));
    tensors.push(Tensor::zeros(vec![fan_out]));
    tensors.len() - 2
}

fn push_mlp<T: Scalar, R: Rng + ?Sized>(
    tensors: &mut Vec<Tensor<T>>,
    widths: &[usize],
    last_scale: f64,
    rng: &mut R,
) -> Vec<usize> {
    let last = widths.len() - 2;
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let scale = if i == last { last_scale } else { 1.0 };
            push_layer(tensors, w[0], w[1], scale, rng)
        })
        .collect()
}

impl<T: Scalar> PolicyParams<T> {
    /// Fan-in uniform initialization; the policy output layer is scaled down so
    /// the initial policy is nearly state-independent.
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        action_space: ActionSpace,
        net: &NetworkConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if obs_dim == 0 || action_space.param_width() == 0 {
            return Err(Error::Config(
                "observation and action dimensions must be positive".into(),
            ));
        }
        if net.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let out = action_space.param_width();
        let mut tensors = Vec::new();
        let (trunk, policy, value) = if net.share_trunk && !net.hidden.is_empty() {
            let mut widths = vec![obs_dim];
            widths.extend(&net.hidden);
            let trunk = push_mlp(&mut tensors, &widths, 1.0, rng);
            let h = *net.hidden.last().unwrap();
            let policy = vec![push_layer(&mut tensors, h, out, POLICY_HEAD_INIT_SCALE, rng)];
            let value = vec![push_layer(&mut tensors, h, 1, 1.0, rng)];
            (trunk, policy, value)
        } else {
            let mut widths = vec![obs_dim];
            widths.extend(&net.hidden);
            let mut pw = widths.clone();
            pw.push(out);
            let policy = push_mlp(&mut tensors, &pw, POLICY_HEAD_INIT_SCALE, rng);
            widths.push(1);
            let value = push_mlp(&mut tensors, &widths, 1.0, rng);
            (Vec::new(), policy, value)
        };
        let log_std = match action_space {
            ActionSpace::Continuous(d) => {
                tensors.push(Tensor::zeros(vec![d]));
                Some(tensors.len() - 1)
            }
            ActionSpace::Discrete(_) => None,
        };
        Ok(Self {
            layout: Arc::new(Layout {
                obs_dim,
                action_space,
                trunk,
                policy,
                value,
                log_std,
            }),
            tensors,
            version: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.obs_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.layout.action_space
    }

    /// Incremented by every gradient step.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Direct mutable access for tests and surgery; does not bump the version.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Indices of tensors that only feed the value estimate.
    pub fn value_only_tensors(&self) -> Vec<usize> {
        self.layout.value.iter().flat_map(|&w| [w, w + 1]).collect()
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn leaves<'g>(&self, g: &'g Graph<T>) -> Vec<Var<'g, T>> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Places every tensor on `g` as a constant.
    pub fn constant_leaves<'g>(&self, g: &'g Graph<T>) -> Vec<Var<'g, T>> {
        self.tensors.iter().map(|t| g.constant(t)).collect()
    }

    /// Forward pass of an `[n×obs_dim]` batch through the networks using `leaves`.
    pub fn forward<'g>(
        &self,
        leaves: &[Var<'g, T>],
        states: &Tensor<T>,
    ) -> Result<NetOutput<'g, T>> {
        let (dist, value) = self.forward_inner(leaves, states, true)?;
        Ok(NetOutput {
            dist,
            value: value.expect("value head requested"),
        })
    }

    /// Policy head only; skips the value network.
    pub fn forward_dist<'g>(
        &self,
        leaves: &[Var<'g, T>],
        states: &Tensor<T>,
    ) -> Result<DistVars<'g, T>> {
        Ok(self.forward_inner(leaves, states, false)?.0)
    }

    fn forward_inner<'g>(
        &self,
        leaves: &[Var<'g, T>],
        states: &Tensor<T>,
        want_value: bool,
    ) -> Result<(DistVars<'g, T>, Option<Var<'g, T>>)> {
        if leaves.len() != self.tensors.len() {
            return Err(Error::Usage(format!(
                "expected {} leaves, got {}",
                self.tensors.len(),
                leaves.len()
            )));
        }
        if states.shape().len() != 2 || states.cols() != self.layout.obs_dim {
            return Err(Error::Config(format!(
                "states of shape {:?} do not match observation width {}",
                states.shape(),
                self.layout.obs_dim
            )));
        }
        if !states.is_finite() {
            return Err(Error::Input("non-finite state passed to the network".into()));
        }
        let g = leaves[0].graph();
        let n = states.rows();
        let x = g.constant(states);

        let layer = |x: Var<'g, T>, w: usize| x.matmul(leaves[w]).add_bias(leaves[w + 1]);
        let mlp = |mut x: Var<'g, T>, layers: &[usize], tanh_last: bool| {
            for (i, &w) in layers.iter().enumerate() {
                x = layer(x, w);
                if tanh_last || i + 1 < layers.len() {
                    x = x.tanh();
                }
            }
            x
        };

        let (pin, vin) = if self.layout.trunk.is_empty() {
            (x, x)
        } else {
            let h = mlp(x, &self.layout.trunk, true);
            (h, h)
        };
        let head = mlp(pin, &self.layout.policy, false);
        let value = want_value.then(|| mlp(vin, &self.layout.value, false).reshape(vec![n]));

        let dist = match self.layout.action_space {
            ActionSpace::Continuous(_) => {
                let ls = leaves[self.layout.log_std.expect("continuous layout has log-std")];
                DistVars::Gaussian {
                    mean: head,
                    log_std: ls
                        .clip(T::c(LOG_STD_MIN), T::c(LOG_STD_MAX))
                        .broadcast_rows(n),
                }
            }
            ActionSpace::Discrete(_) => DistVars::Categorical {
                log_probs: head.log_softmax_rows(),
            },
        };
        if !head.is_finite() || value.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "network output not finite (parameter version {})",
                self.version
            )));
        }
        Ok((dist, value))
    }

    /// Forward pass without gradient tracking.
    pub fn evaluate(&self, states: &Tensor<T>) -> Result<(DistParams<T>, Vec<T>)> {
        let g = Graph::new();
        let leaves = self.constant_leaves(&g);
        let out = self.forward(&leaves, states)?;
        Ok((out.dist.to_params(), out.value.value()))
    }

    /// Policy head only, without gradient tracking.
    pub fn evaluate_dist(&self, states: &Tensor<T>) -> Result<DistParams<T>> {
        let g = Graph::new();
        let leaves = self.constant_leaves(&g);
        Ok(self.forward_dist(&leaves, states)?.to_params())
    }

    /// One Adam step using the gradients of `leaves`.
    pub fn apply_gradients(
        &mut self,
        adam: &mut AdamState<T>,
        grads: &Gradients<T>,
        leaves: &[Var<'_, T>],
    ) -> Result<()> {
        let gs: Vec<Vec<T>> = leaves.iter().map(|&l| grads.wrt(l)).collect();
        let refs: Vec<&[T]> = gs.iter().map(Vec::as_slice).collect();
        let mut slices: Vec<&mut [T]> = self.tensors.iter_mut().map(|t| t.data_mut()).collect();
        adam.update(&mut slices, &refs)?;
        self.version += 1;
        Ok(())
    }

    /// Freezes a copy of the current parameters.
    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot(Arc::new(self.clone()))
    }
}

/// Immutable θ′ copy; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Snapshot<T>(Arc<PolicyParams<T>>);

impl<T> Deref for Snapshot<T> {
    type Target = PolicyParams<T>;
    fn deref(&self) -> &PolicyParams<T> {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(space: ActionSpace, shared: bool) -> PolicyParams<f64> {
        let net = NetworkConfig {
            hidden: vec![8, 8],
            share_trunk: shared,
        };
        PolicyParams::init(3, space, &net, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut p = params(ActionSpace::Continuous(2), false);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let s = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.1, -0.2]).unwrap();
        let (d, v) = p.evaluate(&s).unwrap();
        let DistParams::Gaussian { mean, log_std } = d else { panic!() };
        assert!(mean.data().iter().all(|&x| x == 0.0));
        assert!(log_std.data().iter().all(|&x| x == 0.0));
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut p = PolicyParams::<f64>::init(
            1,
            ActionSpace::Continuous(1),
            &NetworkConfig {
                hidden: vec![],
                share_trunk: false,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        p.tensors_mut()[0].data_mut()[0] = 1.0;
        p.tensors_mut()[1].data_mut()[0] = 0.0;
        let (d, _) = p.evaluate(&Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let DistParams::Gaussian { mean, .. } = d else { panic!() };
        assert_eq!(mean.data(), &[2.0]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let p = params(ActionSpace::Discrete(4), false);
        let s = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(p.evaluate(&s), Err(Error::Config(_))));
    }

    #[test]
    fn shared_trunk_layout_runs() {
        let p = params(ActionSpace::Discrete(4), true);
        let s = Tensor::matrix(2, 3, vec![0.1; 6]).unwrap();
        let (d, v) = p.evaluate(&s).unwrap();
        assert_eq!(d.num_states(), 2);
        assert_eq!(v.len(), 2);
        let probs = d.probs(0).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_frozen_while_params_move() {
        let mut p = params(ActionSpace::Continuous(1), false);
        let snap = p.snapshot();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), p.tensors());
        let g = Graph::new();
        let leaves = p.leaves(&g);
        let out = p
            .forward(&leaves, &Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap())
            .unwrap();
        let grads = g.backward(out.value.sum()).unwrap();
        p.apply_gradients(&mut adam, &grads, &leaves).unwrap();
        assert_eq!(p.version(), 1);
        assert_eq!(snap.version(), 0);
        assert_ne!(p.tensors(), snap.tensors());
    }
}
