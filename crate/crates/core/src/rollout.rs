//! Trajectory collection, generalized advantage estimation and minibatching.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Action, Actions, DistParams};
use crate::env::{EnvId, Environment};
use crate::error::{Error, Result};
use crate::nn::PolicyParams;
use crate::rng::{indexed_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a timestep relates to the end of its episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeEnd<T> {
    /// The episode continues at the next index.
    Continue,
    /// Terminal state reached; bootstrap with zero.
    Terminated,
    /// Horizon reached; bootstrap with the value of the final next-state.
    Truncated(T),
}

/// Advantage/return settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            normalize_advantages: true,
        }
    }
}

/// Generalized advantage estimates for a sequence of whole episodes.
///
/// `Â_t = Σ_l (γλ)^l δ_{t+l}` with `δ_t = r_t + γ V(s_{t+1}) − V(s_t)`, cut at
/// every episode end. The final index must close an episode.
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    ends: &[EpisodeEnd<T>],
    gamma: T,
    lambda: T,
) -> Result<Vec<T>> {
    let n = rewards.len();
    if values.len() != n || ends.len() != n {
        return Err(Error::Usage(format!(
            "gae arrays misaligned: {} rewards, {} values, {} flags",
            n,
            values.len(),
            ends.len()
        )));
    }
    let unit = T::zero()..=T::one();
    if !unit.contains(&gamma) || !unit.contains(&lambda) {
        return Err(Error::Usage(format!(
            "gae needs 0 <= gamma, lambda <= 1 (got {gamma}, {lambda})"
        )));
    }
    if matches!(ends.last(), Some(EpisodeEnd::Continue)) {
        return Err(Error::Usage(
            "last timestep must end an episode".into(),
        ));
    }
    let mut adv = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let (next_value, carry) = match ends[t] {
            EpisodeEnd::Continue => (values[t + 1], running),
            EpisodeEnd::Terminated => (T::zero(), T::zero()),
            EpisodeEnd::Truncated(b) => (b, T::zero()),
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    Ok(adv)
}

/// Rescales to zero mean and unit (population) standard deviation.
///
/// A constant input is only centered. The affine map is increasing, so the
/// ordering of advantages is preserved.
pub fn normalize<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let n = T::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let scale = if std > T::epsilon() { std } else { T::one() };
    for x in xs.iter_mut() {
        *x = (*x - mean) / scale;
    }
}

/// Shuffled partition of `0..n` into slices of at most `size` indices.
pub fn minibatches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let size = size.max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

/// A set of environment instances, each with its own reset-seed stream.
pub struct EnvSet<T: Scalar> {
    envs: Vec<Box<dyn Environment<T>>>,
    seed_streams: Vec<ChaCha8Rng>,
    next: usize,
    episodes: usize,
}

impl<T: Scalar> EnvSet<T> {
    /// `count` copies of `id`; instance `i` draws reset seeds from the
    /// `(seed, i)` environment stream.
    pub fn new(id: EnvId, count: usize, seed: u64) -> Self {
        Self::from_envs((0..count.max(1)).map(|_| id.make()).collect(), seed)
    }

    pub fn from_envs(envs: Vec<Box<dyn Environment<T>>>, seed: u64) -> Self {
        assert!(!envs.is_empty(), "environment set cannot be empty");
        let seed_streams = (0..envs.len())
            .map(|i| indexed_rng(seed, Stream::Env, i as u64))
            .collect();
        Self {
            envs,
            seed_streams,
            next: 0,
            episodes: 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].obs_dim()
    }

    pub fn action_space(&self) -> crate::dist::ActionSpace {
        self.envs[0].action_space()
    }

    /// Total episodes started so far.
    pub fn episodes(&self) -> usize {
        self.episodes
    }
}

/// Data collected by one call to [`rollout`].
#[derive(Debug, Clone)]
pub struct TrajectoryBatch<T> {
    /// `[n×obs_dim]`.
    pub states: Tensor<T>,
    pub actions: Actions<T>,
    pub rewards: Vec<T>,
    pub ends: Vec<EpisodeEnd<T>>,
    /// `log π_θ′(a|s)` under the acting snapshot.
    pub log_probs: Vec<T>,
    /// `V_θ′(s)`.
    pub values: Vec<T>,
    pub advantages: Vec<T>,
    /// `Â + V` targets for the value loss (before any normalization of `Â`).
    pub returns: Vec<T>,
    /// Per-state action-distribution parameters of the acting snapshot.
    pub behavior: DistParams<T>,
    /// Version counter of the parameters that produced the batch.
    pub snapshot_version: u64,
    pub episode_returns: Vec<T>,
    pub episode_lengths: Vec<usize>,
}

impl<T: Scalar> TrajectoryBatch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn average_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            return 0.0;
        }
        self.episode_returns.iter().map(|r| r.f64()).sum::<f64>() / self.episode_returns.len() as f64
    }

    /// Rows `idx` as a standalone view for loss computation.
    pub fn minibatch(&self, idx: &[usize]) -> Minibatch<T> {
        let pick = |v: &[T]| idx.iter().map(|&i| v[i]).collect::<Vec<T>>();
        Minibatch {
            states: self.states.select_rows(idx),
            actions: self.actions.select(idx),
            log_probs: pick(&self.log_probs),
            values: pick(&self.values),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            behavior: self.behavior.select(idx),
        }
    }

    /// The whole batch as one minibatch.
    pub fn full(&self) -> Minibatch<T> {
        self.minibatch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// One JSON object per timestep with every per-step field.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in 0..self.len() {
            let action = match &self.actions {
                Actions::Continuous(a) => {
                    serde_json::json!(a.row(t).iter().map(|v| v.f64()).collect::<Vec<_>>())
                }
                Actions::Discrete(a) => serde_json::json!(a[t]),
            };
            let (end, bootstrap) = match self.ends[t] {
                EpisodeEnd::Continue => ("continue", None),
                EpisodeEnd::Terminated => ("terminated", None),
                EpisodeEnd::Truncated(b) => ("truncated", Some(b.f64())),
            };
            let rec = serde_json::json!({
                "t": t,
                "state": self.states.row(t).iter().map(|v| v.f64()).collect::<Vec<_>>(),
                "action": action,
                "reward": self.rewards[t].f64(),
                "end": end,
                "bootstrap_value": bootstrap,
                "log_prob": self.log_probs[t].f64(),
                "value": self.values[t].f64(),
                "advantage": self.advantages[t].f64(),
                "return": self.returns[t].f64(),
                "snapshot_version": self.snapshot_version,
            });
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A gathered subset of a [`TrajectoryBatch`].
#[derive(Debug, Clone)]
pub struct Minibatch<T> {
    pub states: Tensor<T>,
    pub actions: Actions<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
    pub behavior: DistParams<T>,
}

impl<T: Scalar> Minibatch<T> {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// Runs whole episodes of `policy` until at least `min_timesteps` steps are
/// collected, then scores them with the same parameters and computes advantages.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    policy: &PolicyParams<T>,
    envs: &mut EnvSet<T>,
    min_timesteps: usize,
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<TrajectoryBatch<T>> {
    if min_timesteps == 0 {
        return Err(Error::Usage("rollout needs min_timesteps >= 1".into()));
    }
    let space = envs.action_space();
    let obs_dim = envs.obs_dim();
    if policy.obs_dim() != obs_dim || policy.action_space() != space {
        return Err(Error::Config(
            "policy and environment disagree on observation or action space".into(),
        ));
    }

    let mut states: Vec<T> = Vec::with_capacity(min_timesteps * obs_dim);
    let mut actions: Vec<Action<T>> = Vec::with_capacity(min_timesteps);
    let mut rewards = Vec::with_capacity(min_timesteps);
    let mut ends = Vec::with_capacity(min_timesteps);
    let mut truncated_at: Vec<(usize, Vec<T>)> = Vec::new();
    let mut episode_returns = Vec::new();
    let mut episode_lengths = Vec::new();

    while rewards.len() < min_timesteps {
        let ei = envs.next;
        envs.next = (envs.next + 1) % envs.envs.len();
        let episode = envs.episodes;
        envs.episodes += 1;
        let seed: u64 = envs.seed_streams[ei].gen();
        let env = &mut envs.envs[ei];
        let mut s = env.reset(seed);
        let mut ret = T::zero();
        let mut len = 0usize;
        loop {
            let st = Tensor::matrix(1, obs_dim, s.clone())?;
            let dist = policy.evaluate_dist(&st)?;
            let a = dist.sample(0, rng);
            let out = env.step(&a).map_err(|e| Error::Environment {
                episode,
                step: len,
                message: e.to_string(),
            })?;
            if !out.reward.is_finite() || out.state.iter().any(|v| !v.is_finite()) {
                return Err(Error::Environment {
                    episode,
                    step: len,
                    message: "non-finite reward or state".into(),
                });
            }
            states.extend_from_slice(&s);
            actions.push(a);
            rewards.push(out.reward);
            ret += out.reward;
            len += 1;
            if out.terminated {
                ends.push(EpisodeEnd::Terminated);
                break;
            }
            if out.truncated || len >= env.horizon() {
                truncated_at.push((ends.len(), out.state));
                ends.push(EpisodeEnd::Truncated(T::zero()));
                break;
            }
            ends.push(EpisodeEnd::Continue);
            s = out.state;
        }
        episode_returns.push(ret);
        episode_lengths.push(len);
    }

    let n = rewards.len();
    let states = Tensor::matrix(n, obs_dim, states)?;
    let actions = Actions::from_actions(&actions, space)?;
    let (behavior, values) = policy.evaluate(&states)?;
    let log_probs = behavior.log_prob(&actions)?;

    if !truncated_at.is_empty() {
        let mut finals = Vec::with_capacity(truncated_at.len() * obs_dim);
        for (_, s) in &truncated_at {
            finals.extend_from_slice(s);
        }
        let (_, boot) = policy.evaluate(&Tensor::matrix(truncated_at.len(), obs_dim, finals)?)?;
        for ((t, _), b) in truncated_at.iter().zip(boot) {
            ends[*t] = EpisodeEnd::Truncated(b);
        }
    }

    let raw = gae(&rewards, &values, &ends, T::c(cfg.gamma), T::c(cfg.lambda))?;
    let returns: Vec<T> = raw.iter().zip(&values).map(|(&a, &v)| a + v).collect();
    let mut advantages = raw;
    if cfg.normalize_advantages {
        normalize(&mut advantages);
    }

    Ok(TrajectoryBatch {
        states,
        actions,
        rewards,
        ends,
        log_probs,
        values,
        advantages,
        returns,
        behavior,
        snapshot_version: policy.version(),
        episode_returns,
        episode_lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lambda_zero_gives_td_residuals() {
        let r = [1.0f64, 0.5, -0.2];
        let v = [0.3, 0.1, 0.4];
        let ends = [
            EpisodeEnd::Continue,
            EpisodeEnd::Continue,
            EpisodeEnd::Truncated(0.7),
        ];
        let a = gae(&r, &v, &ends, 0.9, 0.0).unwrap();
        let expect = [1.0 + 0.9 * 0.1 - 0.3, 0.5 + 0.9 * 0.4 - 0.1, -0.2 + 0.9 * 0.7 - 0.4];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_expanded_two_step_episode() {
        let a = gae(
            &[1.0f64, 1.0],
            &[0.5, 0.5],
            &[EpisodeEnd::Continue, EpisodeEnd::Terminated],
            0.99,
            0.95,
        )
        .unwrap();
        assert!((a[0] - 1.46525).abs() < 1e-12);
        assert!((a[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_arrays_rejected() {
        let err = gae(&[1.0], &[0.0, 0.0], &[EpisodeEnd::Terminated], 0.9, 0.9);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn open_episode_rejected() {
        let err = gae(&[1.0], &[0.0], &[EpisodeEnd::Continue], 0.9, 0.9);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn minibatch_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mbs = minibatches(10, 4, &mut rng);
        assert_eq!(mbs.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = mbs.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(minibatches(10, 10, &mut rng).len(), 1);
    }

    #[test]
    fn minibatch_replay_is_deterministic() {
        let a = minibatches(37, 8, &mut ChaCha8Rng::seed_from_u64(3));
        let b = minibatches(37, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_moments() {
        let mut x = vec![3.0, -1.0, 4.0, 1.0, -5.0, 9.0];
        normalize(&mut x);
        let n = x.len() as f64;
        let mean: f64 = x.iter().sum::<f64>() / n;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
    }
}
