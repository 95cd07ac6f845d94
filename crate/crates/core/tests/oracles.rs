//! Independent oracles: finite differences, a hand-rolled network forward pass,
//! Monte-Carlo KL, brute-force GAE, a two-state fixup scenario and a rollout recount.

use fixpo_core::autodiff::Graph;
use fixpo_core::rng::{stream_rng, Stream};
use fixpo_core::rollout::{gae, normalize, rollout};
use fixpo_core::{
    Ablation, Action, ActionSpace, Actions, DistParams, EnvId, EnvSet, Environment, EpisodeEnd,
    FixPo, NetworkConfig, PointMass2D, PolicyOptimizer, PolicyParams, RolloutConfig, Tensor,
    TrajectoryBatch, TrustRegionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn composite_expression_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::matrix(3, 4, randn(&mut rng, 12)).unwrap();
    let w = Tensor::matrix(4, 3, randn(&mut rng, 12)).unwrap();
    let b = Tensor::vector(randn(&mut rng, 3));
    let f = |w: &Tensor<f64>, b: &Tensor<f64>| {
        let g = Graph::new();
        let (wv, bv) = (g.param(w), g.param(b));
        let h = g.constant(&x).matmul(wv).add_bias(bv).tanh();
        let lp = h.log_softmax_rows().pick_rows(&[0, 2, 1]).unwrap();
        let e = (h * 0.5).exp().sum_rows();
        let loss = (lp.square() + e.ln() - lp / (e + 1.0)).mean() + h.max() + bv.sum();
        let val = loss.item();
        let grads = g.backward(loss).unwrap();
        (val, grads.wrt(wv), grads.wrt(bv))
    };
    let (_, gw, gb) = f(&w, &b);
    let h = 1e-6;
    for j in 0..w.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.data_mut()[j] += h;
        wm.data_mut()[j] -= h;
        let num = (f(&wp, &b).0 - f(&wm, &b).0) / (2.0 * h);
        assert!((num - gw[j]).abs() < 1e-6 * (1.0 + num.abs()), "w[{j}]: {num} vs {}", gw[j]);
    }
    for j in 0..b.len() {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp.data_mut()[j] += h;
        bm.data_mut()[j] -= h;
        let num = (f(&w, &bp).0 - f(&w, &bm).0) / (2.0 * h);
        assert!((num - gb[j]).abs() < 1e-6 * (1.0 + num.abs()), "b[{j}]: {num} vs {}", gb[j]);
    }
}

fn dense_tanh(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, tanh: bool) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|j| {
            let z = b.data()[j] + (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum::<f64>();
            if tanh {
                z.tanh()
            } else {
                z
            }
        })
        .collect()
}

#[test]
fn network_forward_matches_hand_rolled_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = NetworkConfig {
        hidden: vec![64, 64],
        share_trunk: false,
    };
    let mut p = PolicyParams::<f64>::init(2, ActionSpace::Discrete(3), &net, &mut rng).unwrap();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = [0.3, -1.7];
    let (dist, values) = p.evaluate(&Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();

    // Tensor order: three policy layers (W, b), then three value layers.
    let t = p.tensors();
    let mut h = x.to_vec();
    for l in 0..3 {
        h = dense_tanh(&h, &t[2 * l], &t[2 * l + 1], l < 2);
    }
    let lse = h.iter().map(|v| v.exp()).sum::<f64>().ln();
    let mut v = x.to_vec();
    for l in 3..6 {
        v = dense_tanh(&v, &t[2 * l], &t[2 * l + 1], l < 5);
    }

    let DistParams::Categorical { logits } = dist else {
        panic!("expected categorical")
    };
    let got: Vec<f64> = logits.row(0).to_vec();
    let got_lse = got.iter().map(|v| v.exp()).sum::<f64>().ln();
    for k in 0..3 {
        assert!(((got[k] - got_lse) - (h[k] - lse)).abs() < 1e-12);
    }
    assert!((values[0] - v[0]).abs() < 1e-12);
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples = 200_000;
    for pair in 0..6 {
        let (p, q) = if pair % 2 == 0 {
            let m = |rng: &mut ChaCha8Rng, s: f64| {
                Tensor::matrix(1, 2, randn(rng, 2).iter().map(|v| s * v).collect()).unwrap()
            };
            (
                DistParams::Gaussian { mean: m(&mut rng, 1.0), log_std: m(&mut rng, 0.3) },
                DistParams::Gaussian { mean: m(&mut rng, 1.0), log_std: m(&mut rng, 0.3) },
            )
        } else {
            let l = |rng: &mut ChaCha8Rng| Tensor::matrix(1, 4, randn(rng, 4)).unwrap();
            (
                DistParams::Categorical { logits: l(&mut rng) },
                DistParams::Categorical { logits: l(&mut rng) },
            )
        };
        let space = match &p {
            DistParams::Gaussian { .. } => ActionSpace::Continuous(2),
            DistParams::Categorical { .. } => ActionSpace::Discrete(4),
        };
        let closed = p.kl(&q).unwrap()[0];
        let acts: Vec<Action<f64>> = (0..samples).map(|_| p.sample(0, &mut rng)).collect();
        let acts = Actions::from_actions(&acts, space).unwrap();
        let rows = vec![0; samples];
        let (lp, lq) = (p.select(&rows).log_prob(&acts).unwrap(), q.select(&rows).log_prob(&acts).unwrap());
        let d: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
        let m = d.iter().sum::<f64>() / samples as f64;
        let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        assert!((m - closed).abs() < 4.0 * se, "pair {pair}: mc {m} vs closed {closed} (se {se})");
    }
}

#[test]
fn gae_matches_double_sum_over_concatenated_episodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let lens: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..8)).collect();
        let n: usize = lens.iter().sum();
        let (gamma, lambda) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let r = randn(&mut rng, n);
        let v = randn(&mut rng, n);
        let mut ends = Vec::new();
        for &len in &lens {
            ends.extend(std::iter::repeat(EpisodeEnd::Continue).take(len - 1));
            ends.push(if rng.gen_bool(0.5) {
                EpisodeEnd::Terminated
            } else {
                EpisodeEnd::Truncated(rng.sample(StandardNormal))
            });
        }
        let got = gae(&r, &v, &ends, gamma, lambda).unwrap();
        let mut start = 0;
        for &len in &lens {
            let last = start + len - 1;
            let next_v = |k: usize| match ends[k] {
                EpisodeEnd::Continue => v[k + 1],
                EpisodeEnd::Terminated => 0.0,
                EpisodeEnd::Truncated(b) => b,
            };
            for t in start..=last {
                let want: f64 = (t..=last)
                    .map(|k| (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * next_v(k) - v[k]))
                    .sum();
                assert!((got[t] - want).abs() < 1e-10);
            }
            start += len;
        }
    }
}

/// Two states with one-hot advantages and a large step size: the primary phase
/// alone overshoots a tight trust region, the fixup phase pulls it back.
fn two_state_batch(params: &PolicyParams<f64>) -> TrajectoryBatch<f64> {
    let states = Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap();
    let actions = Actions::Discrete(vec![0, 1]);
    let behavior = params.evaluate_dist(&states).unwrap();
    TrajectoryBatch {
        log_probs: behavior.log_prob(&actions).unwrap(),
        states,
        actions,
        rewards: vec![1.0, 1.0],
        ends: vec![EpisodeEnd::Terminated, EpisodeEnd::Terminated],
        values: vec![0.0, 0.0],
        advantages: vec![1.0, 1.0],
        returns: vec![1.0, 1.0],
        behavior,
        snapshot_version: params.version(),
        episode_returns: vec![1.0, 1.0],
        episode_lengths: vec![1, 1],
    }
}

fn two_state_update(ablation: Ablation) -> (f64, usize) {
    let net = NetworkConfig {
        hidden: vec![],
        share_trunk: false,
    };
    let mut params =
        PolicyParams::<f64>::init(1, ActionSpace::Discrete(2), &net, &mut stream_rng(0, Stream::Init)).unwrap();
    let batch = two_state_batch(&params);
    let cfg = TrustRegionConfig {
        eps_kl: 0.01,
        lr_theta: 0.1,
        beta_init: 0.01,
        n_epochs: 3,
        minibatch_size: 2,
        ablation,
        ..TrustRegionConfig::default()
    };
    let mut opt = FixPo::with_seed(cfg, &params, 0).unwrap();
    let stats = opt.update(&mut params, &batch).unwrap();
    let after = params.evaluate_dist(&batch.states).unwrap();
    let max = after.kl(&batch.behavior).unwrap().into_iter().fold(0.0, f64::max);
    (max, stats.fixup_grad_steps)
}

#[test]
fn fixup_restores_a_tight_trust_region() {
    let (unfixed, steps) = two_state_update(Ablation::NoFixup);
    assert!(unfixed > 0.01, "primary phase alone should overshoot, got {unfixed}");
    assert_eq!(steps, 0);

    let (fixed, steps) = two_state_update(Ablation::None);
    assert!(fixed <= 0.01, "max KL {fixed} after fixup");
    assert!(steps > 0);

    let (last_only, _) = two_state_update(Ablation::FixupLastEpochOnly);
    assert!(last_only <= 0.01);
}

#[test]
fn rollout_bookkeeping_recounts() {
    let mut envs = EnvSet::<f64>::new(EnvId::PointMass2d, 3, 5);
    let params = PolicyParams::init(
        envs.obs_dim(),
        envs.action_space(),
        &NetworkConfig::default(),
        &mut stream_rng(5, Stream::Init),
    )
    .unwrap();
    let mut rng = stream_rng(5, Stream::Sampling);
    let batch = rollout(&params, &mut envs, 500, &RolloutConfig::default(), &mut rng).unwrap();
    assert!(batch.len() >= 500);
    assert_eq!(batch.episode_lengths.iter().sum::<usize>(), batch.len());
    let closed = batch.ends.iter().filter(|e| !matches!(e, EpisodeEnd::Continue)).count();
    assert_eq!(closed, batch.episode_returns.len());
    assert!(!matches!(batch.ends.last(), Some(EpisodeEnd::Continue)));
    let mut start = 0;
    for (len, ret) in batch.episode_lengths.iter().zip(&batch.episode_returns) {
        let sum: f64 = batch.rewards[start..start + len].iter().sum();
        assert!((sum - ret).abs() < 1e-9);
        start += len;
    }
    let cfg = RolloutConfig::default();
    let raw = gae(&batch.rewards, &batch.values, &batch.ends, cfg.gamma, cfg.lambda).unwrap();
    let mut normed = raw.clone();
    normalize(&mut normed);
    for i in 0..batch.len() {
        assert!((batch.returns[i] - (raw[i] + batch.values[i])).abs() < 1e-12);
        assert!((batch.advantages[i] - normed[i]).abs() < 1e-12);
    }
    let lp = batch.behavior.log_prob(&batch.actions).unwrap();
    for (a, b) in lp.iter().zip(&batch.log_probs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pd_controller_reaches_calibration_return() {
    let mut env = PointMass2D::<f64>::new();
    let episodes = 100;
    let mut total = 0.0;
    for seed in 0..episodes {
        let mut s = env.reset(seed);
        loop {
            let out = env.step(&PointMass2D::pd_action(&s, 4.0, 2.5)).unwrap();
            total += out.reward;
            s = out.state;
            if out.terminated || out.truncated {
                break;
            }
        }
    }
    let avg = total / episodes as f64;
    assert!(avg >= -10.0, "PD controller average return {avg}");
}
