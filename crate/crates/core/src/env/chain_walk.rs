use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Environment, StepOutcome};

/// Discrete chain: walk right to collect reward at the last state.
///
/// Action 0 moves left, 1 moves right; with probability `slip` the move is
/// reversed. Moves past either end leave the agent in place. Reward 1 is paid
/// on every step that ends in the rightmost state. Episodes never terminate
/// early. By default the start state is drawn uniformly, so a random initial
/// policy sees reward often enough to learn from.
#[derive(Debug, Clone)]
pub struct ChainWalk {
    n: usize,
    start: Start,
    slip: f64,
    horizon: usize,
    state: usize,
    t: usize,
    rng: ChaCha8Rng,
}

/// Start-state distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Uniform,
    Fixed(usize),
}

impl Default for ChainWalk {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainWalk {
    pub const N: usize = 20;
    pub const SLIP: f64 = 0.1;
    pub const HORIZON: usize = 50;

    pub fn new() -> Self {
        Self::with_params(Self::N, Self::SLIP, Self::HORIZON)
    }

    pub fn with_params(n: usize, slip: f64, horizon: usize) -> Self {
        assert!(n >= 2, "chain needs at least two states");
        assert!((0.0..=1.0).contains(&slip), "slip is a probability");
        Self {
            n,
            start: Start::Uniform,
            slip,
            horizon,
            state: 0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_start(mut self, start: Start) -> Self {
        if let Start::Fixed(s) = start {
            assert!(s < self.n, "start state out of range");
        }
        self.start = start;
        self
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    /// Transition probabilities `P(s' | s, a)` as a dense row.
    pub fn transition_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n];
        let intended = self.shift(s, a == 1);
        let slipped = self.shift(s, a != 1);
        row[intended] += 1.0 - self.slip;
        row[slipped] += self.slip;
        row
    }

    fn shift(&self, s: usize, right: bool) -> usize {
        if right {
            (s + 1).min(self.n - 1)
        } else {
            s.saturating_sub(1)
        }
    }

    fn observe<T: Scalar>(&self) -> Vec<T> {
        vec![T::c(2.0 * self.state as f64 / (self.n - 1) as f64 - 1.0)]
    }

    /// Expected return of the optimal policy under the start distribution.
    pub fn optimal_expected_return(&self) -> f64 {
        let v = self.optimal_values();
        match self.start {
            Start::Fixed(s) => v[s],
            Start::Uniform => v.iter().sum::<f64>() / self.n as f64,
        }
    }

    /// Optimal horizon-length value of every state, by finite-horizon dynamic
    /// programming.
    pub fn optimal_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for _ in 0..self.horizon {
            let next: Vec<f64> = (0..self.n)
                .map(|s| {
                    (0..2)
                        .map(|a| {
                            self.transition_row(s, a)
                                .iter()
                                .enumerate()
                                .map(|(s2, p)| p * (self.reward_at(s2) + v[s2]))
                                .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            v = next;
        }
        v
    }

    fn reward_at(&self, s: usize) -> f64 {
        if s == self.n - 1 {
            1.0
        } else {
            0.0
        }
    }
}

impl<T: Scalar> Environment<T> for ChainWalk {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<T> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = match self.start {
            Start::Fixed(s) => s,
            Start::Uniform => self.rng.gen_range(0..self.n),
        };
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action<T>) -> Result<StepOutcome<T>> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            Action::Discrete(a) => {
                return Err(Error::Input(format!("chain walk action {a} out of range")))
            }
            Action::Continuous(_) => {
                return Err(Error::Input("chain walk expects a discrete action".into()))
            }
        };
        let slipped = self.slip > 0.0 && self.rng.gen::<f64>() < self.slip;
        let right = (a == 1) != slipped;
        self.state = self.shift(self.state, right);
        self.t += 1;
        Ok(StepOutcome {
            state: self.observe(),
            reward: T::c(self.reward_at(self.state)),
            terminated: false,
            truncated: self.t >= self.horizon,
        })
    }
}
