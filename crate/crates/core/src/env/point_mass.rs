use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Environment, StepOutcome};

const DT: f64 = 0.1;
const BOX: f64 = 10.0;
const GOAL_RADIUS: f64 = 0.05;
const ACTION_COST: f64 = 0.01;
const INIT_RANGE: f64 = 1.0;

/// Double integrator in the plane; drive the point to the origin.
///
/// State `[px, py, vx, vy]`, action is an acceleration in `[-1, 1]²`.
/// Initial positions are uniform in `[-1, 1]²` with zero velocity.
#[derive(Debug, Clone)]
pub struct PointMass2D<T> {
    pos: [T; 2],
    vel: [T; 2],
    t: usize,
    horizon: usize,
    rng: ChaCha8Rng,
    warned_clip: bool,
}

impl<T: Scalar> Default for PointMass2D<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> PointMass2D<T> {
    pub const HORIZON: usize = 100;

    pub fn new() -> Self {
        Self {
            pos: [T::zero(); 2],
            vel: [T::zero(); 2],
            t: 0,
            horizon: Self::HORIZON,
            rng: ChaCha8Rng::seed_from_u64(0),
            warned_clip: false,
        }
    }

    /// Overrides the current position and velocity (the step counter is kept).
    pub fn set_state(&mut self, pos: [T; 2], vel: [T; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    fn observe(&self) -> Vec<T> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    /// Proportional-derivative controller used to calibrate achievable returns.
    pub fn pd_action(state: &[T], kp: T, kd: T) -> Action<T> {
        Action::Continuous(
            (0..2)
                .map(|i| (-kp * state[i] - kd * state[i + 2]).max(-T::one()).min(T::one()))
                .collect(),
        )
    }
}

impl<T: Scalar> Environment<T> for PointMass2D<T> {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<T> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = [
            T::c(self.rng.gen_range(-INIT_RANGE..=INIT_RANGE)),
            T::c(self.rng.gen_range(-INIT_RANGE..=INIT_RANGE)),
        ];
        self.vel = [T::zero(); 2];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action<T>) -> Result<StepOutcome<T>> {
        let Action::Continuous(a) = action else {
            return Err(Error::Input("point mass expects a continuous action".into()));
        };
        if a.len() != 2 {
            return Err(Error::Input(format!("point mass expects 2 action dims, got {}", a.len())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite action".into()));
        }
        let one = T::one();
        let mut acc = [a[0], a[1]];
        for v in acc.iter_mut() {
            if v.abs() > one {
                if !self.warned_clip {
                    log::warn!("point mass action {} outside [-1, 1]; clipping", *v);
                    self.warned_clip = true;
                }
                *v = v.max(-one).min(one);
            }
        }
        let (dt, bound) = (T::c(DT), T::c(BOX));
        for i in 0..2 {
            self.pos[i] = (self.pos[i] + self.vel[i] * dt).max(-bound).min(bound);
            self.vel[i] = (self.vel[i] + acc[i] * dt).max(-bound).min(bound);
        }
        self.t += 1;
        let dist = (self.pos[0] * self.pos[0] + self.pos[1] * self.pos[1]).sqrt();
        let effort = acc[0] * acc[0] + acc[1] * acc[1];
        let reward = -dist - T::c(ACTION_COST) * effort;
        let terminated = dist < T::c(GOAL_RADIUS);
        Ok(StepOutcome {
            state: self.observe(),
            reward,
            terminated,
            truncated: !terminated && self.t >= self.horizon,
        })
    }
}
