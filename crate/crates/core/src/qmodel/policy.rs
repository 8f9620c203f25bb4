//! ε-greedy action selection with multiplicative decay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{ActionMask, N_ACTIONS};
use crate::error::{Error, Result};

pub const DECAY_DIVISOR: f64 = 1.00075;
pub const EPSILON_FLOOR: f64 = 1e-4;

/// Highest unmasked q-value, ties to the lowest action.
pub fn greedy_action(q: &[f64; N_ACTIONS], mask: ActionMask) -> Result<u8> {
    let mut best: Option<u8> = None;
    for a in mask.actions() {
        match best {
            Some(b) if q[a as usize] <= q[b as usize] => {}
            _ => best = Some(a),
        }
    }
    best.ok_or(Error::EmptyMask)
}

#[derive(Clone, Debug)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
    pub divisor: f64,
    pub floor: f64,
    rng: ChaCha8Rng,
}

impl EpsilonGreedy {
    pub fn new(seed: u64) -> Self {
        Self::with_schedule(1.0, DECAY_DIVISOR, EPSILON_FLOOR, seed)
    }

    pub fn with_schedule(epsilon: f64, divisor: f64, floor: f64, seed: u64) -> Self {
        EpsilonGreedy { epsilon, divisor, floor, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn greedy(seed: u64) -> Self {
        Self::with_schedule(0.0, DECAY_DIVISOR, 0.0, seed)
    }

    pub fn decay(&mut self) {
        self.epsilon = (self.epsilon / self.divisor).max(self.floor);
    }

    pub fn select(&mut self, q: &[f64; N_ACTIONS], mask: ActionMask) -> Result<u8> {
        let allowed: Vec<u8> = mask.actions().collect();
        match allowed.len() {
            0 => return Err(Error::EmptyMask),
            1 => return Ok(allowed[0]),
            _ => {}
        }
        let theta: f64 = self.rng.gen();
        if theta < self.epsilon {
            Ok(allowed[self.rng.gen_range(0..allowed.len())])
        } else {
            greedy_action(q, mask)
        }
    }
}
