//! Tabular Q baseline over quantised state keys.

use std::collections::HashMap;

use crate::encoding::N_ACTIONS;
use crate::error::{Error, Result};
use crate::qmodel::{QFunction, Sample};

pub const DEFAULT_LR: f64 = 0.1;
/// Encodings are scaled by this factor before rounding to integer keys.
pub const KEY_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearQ {
    dim: usize,
    pub lr: f64,
    table: HashMap<Vec<i32>, [f64; N_ACTIONS]>,
}

pub fn state_key(x: &[f64]) -> Vec<i32> {
    x.iter().map(|v| (v * KEY_SCALE).round() as i32).collect()
}

impl LinearQ {
    pub fn new(dim: usize, lr: f64) -> Self {
        LinearQ { dim, lr, table: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn insert(&mut self, key: Vec<i32>, q: [f64; N_ACTIONS]) {
        self.table.insert(key, q);
    }

    pub fn sorted_entries(&self) -> Vec<(&Vec<i32>, &[f64; N_ACTIONS])> {
        let mut e: Vec<_> = self.table.iter().collect();
        e.sort_by(|a, b| a.0.cmp(b.0));
        e
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

impl QFunction for LinearQ {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn q_values(&self, x: &[f64]) -> Result<[f64; N_ACTIONS]> {
        self.check(x)?;
        Ok(self.table.get(&state_key(x)).copied().unwrap_or([0.0; N_ACTIONS]))
    }

    /// Moves every unmasked entry a fraction `lr` toward its target.
    fn train_step(&mut self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in batch {
            self.check(s.state)?;
            let q = self.table.entry(state_key(s.state)).or_insert([0.0; N_ACTIONS]);
            for a in s.mask.actions() {
                let err = s.target[a as usize] - q[a as usize];
                total += err * err;
                q[a as usize] += self.lr * err;
            }
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss));
        }
        Ok(loss)
    }
}
