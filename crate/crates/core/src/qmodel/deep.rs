//! Fully connected Q-network trained by plain stochastic gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::N_ACTIONS;
use crate::error::{Error, Result};
use crate::qmodel::{QFunction, Sample};

pub const HIDDEN: usize = 60;
pub const DEFAULT_LR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepQ {
    pub layers: Vec<Layer>,
    pub lr: f64,
}

impl DeepQ {
    /// `input → 60 → 60 → 5` with seeded uniform initialisation.
    pub fn new(input: usize, seed: u64) -> Self {
        Self::with_sizes(&[input, HIDDEN, HIDDEN, N_ACTIONS], DEFAULT_LR, seed)
    }

    /// Weights and biases drawn from U[−1/√fan_in, 1/√fan_in].
    pub fn with_sizes(sizes: &[usize], lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(sizes, lr);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for w in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], lr: f64) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least an input and an output size");
        DeepQ { layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(), lr }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Activations of every layer, input first; hidden layers after the rectifier.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_in = self.layers[0].n_in;
        if x.len() != n_in {
            return Err(Error::Dimension { expected: n_in, got: x.len() });
        }
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.apply(acts.last().unwrap(), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters flattened as W1, b1, W2, b2, ...
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: p.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Mean over samples of the squared error summed over unmasked outputs.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in batch {
            let q = self.forward_vec(s.state)?;
            total += masked_sq_error(&q, s);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient with respect to [`DeepQ::params`].
    pub fn gradient(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let n = batch.len().max(1) as f64;
        let mut total = 0.0;
        for s in batch {
            let acts = self.activations(s.state)?;
            let q = acts.last().unwrap();
            total += masked_sq_error(q, s);
            let mut delta: Vec<f64> = (0..q.len())
                .map(|a| if s.mask.allowed(a as u8) { 2.0 * (q[a] - s.target[a]) / n } else { 0.0 })
                .collect();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let g = &mut grads[li];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.b[o] += d;
                    let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (gw, x) in row.iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // Rectifier derivative; zero at the kink.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in grads {
            flat.extend(g.w);
            flat.extend(g.b);
        }
        Ok((total / n, flat))
    }
}

fn masked_sq_error(q: &[f64], s: &Sample) -> f64 {
    (0..q.len()).filter(|&a| s.mask.allowed(a as u8)).map(|a| (q[a] - s.target[a]).powi(2)).sum()
}

impl QFunction for DeepQ {
    fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    fn q_values(&self, x: &[f64]) -> Result<[f64; N_ACTIONS]> {
        let v = self.forward_vec(x)?;
        if v.len() != N_ACTIONS {
            return Err(Error::Dimension { expected: N_ACTIONS, got: v.len() });
        }
        let mut q = [0.0; N_ACTIONS];
        q.copy_from_slice(&v);
        Ok(q)
    }

    fn train_step(&mut self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let (loss, grad) = self.gradient(batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(loss));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut().chain(l.b.iter_mut()) {
                *w -= self.lr * grad[at];
                at += 1;
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::ActionMask;

    const ALL: ActionMask = ActionMask([true; 5]);

    #[test]
    fn zero_network_outputs_zero() {
        let net = DeepQ::zeros(&[4, 60, 60, 5], 0.01);
        assert_eq!(net.q_values(&[1.0, -2.0, 3.0, 0.5]).unwrap(), [0.0; 5]);
    }

    #[test]
    fn single_path_hand_evaluation() {
        let mut net = DeepQ::zeros(&[1, 1, 1, 5], 0.01);
        net.layers[0].w[0] = 2.0;
        net.layers[0].b[0] = -1.0;
        net.layers[1].w[0] = 3.0;
        net.layers[1].b[0] = 0.5;
        for o in 0..5 {
            net.layers[2].w[o] = o as f64;
            net.layers[2].b[o] = 1.0;
        }
        // x = 2: h1 = relu(2·2 − 1) = 3, h2 = relu(3·3 + 0.5) = 9.5, q_o = 9.5·o + 1
        let q = net.q_values(&[2.0]).unwrap();
        assert_eq!(q, [1.0, 10.5, 20.0, 29.5, 39.0]);
        // x = 0: h1 = relu(−1) = 0, h2 = 0.5
        let q = net.q_values(&[0.0]).unwrap();
        assert_eq!(q, [1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dimension() {
        let net = DeepQ::new(7, 3);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        assert_eq!(net.q_values(&x).unwrap(), net.q_values(&x).unwrap());
        assert!(matches!(net.q_values(&x[..3]), Err(Error::Dimension { expected: 7, got: 3 })));
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(DeepQ::new(10, 42), DeepQ::new(10, 42));
        assert_ne!(DeepQ::new(10, 42), DeepQ::new(10, 43));
        let net = DeepQ::new(16, 1);
        let bound = 1.0 / 4.0;
        assert!(net.layers[0].w.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn targets_equal_outputs_give_zero_loss_and_no_update() {
        let mut net = DeepQ::new(3, 9);
        let x = [1.0, 0.0, -1.0];
        let q = net.q_values(&x).unwrap();
        let before = net.params();
        let loss = net.train_step(&[Sample { state: &x, target: q, mask: ALL }]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.params(), before);
    }

    #[test]
    fn repeated_steps_do_not_increase_loss() {
        let mut net = DeepQ::new(6, 5);
        let x = [1.0, 0.0, 2.0, 9.0, 1.0, 0.0];
        let s = Sample {
            state: &x,
            target: [-1.0, -1.0, 1.0, 0.0, 0.0],
            mask: ActionMask([true, true, true, false, false]),
        };
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = net.train_step(std::slice::from_ref(&s)).unwrap();
            assert!(loss <= last + 1e-12, "loss rose from {last} to {loss}");
            last = loss;
        }
    }

    #[test]
    fn masked_outputs_do_not_contribute() {
        let net = DeepQ::new(2, 1);
        let x = [0.5, 0.5];
        let q = net.q_values(&x).unwrap();
        let mut target = q;
        target[3] += 100.0;
        let mask = ActionMask([true, true, true, false, false]);
        assert_eq!(net.loss(&[Sample { state: &x, target, mask }]).unwrap(), 0.0);
    }
}
