//! An independent forward pass and loss for the deep Q network, with random
//! small networks and batches to check gradients against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use raildq::encoding::{ActionMask, N_ACTIONS};
use raildq::qmodel::{DeepQ, Sample};

/// Plain forward pass over the flat parameter vector, written independently
/// of the library: layer by layer, weights row-major then biases, rectifier
/// on every layer but the last.
pub fn oracle_forward(sizes: &[usize], p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut at = 0;
    for (k, pair) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = &p[at..at + n_in * n_out];
        let b = &p[at + n_in * n_out..at + n_in * n_out + n_out];
        at += n_in * n_out + n_out;
        let mut z: Vec<f64> =
            (0..n_out).map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * a[i]).sum::<f64>()).collect();
        if k + 2 < sizes.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a
}

pub fn oracle_loss(sizes: &[usize], p: &[f64], batch: &[Sample]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|s| {
            let q = oracle_forward(sizes, p, s.state);
            s.mask.actions().map(|a| (q[a as usize] - s.target[a as usize]).powi(2)).sum::<f64>()
        })
        .sum();
    total / batch.len() as f64
}

pub struct Case {
    pub sizes: Vec<usize>,
    pub net: DeepQ,
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<([f64; N_ACTIONS], ActionMask)>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let mut sizes = vec![rng.gen_range(1..=8)];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(1..=8));
    }
    sizes.push(N_ACTIONS);
    let net = DeepQ::with_sizes(&sizes, 0.01, rng.gen());
    let n = rng.gen_range(1..=6);
    let states = (0..n).map(|_| (0..sizes[0]).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let targets = (0..n)
        .map(|_| {
            let mut t = [0.0; N_ACTIONS];
            t.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
            let mask = ActionMask::from_bits(rng.gen_range(1..32));
            (t, mask)
        })
        .collect();
    Case { sizes, net, states, targets }
}

pub fn batch(case: &Case) -> Vec<Sample<'_>> {
    case.states.iter().zip(&case.targets).map(|(s, (t, m))| Sample { state: s, target: *t, mask: *m }).collect()
}

/// Relative error between the analytic gradient and central differences of the oracle loss.
pub fn gradient_error(case: &Case, h: f64) -> f64 {
    let batch = batch(case);
    let p = case.net.params();
    let (_, grad) = case.net.gradient(&batch).unwrap();
    let fd: Vec<f64> = (0..p.len())
        .map(|i| {
            let mut up = p.clone();
            up[i] += h;
            let mut down = p.clone();
            down[i] -= h;
            (oracle_loss(&case.sizes, &up, &batch) - oracle_loss(&case.sizes, &down, &batch)) / (2.0 * h)
        })
        .collect();
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt() + fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
