mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raildq::encoding::{ActionMask, N_ACTIONS};
use raildq::qmodel::linear::state_key;
use raildq::qmodel::{greedy_action, DeepQ, EpsilonGreedy, LinearQ, Model, ModelFile, QFunction, Sample};

use common::nets::{batch, gradient_error, oracle_forward, oracle_loss, random_case};

#[test]
fn backpropagation_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..50 {
        let case = random_case(&mut rng);
        let (loss, _) = case.net.gradient(&batch(&case)).unwrap();
        assert!((loss - oracle_loss(&case.sizes, &case.net.params(), &batch(&case))).abs() < 1e-12);
        let rel = gradient_error(&case, 1e-5);
        assert!(rel < 1e-4, "net {n} {:?}: relative error {rel}", case.sizes);
    }
}

#[test]
fn one_step_is_plain_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let case = random_case(&mut rng);
    let batch = batch(&case);
    let (_, grad) = case.net.gradient(&batch).unwrap();
    let mut net = case.net.clone();
    net.train_step(&batch).unwrap();
    let expected: Vec<f64> = case.net.params().iter().zip(&grad).map(|(p, g)| p - 0.01 * g).collect();
    assert_eq!(net.params(), expected);
}

#[test]
fn forward_matches_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let case = random_case(&mut rng);
        for s in &case.states {
            let q = case.net.q_values(s).unwrap();
            let o = oracle_forward(&case.sizes, &case.net.params(), s);
            for (a, b) in q.iter().zip(&o) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn epsilon_after_ten_thousand_decays() {
    let mut policy = EpsilonGreedy::with_schedule(1.0, 1.00075, 0.0, 0);
    for _ in 0..10_000 {
        policy.decay();
    }
    let closed = (-10_000.0 * 1.00075f64.ln()).exp();
    assert!((policy.epsilon - closed).abs() < 1e-8);
    assert!((policy.epsilon - 5.53e-4).abs() < 1e-5);
}

#[test]
fn epsilon_stops_at_its_floor() {
    let mut policy = EpsilonGreedy::with_schedule(1.0, 2.0, 0.01, 0);
    for _ in 0..100 {
        policy.decay();
    }
    assert_eq!(policy.epsilon, 0.01);
}

#[test]
fn full_exploration_is_uniform_over_allowed_actions() {
    let mut policy = EpsilonGreedy::with_schedule(1.0, 1.0, 1.0, 77);
    let mask = ActionMask([true, true, false, true, false]);
    let q = [0.0, 10.0, 0.0, -10.0, 0.0];
    let mut counts = [0usize; N_ACTIONS];
    let draws = 30_000;
    for _ in 0..draws {
        counts[policy.select(&q, mask).unwrap() as usize] += 1;
    }
    assert_eq!(counts[2] + counts[4], 0);
    for a in [0, 1, 3] {
        let freq = counts[a] as f64 / draws as f64;
        assert!((freq - 1.0 / 3.0).abs() < 0.01, "action {a}: {freq}");
    }
}

#[test]
fn zero_epsilon_is_greedy() {
    let mut policy = EpsilonGreedy::greedy(1);
    let mask = ActionMask([true, false, true, true, false]);
    let q = [0.5, 9.0, 0.7, 0.6, 8.0];
    for _ in 0..100 {
        assert_eq!(policy.select(&q, mask).unwrap(), 2);
    }
}

#[test]
fn linear_table_learns_each_key_separately() {
    let mut table = LinearQ::new(2, 0.5);
    let a = [1.0, 2.0];
    let b = [1.04, 2.0];
    let c = [1.06, 2.0];
    assert_eq!(state_key(&a), state_key(&b));
    assert_ne!(state_key(&a), state_key(&c));
    let mask = ActionMask::from_bits(0b00001);
    table.train_step(&[Sample { state: &a, target: [4.0, 0.0, 0.0, 0.0, 0.0], mask }]).unwrap();
    assert_eq!(table.q_values(&b).unwrap()[0], 2.0);
    assert_eq!(table.q_values(&c).unwrap()[0], 0.0);
}

#[test]
fn model_files_survive_the_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = LinearQ::new(2, 0.1);
    table.insert(vec![3, -1], [0.1, 0.2, -0.3, 1.0 / 7.0, 0.0]);
    for (name, model) in [("deep.model", Model::Deep(DeepQ::new(12, 4))), ("linear.model", Model::Linear(table))] {
        let file = ModelFile { variant: "v".into(), model };
        let path = dir.path().join(name);
        file.save(&path).unwrap();
        assert_eq!(ModelFile::load(&path).unwrap(), file);
    }
}

proptest! {
    /// Perturbing masked outputs never changes the greedy choice.
    #[test]
    fn greedy_ignores_masked_outputs(
        q in prop::array::uniform5(-10.0f64..10.0),
        noise in prop::array::uniform5(-100.0f64..100.0),
        bits in 1u8..32,
    ) {
        let mask = ActionMask::from_bits(bits);
        let mut perturbed = q;
        for a in 0..N_ACTIONS {
            if !mask.allowed(a as u8) {
                perturbed[a] += noise[a];
            }
        }
        let pick = greedy_action(&q, mask).unwrap();
        prop_assert!(mask.allowed(pick));
        prop_assert_eq!(pick, greedy_action(&perturbed, mask).unwrap());
        prop_assert!(mask.actions().all(|a| q[a as usize] <= q[pick as usize]));
    }
}
