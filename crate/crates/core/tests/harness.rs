use proptest::prelude::*;

use raildq::encoding::{Encoder, LocalConfig, N_ACTIONS};
use raildq::harness::episode::settle_experiences;
use raildq::harness::profile::ratios;
use raildq::harness::{
    evaluate, performance_profile, run_episode, train, Agent, AgentKind, DelayTable, RewardScheme, Trainer,
    TrainingConfig,
};
use raildq::instance::{Instance, TrainId};
use raildq::qmodel::{DeepQ, EpsilonGreedy, Model, ModelFile};
use raildq::replay::OutcomeClass;
use raildq::simcore::{SimOptions, SimState, Step, TerminalClass};
use raildq::topology::Network;
use raildq::traingen::fixture;

fn scenario(name: &str) -> (Network, Instance) {
    let s = fixture(name).unwrap();
    (s.network, s.instance)
}

fn only_first_train(net: &Network, inst: &Instance) -> Instance {
    let mut doc = inst.to_doc(net);
    doc.trains.truncate(1);
    Instance::from_doc(&doc, net).unwrap()
}

fn config(agent: AgentKind, episodes: usize, seed: u64) -> TrainingConfig {
    let mut c = TrainingConfig::new(agent, episodes, seed);
    c.fixture = Some("second-instance".into());
    c
}

#[test]
fn lone_train_needs_no_decisions() {
    let (net, inst) = scenario("reduced");
    let lone = only_first_train(&net, &inst);
    for kind in [AgentKind::Linear, AgentKind::DecentralizedDeep, AgentKind::CentralizedDeep] {
        let c = TrainingConfig::new(kind, 1, 0);
        let agent = Agent::new(kind, c.encoder(std::slice::from_ref(&lone)).unwrap(), &net, c.lr(), 0);
        let run = run_episode(&agent, &net, &lone, &mut EpsilonGreedy::new(1)).unwrap();
        assert_eq!(run.outcome.class, TerminalClass::AllArrived, "{kind}");
        assert_eq!(run.outcome.weighted_delay, Some(0.0));
        let exps =
            settle_experiences(&run, OutcomeClass::Best, c.reward(), &agent.encoder, 1.0, &agent.model, 0).unwrap();
        assert!(exps.is_empty(), "{kind}");
    }
}

#[test]
fn exploring_episodes_repeat_under_a_seed() {
    let (net, inst) = scenario("second-instance");
    let agent =
        Agent::new(AgentKind::DecentralizedDeep, Encoder::Local(LocalConfig::for_instance(&inst)), &net, 0.01, 3);
    for seed in 0..10 {
        let a = run_episode(&agent, &net, &inst, &mut EpsilonGreedy::new(seed)).unwrap();
        let b = run_episode(&agent, &net, &inst, &mut EpsilonGreedy::new(seed)).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.decisions.len(), b.decisions.len());
        for (x, y) in a.decisions.iter().zip(&b.decisions) {
            assert_eq!((x.train, x.action, x.mask, &x.state), (y.train, y.action, y.mask, &y.state));
        }
    }
}

/// A network whose only preference is to take the best resource.
fn never_hold(net: &Network, inst: &Instance) -> Agent {
    let encoder = Encoder::Local(LocalConfig::for_instance(inst));
    let mut model = DeepQ::zeros(&[encoder.dim(net), 2, N_ACTIONS], 0.01);
    model.layers[1].b = vec![-1.0, 1.0, 0.0, 0.0, 0.0];
    Agent { kind: AgentKind::DecentralizedDeep, encoder, model: Model::Deep(model) }
}

#[test]
fn head_on_without_holding_deadlocks() {
    let (net, inst) = scenario("head-on");
    let agent = never_hold(&net, &inst);
    let run = run_episode(&agent, &net, &inst, &mut EpsilonGreedy::greedy(0)).unwrap();
    assert_eq!(run.outcome.class, TerminalClass::Deadlock);
    assert_eq!(run.outcome.weighted_delay, None);
    let mut trains = run.outcome.deadlocked_trains.clone();
    trains.sort();
    assert_eq!(trains, [TrainId(0), TrainId(1)]);
    let exps = settle_experiences(
        &run,
        OutcomeClass::Deadlock,
        RewardScheme::TerminalClass,
        &agent.encoder,
        1.0,
        &agent.model,
        0,
    )
    .unwrap();
    let deciding: std::collections::BTreeSet<TrainId> =
        run.decisions.iter().filter(|d| d.mask.count() >= 2).map(|d| d.train).collect();
    assert!(!exps.is_empty());
    for e in &exps {
        assert!(trains.contains(&e.train));
        assert_eq!(e.y_target[e.action as usize], -3.0);
    }
    let flagged: std::collections::BTreeSet<TrainId> = exps.iter().map(|e| e.train).collect();
    assert_eq!(flagged, deciding);
}

/// Every branch that never holds when it could go, stepped with detection off.
fn no_branch_completes(sim: SimState<'_>) -> bool {
    let mut sim = sim;
    loop {
        match sim.next_decision().unwrap() {
            Step::Terminal(o) => return o.class != TerminalClass::AllArrived,
            Step::Auto { .. } => {}
            Step::Request { train, mask } => {
                let goes: Vec<u8> = mask.actions().filter(|&a| a != 0).collect();
                let options = if goes.is_empty() { vec![0] } else { goes };
                return options.into_iter().all(|a| {
                    let mut next = sim.clone();
                    next.apply_action(train, a).unwrap();
                    no_branch_completes(next)
                });
            }
        }
    }
}

#[test]
fn never_holding_cannot_avoid_the_head_on_deadlock() {
    let (net, inst) = scenario("head-on");
    let options = SimOptions { detect_deadlocks: false, ..SimOptions::default() };
    assert!(no_branch_completes(SimState::new(&net, &inst, options).unwrap()));
}

#[test]
fn classification_examples() {
    let mut c = raildq::harness::Classifier::new();
    assert_eq!(c.classify_delay(1000.0), (OutcomeClass::Best, true));
    assert_eq!(c.classify_delay(1000.0), (OutcomeClass::Best, false));
    assert_eq!(c.classify_delay(1300.0), (OutcomeClass::Normal, false));
    assert_eq!(c.classify_delay(900.0), (OutcomeClass::Best, true));
    assert_eq!(c.best_delay, Some(900.0));
}

#[test]
fn zero_episodes_leave_the_agent_alone() {
    let (net, inst) = scenario("second-instance");
    let insts = vec![inst];
    let fresh = Trainer::new(config(AgentKind::DecentralizedDeep, 0, 4), &net, &insts).unwrap().agent;
    let mut log = Vec::new();
    let (agent, records) = train(config(AgentKind::DecentralizedDeep, 0, 4), &net, &insts, Some(&mut log)).unwrap();
    assert_eq!(agent, fresh);
    assert!(records.is_empty());
    assert_eq!(String::from_utf8(log).unwrap().trim(), "episode,class,weighted_delay,epsilon,loss,ms");
}

fn run_training(agent: AgentKind, seed: u64) -> (Vec<String>, String) {
    let (net, inst) = scenario("second-instance");
    let insts = vec![inst];
    let mut log = Vec::new();
    let (agent, records) = train(config(agent, 150, seed), &net, &insts, Some(&mut log)).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), records.len() + 1);
    let rows = records.iter().map(|r| r.deterministic_row()).collect();
    (rows, agent.to_model_file().to_text())
}

#[test]
fn training_is_reproducible() {
    for kind in [AgentKind::Linear, AgentKind::DecentralizedDeep, AgentKind::CentralizedDeep] {
        let a = run_training(kind, 11);
        let b = run_training(kind, 11);
        assert_eq!(a, b, "{kind}");
        let c = run_training(kind, 12);
        assert_ne!(a.0, c.0, "{kind}: the seed has no effect");
    }
}

#[test]
fn checkpoints_evaluate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.model");
    let (net, inst) = scenario("second-instance");
    let insts = vec![inst];
    let mut cfg = config(AgentKind::DecentralizedDeep, 60, 2);
    cfg.checkpoint_every = 30;
    let mut trainer = Trainer::new(cfg, &net, &insts).unwrap().with_checkpoint(path.clone());
    trainer.run(None).unwrap();
    let loaded = Agent::from_model_file(ModelFile::load(&path).unwrap()).unwrap();
    assert_eq!(loaded, trainer.agent);
    let tests: Vec<Instance> = ["first-instance", "second-instance", "reduced"].iter().map(|n| scenario(n).1).collect();
    let a = evaluate(&trainer.agent, &net, &tests).unwrap();
    let b = evaluate(&loaded, &net, &tests).unwrap();
    let bits = |e: &raildq::harness::Evaluation| {
        e.runs.iter().map(|r| (r.class, r.weighted_delay.map(f64::to_bits))).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn evaluation_statistics() {
    let (net, inst) = scenario("reduced");
    let lone = only_first_train(&net, &inst);
    let agent = never_hold(&net, &inst);
    let eval = evaluate(&agent, &net, &[lone.clone(), lone]).unwrap();
    assert_eq!(eval.runs.len(), 2);
    assert_eq!(eval.stats.mean, Some(0.0));
    assert_eq!(eval.stats.std, Some(0.0));
    assert_eq!(eval.stats.deadlocks, 0);
    let (hnet, hinst) = scenario("head-on");
    let dead = evaluate(&never_hold(&hnet, &hinst), &hnet, &[hinst]).unwrap();
    assert_eq!(dead.stats.deadlocks, 1);
    assert_eq!(dead.stats.mean, None);
}

#[test]
fn profile_examples() {
    let t = DelayTable::new(
        vec!["a".into(), "b".into()],
        vec!["p".into(), "q".into()],
        vec![vec![Some(10.0), Some(20.0)], vec![Some(20.0), Some(10.0)]],
    );
    for c in performance_profile(&t).unwrap() {
        assert_eq!(c.rho(1.0), 0.5);
        assert_eq!(c.rho(2.0), 1.0);
        assert_eq!(c.rho(0.99), 0.0);
    }
    let zero = DelayTable::new(vec!["a".into(), "b".into()], vec!["p".into()], vec![vec![Some(0.0)], vec![Some(3.0)]]);
    assert_eq!(ratios(&zero), vec![vec![1.0], vec![4.0]]);
}

fn table_strategy() -> impl Strategy<Value = DelayTable> {
    (1usize..5, 1usize..8).prop_flat_map(|(s, p)| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.85, 0.0f64..1e5), p), s).prop_map(
            move |delays| {
                DelayTable::new(
                    (0..s).map(|i| format!("s{i}")).collect(),
                    (0..p).map(|i| format!("p{i}")).collect(),
                    delays,
                )
            },
        )
    })
}

proptest! {
    #[test]
    fn profiles_rise_to_the_solved_share(t in table_strategy(), taus in prop::collection::vec(1.0f64..50.0, 1..20)) {
        let curves = performance_profile(&t).unwrap();
        let ratios = ratios(&t);
        for (s, c) in curves.iter().enumerate() {
            let mut sorted = taus.clone();
            sorted.sort_by(f64::total_cmp);
            for w in sorted.windows(2) {
                prop_assert!(c.rho(w[0]) <= c.rho(w[1]));
            }
            let solved = t.delays[s].iter().filter(|d| d.is_some()).count() as f64 / t.problems.len() as f64;
            prop_assert_eq!(c.rho(f64::MAX), solved);
            // ρ(τ) counts ratios ≤ τ directly.
            for &tau in &taus {
                let direct = ratios[s].iter().filter(|&&r| r <= tau).count() as f64 / t.problems.len() as f64;
                prop_assert_eq!(c.rho(tau), direct);
            }
        }
    }

    #[test]
    fn classification_ignores_the_delay_unit(delays in prop::collection::vec(1.0f64..1e5, 1..30), scale in 0.01f64..100.0) {
        let mut a = raildq::harness::Classifier::new();
        let mut b = raildq::harness::Classifier::new();
        for d in delays {
            let x = a.classify_delay(d);
            let y = b.classify_delay(d * scale);
            prop_assert_eq!(x, y);
        }
    }
}
