#![allow(dead_code)]

pub mod nets;

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use raildq::instance::{BlockDoc, Instance, InstanceDoc, RunningTimeDoc, ScheduleDoc, TrainDoc, TrainId};
use raildq::simcore::occupancy::Layout;
use raildq::simcore::{SimOptions, SimState, Step, TerminalClass};
use raildq::topology::{Direction, LinkDoc, Network, NetworkDoc, ResourceDoc, ResourceKind};

pub fn link(from: &str, to: &str) -> LinkDoc {
    LinkDoc { from: from.into(), to: to.into(), direction: Direction::LeftToRight }
}

pub fn resource(id: &str, kind: ResourceKind, length_ft: f64, group: Option<&str>) -> ResourceDoc {
    ResourceDoc { id: id.into(), kind, length_ft, parallel_group: group.map(str::to_string) }
}

pub fn train(
    id: &str,
    priority: u8,
    length_ft: f64,
    direction: Direction,
    origin: &str,
    destination: &str,
) -> TrainDoc {
    TrainDoc {
        id: id.into(),
        priority,
        length_ft,
        direction,
        origin: origin.into(),
        destination: destination.into(),
        schedule: vec![ScheduleDoc { resource: destination.into(), time_s: 0.0 }],
        weight: None,
        occupation: None,
        state_value: None,
    }
}

pub fn running(train: &str, resource: &str, seconds: f64) -> RunningTimeDoc {
    RunningTimeDoc { train: train.into(), resource: resource.into(), seconds }
}

/// A network where every resource is a control point.
pub fn network(resources: Vec<ResourceDoc>, adjacency: Vec<LinkDoc>, headway_s: f64) -> Network {
    let control_points = resources.iter().map(|r| r.id.clone()).collect();
    Network::from_doc(&NetworkDoc { resources, adjacency, control_points, headway_s, route_exclusion: BTreeMap::new() })
        .unwrap()
}

pub fn instance(
    net: &Network,
    trains: Vec<TrainDoc>,
    running_times: Vec<RunningTimeDoc>,
    start_time_s: f64,
) -> Instance {
    let doc = InstanceDoc {
        name: String::new(),
        trains,
        start_time_s,
        running_times,
        failures: Vec::new(),
        blocks: Vec::new(),
    };
    Instance::from_doc(&doc, net).unwrap()
}

/// A random small line: 2 to 5 positions, each a single resource or a pair
/// of parallel stopping points, at most six resources in total.
pub fn random_line<R: Rng>(rng: &mut R) -> (NetworkDoc, Vec<Vec<String>>) {
    let mut resources = Vec::new();
    let mut positions: Vec<Vec<String>> = Vec::new();
    let mut route_exclusion = BTreeMap::new();
    let n_pos = rng.gen_range(2..=5);
    for p in 0..n_pos {
        let left = 6 - resources.len() - (n_pos - p - 1);
        let pair = left >= 2 && rng.gen_bool(0.45);
        if pair {
            let g = format!("g{p}");
            let mut names = Vec::new();
            for s in ["a", "b"] {
                let name = format!("P{p}{s}");
                resources.push(resource(
                    &name,
                    ResourceKind::StoppingPoint,
                    rng.gen_range(2..=5) as f64 * 1000.0,
                    Some(&g),
                ));
                names.push(name);
            }
            if rng.gen_bool(0.25) {
                route_exclusion.insert(g, true);
            }
            positions.push(names);
        } else {
            let kind = if rng.gen_bool(0.5) { ResourceKind::Track } else { ResourceKind::StoppingPoint };
            let name = format!("P{p}");
            resources.push(resource(&name, kind, rng.gen_range(2..=5) as f64 * 1000.0, None));
            positions.push(vec![name]);
        }
    }
    let mut adjacency = Vec::new();
    for w in positions.windows(2) {
        for a in &w[0] {
            for b in &w[1] {
                adjacency.push(link(a, b));
            }
        }
    }
    let control_points = resources.iter().map(|r| r.id.clone()).collect();
    let doc = NetworkDoc { resources, adjacency, control_points, headway_s: 0.0, route_exclusion };
    (doc, positions)
}

/// A random configuration of up to three trains on a random small line whose
/// initial occupations are legal. Returns `None` when the draw is invalid.
pub fn random_configuration<R: Rng>(rng: &mut R) -> Option<(Network, Instance)> {
    let (doc, positions) = random_line(rng);
    let net = Network::from_doc(&doc).ok()?;
    let n_trains = rng.gen_range(1..=3);
    let mut trains = Vec::new();
    for i in 0..n_trains {
        let dir = if rng.gen_bool(0.5) { Direction::LeftToRight } else { Direction::RightToLeft };
        let n = positions.len();
        let (from, to) = {
            let a = rng.gen_range(0..n - 1);
            let b = rng.gen_range(a + 1..n);
            match dir {
                Direction::LeftToRight => (a, b),
                Direction::RightToLeft => (b, a),
            }
        };
        let origin = &positions[from][rng.gen_range(0..positions[from].len())];
        let dest = &positions[to][rng.gen_range(0..positions[to].len())];
        let length = rng.gen_range(1..=6) as f64 * 1000.0;
        trains.push(train(&format!("t{i}"), rng.gen_range(1..=5), length, dir, origin, dest));
    }
    let mut blocks = Vec::new();
    if rng.gen_bool(0.15) {
        let r = &doc.resources[rng.gen_range(0..doc.resources.len())].id;
        blocks.push(BlockDoc { resource: r.clone(), until_train: format!("t{}", rng.gen_range(0..n_trains)) });
    }
    let idoc = InstanceDoc {
        name: String::new(),
        trains,
        start_time_s: 0.0,
        running_times: Vec::new(),
        failures: Vec::new(),
        blocks,
    };
    let inst = Instance::from_doc(&idoc, &net).ok()?;
    let probe = oracle_options();
    SimState::new(&net, &inst, probe).ok()?;
    Some((net, inst))
}

pub fn oracle_options() -> SimOptions {
    SimOptions { auto_moves: false, detect_deadlocks: false, horizon_s: Some(1e12), ..SimOptions::default() }
}

/// Exhaustive search over every legal action sequence of the simulator.
/// True when some sequence brings every train to its destination.
pub fn completable(net: &Network, inst: &Instance) -> bool {
    let sim = SimState::new(net, inst, oracle_options()).expect("valid configuration");
    let mut seen: HashSet<StateKey> = HashSet::new();
    search(sim, &mut seen)
}

/// Occupancy, the deciding train and every active train's time to its next event.
type StateKey = (Layout, TrainId, Vec<i64>);

fn key(sim: &SimState<'_>, train: TrainId) -> StateKey {
    let timing =
        sim.active_trains().map(|t| ((sim.train_state(t).next_event_s - sim.clock()) * 1e6).round() as i64).collect();
    (sim.layout().clone(), train, timing)
}

fn search(mut sim: SimState<'_>, seen: &mut HashSet<StateKey>) -> bool {
    let inst = sim.instance();
    let longest = inst
        .train_ids()
        .flat_map(|t| sim.network().ids().map(move |r| inst.running_times.get(t, r)))
        .fold(0.0, f64::max);
    let mut changed_at = sim.clock();
    loop {
        let before = sim.layout().clone();
        match sim.next_decision().expect("stepping never fails") {
            Step::Terminal(o) => return o.class == TerminalClass::AllArrived,
            Step::Auto { .. } => {
                if *sim.layout() != before {
                    changed_at = sim.clock();
                } else if sim.clock() - changed_at > longest + 10.0 {
                    // Every running train has finished its move and nothing changed.
                    return false;
                }
            }
            Step::Request { train, mask } => {
                if !seen.insert(key(&sim, train)) {
                    return false;
                }
                return mask.actions().any(|a| {
                    let mut next = sim.clone();
                    next.apply_action(train, a).expect("allowed action");
                    search(next, seen)
                });
            }
        }
    }
}
