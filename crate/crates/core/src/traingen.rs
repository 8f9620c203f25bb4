//! Random instances from the experimental distributions, and named fixtures.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{
    default_occupation, free_running_arrival, Instance, InstanceDoc, RunningTimeDoc, ScheduleDoc, TrainDoc, TrainId,
};
use crate::simcore::{deadlock, Layout};
use crate::topology::{Direction, LinkDoc, Network, NetworkDoc, ResourceDoc, ResourceKind};

pub const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationProfile {
    pub id: String,
    /// (number of trains, probability)
    pub train_count: Vec<(usize, f64)>,
    /// (priority, probability)
    pub priorities: Vec<(u8, f64)>,
    /// Lengths drawn uniformly, in feet.
    pub lengths: Vec<f64>,
}

impl GenerationProfile {
    pub fn exp1() -> Self {
        GenerationProfile {
            id: "exp1".into(),
            train_count: vec![(4, 0.1), (5, 0.2), (6, 0.2), (7, 0.2), (8, 0.15), (9, 0.1), (10, 0.05)],
            priorities: vec![(1, 0.05), (2, 0.15), (3, 0.23), (4, 0.27), (5, 0.3)],
            lengths: (0..6).map(|i| 4_000.0 + 500.0 * i as f64).collect(),
        }
    }

    pub fn exp2() -> Self {
        GenerationProfile {
            id: "exp2".into(),
            train_count: vec![
                (4, 0.05),
                (5, 0.15),
                (6, 0.15),
                (7, 0.15),
                (8, 0.15),
                (9, 0.1),
                (10, 0.1),
                (11, 0.1),
                (12, 0.05),
            ],
            lengths: (0..9).map(|i| 4_000.0 + 500.0 * i as f64).collect(),
            ..Self::exp1()
        }
    }

    /// `exp1`, `exp2`, or a path to a profile JSON document.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "exp1" => Ok(Self::exp1()),
            "exp2" => Ok(Self::exp2()),
            path => {
                let p: GenerationProfile = serde_json::from_str(&std::fs::read_to_string(Path::new(path))?)?;
                p.validate()?;
                Ok(p)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(m));
        for (name, probs) in [
            ("train_count", self.train_count.iter().map(|x| x.1).collect::<Vec<_>>()),
            ("priorities", self.priorities.iter().map(|x| x.1).collect()),
        ] {
            if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return bad(format!("profile `{}`: {name} needs non-negative probabilities", self.id));
            }
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("profile `{}`: {name} probabilities must sum to 1", self.id));
            }
        }
        if self.train_count.iter().any(|x| x.0 == 0) {
            return bad(format!("profile `{}`: train counts must be positive", self.id));
        }
        if self.priorities.iter().any(|x| !(1..=5).contains(&x.0)) {
            return bad(format!("profile `{}`: priorities must lie in 1..=5", self.id));
        }
        if self.lengths.is_empty() || self.lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad(format!("profile `{}`: lengths must be positive", self.id));
        }
        Ok(())
    }

    pub fn max_trains(&self) -> usize {
        self.train_count.iter().map(|x| x.0).max().unwrap_or(0)
    }
}

fn draw<T: Copy, R: Rng>(atoms: &[(T, f64)], rng: &mut R) -> T {
    let dist = WeightedIndex::new(atoms.iter().map(|x| x.1)).expect("validated distribution");
    atoms[dist.sample(rng)].0
}

/// Per-train attributes drawn before placement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainDraw {
    pub priority: u8,
    pub length_ft: f64,
    pub direction: Direction,
}

/// Draws the train count and each train's priority, length and direction.
pub fn draw_trains<R: Rng>(profile: &GenerationProfile, rng: &mut R) -> Vec<TrainDraw> {
    let n = draw(&profile.train_count, rng);
    (0..n)
        .map(|_| TrainDraw {
            priority: draw(&profile.priorities, rng),
            length_ft: profile.lengths[rng.gen_range(0..profile.lengths.len())],
            direction: if rng.gen_bool(0.5) { Direction::LeftToRight } else { Direction::RightToLeft },
        })
        .collect()
}

/// Draws a placement-feasible, not initially deadlocked instance. The trains
/// are drawn once; only their positions are redrawn on a conflict.
pub fn sample_instance<R: Rng>(profile: &GenerationProfile, net: &Network, rng: &mut R) -> Result<Instance> {
    profile.validate()?;
    let draws = draw_trains(profile, rng);
    let candidates: Vec<_> = net.ids().filter(|&r| net.resource(r).kind != ResourceKind::StationRoute).collect();
    for _ in 0..MAX_ATTEMPTS {
        if let Some(inst) = try_place(&draws, net, &candidates, rng)? {
            return Ok(inst);
        }
    }
    Err(Error::PlacementFailed(MAX_ATTEMPTS))
}

fn try_place<R: Rng>(
    draws: &[TrainDraw],
    net: &Network,
    candidates: &[crate::topology::ResourceId],
    rng: &mut R,
) -> Result<Option<Instance>> {
    let mut used = vec![false; net.len()];
    let mut trains = Vec::with_capacity(draws.len());
    for (k, d) in draws.iter().enumerate() {
        let free: Vec<_> = candidates.iter().copied().filter(|r| !used[r.index()]).collect();
        if free.is_empty() {
            return Ok(None);
        }
        let origin = free[rng.gen_range(0..free.len())];
        let terminals = net.terminals(d.direction);
        let Some(&destination) =
            terminals.iter().find(|&&t| net.reaches_group(origin, t, d.direction) && !net.same_group(origin, t))
        else {
            return Ok(None);
        };
        let doc = TrainDoc {
            id: format!("t{}", k + 1),
            priority: d.priority,
            length_ft: d.length_ft,
            direction: d.direction,
            origin: net.name(origin).to_string(),
            destination: net.name(destination).to_string(),
            schedule: vec![ScheduleDoc { resource: net.name(destination).to_string(), time_s: 0.0 }],
            weight: None,
            occupation: None,
            state_value: None,
        };
        // The occupation must not overlap trains already placed.
        let probe = Instance::from_doc(&InstanceDoc { trains: vec![doc.clone()], ..empty_doc() }, net)?;
        let occ = default_occupation(net, &probe.running_times, TrainId(0), &probe.trains[0]);
        if occ.iter().any(|r| used[r.index()]) {
            return Ok(None);
        }
        for r in &occ {
            used[r.index()] = true;
        }
        trains.push(doc);
    }
    let mut inst = Instance::from_doc(&InstanceDoc { trains, ..empty_doc() }, net)?;
    set_free_running_schedule(&mut inst, net);
    let layout = Layout::from_instance(net, &inst);
    if deadlock::detect(net, &inst, &layout, deadlock::DEFAULT_SEARCH_BUDGET).deadlocked {
        return Ok(None);
    }
    Ok(Some(inst))
}

fn empty_doc() -> InstanceDoc {
    InstanceDoc {
        name: String::new(),
        trains: Vec::new(),
        start_time_s: 0.0,
        running_times: Vec::new(),
        failures: Vec::new(),
        blocks: Vec::new(),
    }
}

/// Schedules every train to arrive exactly at its free-running time.
pub fn set_free_running_schedule(inst: &mut Instance, net: &Network) {
    let start = inst.start_time_s;
    for i in 0..inst.trains.len() {
        let arrival = free_running_arrival(net, &inst.running_times, TrainId(i as u16), &inst.trains[i], start);
        let spec = &mut inst.trains[i];
        spec.schedule = vec![(spec.destination, arrival)];
        spec.scheduled_arrival_s = arrival;
    }
}

/// A network together with an instance on it.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: Network,
    pub instance: Instance,
}

pub const FIXTURES: [&str; 6] =
    ["first-instance", "second-instance", "reduced", "overlength", "head-on", "worked-example"];

struct Spec<'a> {
    id: &'a str,
    priority: u8,
    length: f64,
    direction: Direction,
    origin: &'a str,
    destination: &'a str,
    value: Option<f64>,
}

fn train_doc(s: &Spec) -> TrainDoc {
    TrainDoc {
        id: s.id.into(),
        priority: s.priority,
        length_ft: s.length,
        direction: s.direction,
        origin: s.origin.into(),
        destination: s.destination.into(),
        schedule: vec![ScheduleDoc { resource: s.destination.into(), time_s: 0.0 }],
        weight: None,
        occupation: None,
        state_value: s.value,
    }
}

fn scenario(net: Network, name: &str, specs: &[Spec], running_times: Vec<RunningTimeDoc>) -> Result<Scenario> {
    let doc =
        InstanceDoc { name: name.into(), trains: specs.iter().map(train_doc).collect(), running_times, ..empty_doc() };
    let mut inst = Instance::from_doc(&doc, &net)?;
    set_free_running_schedule(&mut inst, &net);
    Ok(Scenario { network: net, instance: inst })
}

/// Five stations, loops at the second and fourth: T0 S0a T1 S1a|S1b T2 S2a T3 S3a|S3b T4.
fn meet_line() -> Network {
    crate::topology::LineLayout::new(4, 2).build()
}

fn line_doc(names: &[&[&str]], track: impl Fn(&str) -> bool) -> NetworkDoc {
    let mut resources = Vec::new();
    let mut adjacency = Vec::new();
    for (i, group) in names.iter().enumerate() {
        for (j, &n) in group.iter().enumerate() {
            let is_track = track(n);
            resources.push(ResourceDoc {
                id: n.into(),
                kind: if is_track { ResourceKind::Track } else { ResourceKind::StoppingPoint },
                length_ft: if is_track { 15_000.0 } else { 8_500.0 + 500.0 * j as f64 },
                parallel_group: (group.len() > 1).then(|| format!("G{i}")),
            });
        }
        if i > 0 {
            for &p in names[i - 1] {
                for &n in group.iter() {
                    adjacency.push(LinkDoc { from: p.into(), to: n.into(), direction: Direction::LeftToRight });
                }
            }
        }
    }
    let control_points = resources.iter().map(|r| r.id.clone()).collect();
    NetworkDoc {
        resources,
        adjacency,
        control_points,
        headway_s: crate::topology::DEFAULT_HEADWAY_S,
        route_exclusion: Default::default(),
    }
}

pub fn fixture(name: &str) -> Result<Scenario> {
    use Direction::{LeftToRight as L, RightToLeft as R};
    let spec = |id, priority, length, direction, origin, destination| Spec {
        id,
        priority,
        length,
        direction,
        origin,
        destination,
        value: None,
    };
    match name {
        // Two same-priority trains eastbound meet one heavier-weighted westbound train.
        "second-instance" | "first-instance" => {
            let p = if name == "second-instance" { [5, 5, 2] } else { [3, 3, 3] };
            scenario(
                meet_line(),
                name,
                &[
                    spec("A", p[0], 4_000.0, L, "S0a", "T4"),
                    spec("B", p[1], 4_000.0, L, "T0", "T4"),
                    spec("C", p[2], 4_000.0, R, "S3a", "T0"),
                ],
                Vec::new(),
            )
        }
        "reduced" => scenario(
            meet_line(),
            name,
            &[spec("A", 5, 4_000.0, L, "S0a", "T4"), spec("C", 2, 4_000.0, R, "S3a", "T0")],
            Vec::new(),
        ),
        "overlength" => scenario(
            crate::topology::LineLayout::new(6, 3).build(),
            name,
            &[
                spec("A", 4, 4_000.0, L, "S0a", "T6"),
                spec("B", 3, 9_000.0, L, "T1", "T6"),
                spec("C", 2, 6_000.0, R, "S5a", "T0"),
            ],
            Vec::new(),
        ),
        // One loop at S1 and the westbound train terminates there; running into
        // the single-track section from both ends locks the line.
        "head-on" => {
            let doc = line_doc(&[&["S0a"], &["T0"], &["S1a", "S1b"], &["T1"], &["S2a"], &["T2"], &["S3a"]], |n| {
                n.starts_with('T')
            });
            scenario(
                Network::from_doc(&doc)?,
                name,
                &[spec("A", 3, 4_000.0, L, "T0", "S3a"), spec("B", 3, 4_000.0, R, "S3a", "S1a")],
                Vec::new(),
            )
        }
        "worked-example" => {
            let doc = figure_doc();
            let net = Network::from_doc(&doc)?;
            let with_value = |id, priority, direction, origin, destination, value| Spec {
                id,
                priority,
                length: 4_000.0,
                direction,
                origin,
                destination,
                value: Some(value),
            };
            scenario(
                net,
                name,
                &[
                    with_value("blue", 3, L, "2", "7a", 3.0),
                    with_value("red", 2, L, "4", "7a", 9.0),
                    with_value("green", 3, R, "5b", "1a", 10.0),
                ],
                Vec::new(),
            )
        }
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

/// 1a|1b – 2 – 3a|3b – 4 – 5a|5b – 6 – 7a|7b, listed tracks first.
fn figure_doc() -> NetworkDoc {
    let stations = ["1", "3", "5", "7"];
    let mut resources: Vec<ResourceDoc> = ["2", "4", "6"]
        .iter()
        .map(|&id| ResourceDoc { id: id.into(), kind: ResourceKind::Track, length_ft: 15_000.0, parallel_group: None })
        .collect();
    for s in stations {
        for (suffix, len) in [("a", 8_500.0), ("b", 9_000.0)] {
            resources.push(ResourceDoc {
                id: format!("{s}{suffix}"),
                kind: ResourceKind::StoppingPoint,
                length_ft: len,
                parallel_group: Some(format!("P{s}")),
            });
        }
    }
    let chain: [&[&str]; 7] = [&["1a", "1b"], &["2"], &["3a", "3b"], &["4"], &["5a", "5b"], &["6"], &["7a", "7b"]];
    let mut adjacency = Vec::new();
    for w in chain.windows(2) {
        for &p in w[0] {
            for &n in w[1] {
                adjacency.push(LinkDoc { from: p.into(), to: n.into(), direction: Direction::LeftToRight });
            }
        }
    }
    let control_points = resources.iter().map(|r| r.id.clone()).collect();
    NetworkDoc {
        resources,
        adjacency,
        control_points,
        headway_s: crate::topology::DEFAULT_HEADWAY_S,
        route_exclusion: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_fixtures_build() {
        for name in FIXTURES {
            let s = fixture(name).unwrap();
            assert!(!s.instance.trains.is_empty(), "{name}");
        }
        assert!(matches!(fixture("nope"), Err(Error::UnknownFixture(_))));
    }

    #[test]
    fn second_instance_shape() {
        let s = fixture("second-instance").unwrap();
        let weights: Vec<f64> = s.instance.trains.iter().map(|t| t.weight).collect();
        assert_eq!(weights, [1.0, 1.0, 10.0]);
        assert!(s.instance.trains.iter().all(|t| t.length_ft == 4_000.0));
    }

    #[test]
    fn overlength_uses_long_horizon() {
        let s = fixture("overlength").unwrap();
        assert_eq!(s.instance.time_horizon_s(), crate::instance::LONG_HORIZON_S);
    }

    #[test]
    fn profiles_are_valid() {
        GenerationProfile::exp1().validate().unwrap();
        GenerationProfile::exp2().validate().unwrap();
        assert_eq!(GenerationProfile::exp2().max_trains(), 12);
    }

    #[test]
    fn sampling_is_seeded() {
        let net = crate::topology::LineLayout::new(15, 10).build();
        let p = GenerationProfile::exp1();
        let a = sample_instance(&p, &net, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_instance(&p, &net, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.to_json_string(&net), b.to_json_string(&net));
    }
}
