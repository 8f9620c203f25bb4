//! Dispatching instances: the trains of one snapshot, their routes, schedules
//! and per-resource running times, plus optional resource failures and blocks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Direction, Network, ResourceId};

/// Penalty weight per priority class 1..=5.
pub const PRIORITY_WEIGHTS: [f64; 5] = [20.0, 10.0, 5.0, 2.0, 1.0];

/// Default speed per priority class, feet per second, used when a running
/// time is not given explicitly.
pub const CLASS_SPEED_FT_S: [f64; 5] = [88.0, 80.0, 73.0, 66.0, 59.0];

pub const SHORT_HORIZON_S: f64 = 7_200.0;
pub const LONG_HORIZON_S: f64 = 14_400.0;
pub const OVERLENGTH_FT: f64 = 8_000.0;

pub fn priority_weight(priority: u8) -> f64 {
    PRIORITY_WEIGHTS[(priority.clamp(1, 5) - 1) as usize]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainId(pub u16);

impl TrainId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub name: String,
    pub priority: u8,
    pub weight: f64,
    pub length_ft: f64,
    pub direction: Direction,
    pub origin: ResourceId,
    pub destination: ResourceId,
    /// Initial occupation, head first.
    pub occupation: Vec<ResourceId>,
    pub schedule: Vec<(ResourceId, f64)>,
    /// Scheduled exit time at the destination.
    pub scheduled_arrival_s: f64,
    /// Optional value used by whole-line encoders in place of the default.
    pub state_value: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Failure {
    pub resource: ResourceId,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub resource: ResourceId,
    pub until_train: TrainId,
}

/// Free running time per (train, resource), seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningTimeTable {
    resources: usize,
    seconds: Vec<f64>,
    explicit: BTreeMap<(u16, u16), f64>,
}

impl RunningTimeTable {
    pub fn get(&self, train: TrainId, resource: ResourceId) -> f64 {
        self.seconds[train.index() * self.resources + resource.index()]
    }

    fn build(net: &Network, trains: &[TrainSpec], explicit: BTreeMap<(u16, u16), f64>) -> Self {
        let resources = net.len();
        let mut seconds = Vec::with_capacity(trains.len() * resources);
        for (t, spec) in trains.iter().enumerate() {
            let speed = CLASS_SPEED_FT_S[(spec.priority - 1) as usize];
            for r in net.ids() {
                let s = explicit.get(&(t as u16, r.0)).copied().unwrap_or_else(|| net.resource(r).length_ft / speed);
                seconds.push(s);
            }
        }
        RunningTimeTable { resources, seconds, explicit }
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub trains: Vec<TrainSpec>,
    pub start_time_s: f64,
    pub running_times: RunningTimeTable,
    pub failures: Vec<Failure>,
    pub blocks: Vec<Block>,
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub trains: Vec<TrainDoc>,
    pub start_time_s: f64,
    #[serde(default)]
    pub running_times: Vec<RunningTimeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainDoc {
    pub id: String,
    pub priority: u8,
    pub length_ft: f64,
    pub direction: Direction,
    pub origin: String,
    pub destination: String,
    pub schedule: Vec<ScheduleDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_value: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub resource: String,
    pub time_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunningTimeDoc {
    pub train: String,
    pub resource: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FailureDoc {
    pub resource: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub resource: String,
    pub until_train: String,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInstance(msg.into())
}

impl Instance {
    pub fn from_json_str(text: &str, net: &Network) -> Result<Instance> {
        let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Instance::from_doc(&doc, net)
    }

    pub fn load(path: impl AsRef<Path>, net: &Network) -> Result<Instance> {
        let path = path.as_ref();
        let mut inst = Instance::from_json_str(&std::fs::read_to_string(path)?, net)?;
        if inst.name.is_empty() {
            inst.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(inst)
    }

    pub fn from_doc(doc: &InstanceDoc, net: &Network) -> Result<Instance> {
        if !doc.start_time_s.is_finite() {
            return Err(invalid("start_time_s must be finite"));
        }
        if doc.trains.is_empty() {
            return Err(invalid("instance has no trains"));
        }
        let mut names: BTreeMap<&str, u16> = BTreeMap::new();
        for (i, t) in doc.trains.iter().enumerate() {
            if names.insert(t.id.as_str(), i as u16).is_some() {
                return Err(invalid(format!("duplicate train id `{}`", t.id)));
            }
        }
        let mut explicit = BTreeMap::new();
        for rt in &doc.running_times {
            let t = *names
                .get(rt.train.as_str())
                .ok_or_else(|| invalid(format!("running time for unknown train `{}`", rt.train)))?;
            let r = net.lookup(&rt.resource)?;
            if !(rt.seconds.is_finite() && rt.seconds > 0.0) {
                return Err(invalid(format!("running time of `{}` on `{}` must be positive", rt.train, rt.resource)));
            }
            explicit.insert((t, r.0), rt.seconds);
        }

        // First pass without occupation/schedule so running times can resolve.
        let mut trains = Vec::with_capacity(doc.trains.len());
        for t in &doc.trains {
            if !(1..=5).contains(&t.priority) {
                return Err(invalid(format!("train `{}` priority {} outside 1..=5", t.id, t.priority)));
            }
            if !(t.length_ft.is_finite() && t.length_ft > 0.0) {
                return Err(invalid(format!("train `{}` length must be positive", t.id)));
            }
            let origin = net.lookup(&t.origin)?;
            let destination = net.lookup(&t.destination)?;
            if net.same_group(origin, destination) {
                return Err(invalid(format!("train `{}` starts at its destination", t.id)));
            }
            if !net.reaches_group(origin, destination, t.direction) {
                return Err(invalid(format!(
                    "train `{}` cannot reach `{}` moving {}",
                    t.id, t.destination, t.direction
                )));
            }
            let weight = t.weight.unwrap_or_else(|| priority_weight(t.priority));
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(invalid(format!("train `{}` weight must be non-negative", t.id)));
            }
            trains.push(TrainSpec {
                name: t.id.clone(),
                priority: t.priority,
                weight,
                length_ft: t.length_ft,
                direction: t.direction,
                origin,
                destination,
                occupation: Vec::new(),
                schedule: Vec::new(),
                scheduled_arrival_s: 0.0,
                state_value: t.state_value,
            });
        }
        let running_times = RunningTimeTable::build(net, &trains, explicit);

        for (i, (spec, t)) in trains.iter_mut().zip(&doc.trains).enumerate() {
            let id = TrainId(i as u16);
            spec.occupation = match &t.occupation {
                Some(list) => {
                    let occ = list.iter().map(|n| net.lookup(n)).collect::<Result<Vec<_>>>()?;
                    if occ.first() != Some(&spec.origin) {
                        return Err(invalid(format!("train `{}` occupation must start at its origin", t.id)));
                    }
                    for w in occ.windows(2) {
                        if !net.predecessors(w[0], spec.direction).contains(&w[1]) {
                            return Err(invalid(format!("train `{}` occupation is not contiguous", t.id)));
                        }
                    }
                    occ
                }
                None => default_occupation(net, &running_times, id, spec),
            };
            let mut schedule = Vec::with_capacity(t.schedule.len());
            for s in &t.schedule {
                if !s.time_s.is_finite() {
                    return Err(invalid(format!("train `{}` schedule time must be finite", t.id)));
                }
                schedule.push((net.lookup(&s.resource)?, s.time_s));
            }
            spec.scheduled_arrival_s = schedule
                .iter()
                .rev()
                .find(|(r, _)| net.same_group(*r, spec.destination))
                .map(|(_, time)| *time)
                .ok_or_else(|| invalid(format!("train `{}` has no scheduled time at its destination", t.id)))?;
            spec.schedule = schedule;
        }

        let failures = doc
            .failures
            .iter()
            .map(|f| {
                if !(f.start_s.is_finite() && f.end_s.is_finite() && f.end_s > f.start_s) {
                    return Err(invalid(format!("failure on `{}` has an empty window", f.resource)));
                }
                Ok(Failure { resource: net.lookup(&f.resource)?, start_s: f.start_s, end_s: f.end_s })
            })
            .collect::<Result<Vec<_>>>()?;
        let blocks = doc
            .blocks
            .iter()
            .map(|b| {
                let t = names
                    .get(b.until_train.as_str())
                    .ok_or_else(|| invalid(format!("block waits for unknown train `{}`", b.until_train)))?;
                Ok(Block { resource: net.lookup(&b.resource)?, until_train: TrainId(*t) })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Instance { name: doc.name.clone(), trains, start_time_s: doc.start_time_s, running_times, failures, blocks })
    }

    pub fn to_doc(&self, net: &Network) -> InstanceDoc {
        let trains = self
            .trains
            .iter()
            .map(|t| TrainDoc {
                id: t.name.clone(),
                priority: t.priority,
                length_ft: t.length_ft,
                direction: t.direction,
                origin: net.name(t.origin).to_string(),
                destination: net.name(t.destination).to_string(),
                schedule: t
                    .schedule
                    .iter()
                    .map(|(r, time)| ScheduleDoc { resource: net.name(*r).to_string(), time_s: *time })
                    .collect(),
                weight: (t.weight != priority_weight(t.priority)).then_some(t.weight),
                occupation: Some(t.occupation.iter().map(|r| net.name(*r).to_string()).collect()),
                state_value: t.state_value,
            })
            .collect();
        let running_times = self
            .running_times
            .explicit
            .iter()
            .map(|(&(t, r), &s)| RunningTimeDoc {
                train: self.trains[t as usize].name.clone(),
                resource: net.name(ResourceId(r)).to_string(),
                seconds: s,
            })
            .collect();
        InstanceDoc {
            name: self.name.clone(),
            trains,
            start_time_s: self.start_time_s,
            running_times,
            failures: self
                .failures
                .iter()
                .map(|f| FailureDoc { resource: net.name(f.resource).to_string(), start_s: f.start_s, end_s: f.end_s })
                .collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    resource: net.name(b.resource).to_string(),
                    until_train: self.trains[b.until_train.index()].name.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json_string(&self, net: &Network) -> String {
        serde_json::to_string_pretty(&self.to_doc(net)).expect("instance document serializes")
    }

    pub fn train(&self, id: TrainId) -> &TrainSpec {
        &self.trains[id.index()]
    }

    pub fn len(&self) -> usize {
        self.trains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }

    pub fn train_ids(&self) -> impl Iterator<Item = TrainId> {
        (0..self.trains.len()).map(|i| TrainId(i as u16))
    }

    /// 7200 s when every train is at most 8000 ft long, 14400 s otherwise.
    pub fn time_horizon_s(&self) -> f64 {
        if self.trains.iter().all(|t| t.length_ft <= OVERLENGTH_FT) {
            SHORT_HORIZON_S
        } else {
            LONG_HORIZON_S
        }
    }
}

/// Origin plus the cheapest chain of predecessors until the train's length is covered.
pub fn default_occupation(net: &Network, rt: &RunningTimeTable, id: TrainId, spec: &TrainSpec) -> Vec<ResourceId> {
    let mut occ = vec![spec.origin];
    let mut covered = net.resource(spec.origin).length_ft;
    while covered < spec.length_ft {
        let last = *occ.last().unwrap();
        let Some(prev) = cheapest(net.predecessors(last, spec.direction), |r| rt.get(id, r)) else {
            break;
        };
        covered += net.resource(prev).length_ft;
        occ.push(prev);
    }
    occ
}

/// Minimum by cost, ties to the lowest resource id.
pub fn cheapest(candidates: &[ResourceId], cost: impl Fn(ResourceId) -> f64) -> Option<ResourceId> {
    candidates.iter().copied().min_by(|a, b| cost(*a).total_cmp(&cost(*b)).then(a.cmp(b)))
}

/// Scheduled arrival assuming free running along the cheapest successors.
pub fn free_running_arrival(net: &Network, rt: &RunningTimeTable, id: TrainId, spec: &TrainSpec, start_s: f64) -> f64 {
    let mut time = start_s;
    let mut at = spec.origin;
    while !net.same_group(at, spec.destination) {
        let options: Vec<ResourceId> = net
            .successors(at, spec.direction)
            .iter()
            .copied()
            .filter(|&s| net.reaches_group(s, spec.destination, spec.direction))
            .collect();
        let Some(next) = cheapest(&options, |r| rt.get(id, r)) else { break };
        time += rt.get(id, next);
        at = next;
    }
    time
}
