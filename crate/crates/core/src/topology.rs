//! Static railway model: resources, directional adjacency, parallel groups
//! and control points.
//!
//! Resources are addressed internally by [`ResourceId`], their position in the
//! network document. "Lowest resource id" tie-breaks therefore follow file
//! order. A [`Network`] is immutable after loading and can be shared freely.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HEADWAY_S: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceId(pub u16);

impl ResourceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    StoppingPoint,
    Track,
    StationRoute,
}

impl ResourceKind {
    /// Stopping points and station routes host a single train.
    pub fn single_occupancy(self) -> bool {
        !matches!(self, ResourceKind::Track)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::LeftToRight => 0,
            Direction::RightToLeft => 1,
        }
    }

    pub const ALL: [Direction; 2] = [Direction::LeftToRight, Direction::RightToLeft];
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::LeftToRight => f.write_str("left_to_right"),
            Direction::RightToLeft => f.write_str("right_to_left"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resource {
    pub name: String,
    pub kind: ResourceKind,
    pub length_ft: f64,
    pub group: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelGroup {
    pub name: String,
    pub members: Vec<ResourceId>,
    /// Occupying one member disables entry into the others.
    pub route_exclusion: bool,
}

#[derive(Clone, Debug)]
pub struct Network {
    resources: Vec<Resource>,
    by_name: HashMap<String, ResourceId>,
    /// `successors[dir][r]`, ascending by id.
    successors: [Vec<Vec<ResourceId>>; 2],
    groups: Vec<ParallelGroup>,
    /// Each resource's group members including itself (a singleton when ungrouped).
    siblings: Vec<Vec<ResourceId>>,
    control_points: Vec<bool>,
    headway_s: f64,
    /// `reach[dir][r]` is a bitset of resources reachable from `r` in `dir`, `r` included.
    reach: [Vec<Vec<u64>>; 2],
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub resources: Vec<ResourceDoc>,
    pub adjacency: Vec<LinkDoc>,
    #[serde(default)]
    pub control_points: Vec<String>,
    #[serde(default = "default_headway")]
    pub headway_s: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub route_exclusion: BTreeMap<String, bool>,
}

fn default_headway() -> f64 {
    DEFAULT_HEADWAY_S
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ResourceDoc {
    pub id: String,
    pub kind: ResourceKind,
    pub length_ft: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel_group: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub from: String,
    pub to: String,
    pub direction: Direction,
}

impl Network {
    pub fn from_json_str(text: &str) -> Result<Network> {
        let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Network::from_doc(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        Network::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_doc(doc: &NetworkDoc) -> Result<Network> {
        let mut by_name = HashMap::new();
        let mut resources = Vec::with_capacity(doc.resources.len());
        let mut group_index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut groups: Vec<ParallelGroup> = Vec::new();
        if doc.resources.len() > u16::MAX as usize {
            return Err(Error::Schema("too many resources".into()));
        }
        if !(doc.headway_s.is_finite() && doc.headway_s >= 0.0) {
            return Err(Error::Schema(format!("headway_s must be finite and non-negative, got {}", doc.headway_s)));
        }
        for (i, r) in doc.resources.iter().enumerate() {
            let id = ResourceId(i as u16);
            if by_name.insert(r.id.clone(), id).is_some() {
                return Err(Error::DuplicateResource(r.id.clone()));
            }
            if !(r.length_ft.is_finite() && r.length_ft > 0.0) {
                return Err(Error::InvalidResource { resource: r.id.clone(), field: "length_ft" });
            }
            let group = match &r.parallel_group {
                None => None,
                Some(g) if g.is_empty() => {
                    return Err(Error::InvalidResource { resource: r.id.clone(), field: "parallel_group" })
                }
                Some(g) => {
                    let idx = *group_index.entry(g.as_str()).or_insert_with(|| {
                        groups.push(ParallelGroup { name: g.clone(), members: Vec::new(), route_exclusion: false });
                        groups.len() - 1
                    });
                    groups[idx].members.push(id);
                    Some(idx)
                }
            };
            resources.push(Resource { name: r.id.clone(), kind: r.kind, length_ft: r.length_ft, group });
        }
        for (g, flag) in &doc.route_exclusion {
            match group_index.get(g.as_str()) {
                Some(&idx) => groups[idx].route_exclusion = *flag,
                None => return Err(Error::DanglingAdjacency { resource: g.clone(), field: "route_exclusion" }),
            }
        }

        let n = resources.len();
        let mut successors = [vec![Vec::new(); n], vec![Vec::new(); n]];
        for link in &doc.adjacency {
            let from = *by_name
                .get(&link.from)
                .ok_or_else(|| Error::DanglingAdjacency { resource: link.from.clone(), field: "adjacency.from" })?;
            let to = *by_name
                .get(&link.to)
                .ok_or_else(|| Error::DanglingAdjacency { resource: link.to.clone(), field: "adjacency.to" })?;
            if from == to {
                return Err(Error::InvalidResource { resource: link.from.clone(), field: "adjacency" });
            }
            // A link in one direction implies the mirrored link in the other.
            let d = link.direction.index();
            let back = link.direction.reversed().index();
            if successors[back][from.index()].contains(&to) {
                return Err(Error::InvalidResource { resource: link.from.clone(), field: "adjacency.direction" });
            }
            if !successors[d][from.index()].contains(&to) {
                successors[d][from.index()].push(to);
                successors[back][to.index()].push(from);
            }
        }
        for dir in successors.iter_mut() {
            for list in dir.iter_mut() {
                list.sort();
            }
        }

        let mut control_points = vec![false; n];
        for cp in &doc.control_points {
            let id = by_name
                .get(cp)
                .ok_or_else(|| Error::DanglingAdjacency { resource: cp.clone(), field: "control_points" })?;
            control_points[id.index()] = true;
        }

        let siblings = resources
            .iter()
            .enumerate()
            .map(|(i, r)| match r.group {
                Some(g) => groups[g].members.clone(),
                None => vec![ResourceId(i as u16)],
            })
            .collect();

        let reach = [reachability(&successors[0]), reachability(&successors[1])];
        Ok(Network {
            resources,
            by_name,
            successors,
            groups,
            siblings,
            control_points,
            headway_s: doc.headway_s,
            reach,
        })
    }

    /// Canonical document: every link is emitted once, in the left-to-right direction.
    pub fn to_doc(&self) -> NetworkDoc {
        let resources = self
            .resources
            .iter()
            .map(|r| ResourceDoc {
                id: r.name.clone(),
                kind: r.kind,
                length_ft: r.length_ft,
                parallel_group: r.group.map(|g| self.groups[g].name.clone()),
            })
            .collect();
        let mut adjacency = Vec::new();
        for (from, succ) in self.successors[0].iter().enumerate() {
            for to in succ {
                adjacency.push(LinkDoc {
                    from: self.resources[from].name.clone(),
                    to: self.name(*to).to_string(),
                    direction: Direction::LeftToRight,
                });
            }
        }
        let control_points = self
            .control_points
            .iter()
            .enumerate()
            .filter(|(_, cp)| **cp)
            .map(|(i, _)| self.resources[i].name.clone())
            .collect();
        let route_exclusion =
            self.groups.iter().filter(|g| g.route_exclusion).map(|g| (g.name.clone(), true)).collect();
        NetworkDoc { resources, adjacency, control_points, headway_s: self.headway_s, route_exclusion }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("network document serializes")
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ResourceId> + '_ {
        (0..self.resources.len()).map(|i| ResourceId(i as u16))
    }

    pub fn resource(&self, id: ResourceId) -> &Resource {
        &self.resources[id.index()]
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn name(&self, id: ResourceId) -> &str {
        &self.resources[id.index()].name
    }

    pub fn lookup(&self, name: &str) -> Result<ResourceId> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownResource(name.to_string()))
    }

    pub fn successors(&self, id: ResourceId, dir: Direction) -> &[ResourceId] {
        &self.successors[dir.index()][id.index()]
    }

    pub fn predecessors(&self, id: ResourceId, dir: Direction) -> &[ResourceId] {
        self.successors(id, dir.reversed())
    }

    pub fn groups(&self) -> &[ParallelGroup] {
        &self.groups
    }

    /// Members of `id`'s parallel group, `id` included.
    pub fn siblings(&self, id: ResourceId) -> &[ResourceId] {
        &self.siblings[id.index()]
    }

    pub fn same_group(&self, a: ResourceId, b: ResourceId) -> bool {
        a == b || self.siblings(a).contains(&b)
    }

    pub fn route_exclusion(&self, id: ResourceId) -> bool {
        self.resources[id.index()].group.is_some_and(|g| self.groups[g].route_exclusion)
    }

    pub fn is_control_point(&self, id: ResourceId) -> bool {
        self.control_points[id.index()]
    }

    pub fn headway_s(&self) -> f64 {
        self.headway_s
    }

    /// Number of resources parallel to `id`.
    pub fn parallel_count(&self, id: ResourceId) -> usize {
        self.siblings(id).len() - 1
    }

    pub fn parallel_count_by_name(&self, name: &str) -> Result<usize> {
        Ok(self.parallel_count(self.lookup(name)?))
    }

    /// Whether `to` is reachable from `from` moving in `dir` (`from == to` counts).
    pub fn reaches(&self, from: ResourceId, to: ResourceId, dir: Direction) -> bool {
        let bits = &self.reach[dir.index()][from.index()];
        bits[to.index() / 64] >> (to.index() % 64) & 1 == 1
    }

    /// Whether any member of `dest`'s group is reachable from `from`.
    pub fn reaches_group(&self, from: ResourceId, dest: ResourceId, dir: Direction) -> bool {
        self.siblings(dest).iter().any(|&m| self.reaches(from, m, dir))
    }

    /// Resources with no successor in `dir`.
    pub fn terminals(&self, dir: Direction) -> Vec<ResourceId> {
        self.ids().filter(|&r| self.successors(r, dir).is_empty()).collect()
    }
}

fn reachability(successors: &[Vec<ResourceId>]) -> Vec<Vec<u64>> {
    let n = successors.len();
    let words = n.div_ceil(64).max(1);
    let mut out = vec![vec![0u64; words]; n];
    for start in 0..n {
        let bits = &mut out[start];
        let mut stack = vec![start];
        bits[start / 64] |= 1 << (start % 64);
        while let Some(r) = stack.pop() {
            for s in &successors[r] {
                let s = s.index();
                if bits[s / 64] >> (s % 64) & 1 == 0 {
                    bits[s / 64] |= 1 << (s % 64);
                    stack.push(s);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic single-track lines

/// Parameters of a generated single-track line: tracks alternate with
/// stations, the line starts and ends on a track, and `sidings` of the
/// stations have two parallel stopping points.
#[derive(Clone, Debug)]
pub struct LineLayout {
    pub stations: usize,
    pub sidings: usize,
    pub track_length_ft: f64,
    pub main_length_ft: f64,
    pub siding_length_ft: f64,
    pub headway_s: f64,
}

impl LineLayout {
    pub fn new(stations: usize, sidings: usize) -> Self {
        LineLayout {
            stations,
            sidings: sidings.min(stations),
            track_length_ft: 15_000.0,
            main_length_ft: 8_500.0,
            siding_length_ft: 9_000.0,
            headway_s: DEFAULT_HEADWAY_S,
        }
    }

    /// 140 blocks, 42 of them in parallel pairs.
    pub fn reference() -> Self {
        LineLayout::new(59, 21)
    }

    pub fn resource_count(&self) -> usize {
        2 * self.stations + 1 + self.sidings
    }

    pub fn build(&self) -> Network {
        Network::from_doc(&self.doc()).expect("synthetic line is valid")
    }

    pub fn doc(&self) -> NetworkDoc {
        let mut resources = Vec::new();
        let mut adjacency = Vec::new();
        let mut control_points = Vec::new();
        let mut previous: Vec<String> = Vec::new();
        let link = |adjacency: &mut Vec<LinkDoc>, prev: &[String], next: &[String]| {
            for p in prev {
                for n in next {
                    adjacency.push(LinkDoc { from: p.clone(), to: n.clone(), direction: Direction::LeftToRight });
                }
            }
        };
        // Sidings are spread evenly: station s has one iff floor((s+1)·k/n) > floor(s·k/n).
        let has_siding = |s: usize| {
            let k = self.sidings;
            let n = self.stations.max(1);
            (s + 1) * k / n > s * k / n
        };
        for pos in 0..(2 * self.stations + 1) {
            let current: Vec<String> = if pos % 2 == 0 {
                let id = format!("T{}", pos / 2);
                // Mild length variation keeps running times distinct along the line.
                let length = self.track_length_ft + 1_000.0 * ((pos / 2) % 4) as f64;
                resources.push(ResourceDoc {
                    id: id.clone(),
                    kind: ResourceKind::Track,
                    length_ft: length,
                    parallel_group: None,
                });
                vec![id]
            } else {
                let s = pos / 2;
                let group = format!("S{s}");
                if has_siding(s) {
                    let a = format!("S{s}a");
                    let b = format!("S{s}b");
                    resources.push(ResourceDoc {
                        id: a.clone(),
                        kind: ResourceKind::StoppingPoint,
                        length_ft: self.main_length_ft,
                        parallel_group: Some(group.clone()),
                    });
                    resources.push(ResourceDoc {
                        id: b.clone(),
                        kind: ResourceKind::StoppingPoint,
                        length_ft: self.siding_length_ft,
                        parallel_group: Some(group),
                    });
                    vec![a, b]
                } else {
                    let a = format!("S{s}a");
                    resources.push(ResourceDoc {
                        id: a.clone(),
                        kind: ResourceKind::StoppingPoint,
                        length_ft: self.main_length_ft,
                        parallel_group: None,
                    });
                    vec![a]
                }
            };
            link(&mut adjacency, &previous, &current);
            control_points.extend(current.iter().cloned());
            previous = current;
        }
        NetworkDoc { resources, adjacency, control_points, headway_s: self.headway_s, route_exclusion: BTreeMap::new() }
    }
}
