//! Untimed occupancy rules shared by the simulator and the deadlock search.

use crate::instance::{Instance, TrainId};
use crate::topology::{Network, ResourceId, ResourceKind};

/// Per-train occupation, head first. An arrived train has an empty list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    pub occupations: Vec<Vec<ResourceId>>,
    /// Per resource: the train it is reserved for, if any.
    pub blocks: Vec<Option<TrainId>>,
}

impl Layout {
    pub fn from_instance(net: &Network, inst: &Instance) -> Layout {
        let mut blocks = vec![None; net.len()];
        for b in &inst.blocks {
            blocks[b.resource.index()] = Some(b.until_train);
        }
        Layout { occupations: inst.trains.iter().map(|t| t.occupation.clone()).collect(), blocks }
    }

    pub fn is_active(&self, t: TrainId) -> bool {
        !self.occupations[t.index()].is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = TrainId> + '_ {
        self.occupations.iter().enumerate().filter(|(_, o)| !o.is_empty()).map(|(i, _)| TrainId(i as u16))
    }

    pub fn head(&self, t: TrainId) -> Option<ResourceId> {
        self.occupations[t.index()].first().copied()
    }

    pub fn occupants(&self, r: ResourceId) -> impl Iterator<Item = TrainId> + '_ {
        self.occupations.iter().enumerate().filter(move |(_, o)| o.contains(&r)).map(|(i, _)| TrainId(i as u16))
    }

    pub fn is_free_of_others(&self, r: ResourceId, t: TrainId) -> bool {
        self.occupants(r).all(|o| o == t)
    }

    pub fn any_block_active(&self) -> bool {
        self.blocks.iter().any(Option::is_some)
    }

    /// Whether `t` may move its head into `r`, ignoring time (failures, headway).
    pub fn enterable(&self, net: &Network, inst: &Instance, t: TrainId, r: ResourceId) -> bool {
        let occ = &self.occupations[t.index()];
        if occ.contains(&r) {
            return false;
        }
        if let Some(owner) = self.blocks[r.index()] {
            if owner != t {
                return false;
            }
        }
        let spec = inst.train(t);
        let res = net.resource(r);
        let mut others = self.occupants(r).filter(|&o| o != t).peekable();
        if others.peek().is_some() {
            match res.kind {
                ResourceKind::StoppingPoint | ResourceKind::StationRoute => return false,
                ResourceKind::Track => {
                    // Only a same-direction follower that fits entirely may share a track.
                    if spec.length_ft > res.length_ft {
                        return false;
                    }
                    if others.any(|o| inst.train(o).direction != spec.direction) {
                        return false;
                    }
                }
            }
        }
        if net.route_exclusion(r) {
            for &s in net.siblings(r) {
                if s != r && !self.is_free_of_others(s, t) {
                    return false;
                }
            }
        }
        true
    }

    /// Moves `t`'s head into `r` and releases tail resources no longer needed
    /// to cover the train's length. Returns the released resources.
    pub fn advance(&mut self, net: &Network, inst: &Instance, t: TrainId, r: ResourceId) -> Vec<ResourceId> {
        let length = inst.train(t).length_ft;
        let occ = &mut self.occupations[t.index()];
        occ.insert(0, r);
        let mut released = Vec::new();
        loop {
            if occ.len() < 2 {
                break;
            }
            let without_last: f64 = occ[..occ.len() - 1].iter().map(|&x| net.resource(x).length_ft).sum();
            if without_last >= length {
                released.push(occ.pop().unwrap());
            } else {
                break;
            }
        }
        for &x in &released {
            if self.blocks[x.index()] == Some(t) {
                self.blocks[x.index()] = None;
            }
        }
        released
    }

    pub fn remove(&mut self, t: TrainId) {
        self.occupations[t.index()].clear();
        for b in self.blocks.iter_mut() {
            if *b == Some(t) {
                *b = None;
            }
        }
    }

    /// Successors of `t`'s head from which its destination is still reachable.
    pub fn forward_options(&self, net: &Network, inst: &Instance, t: TrainId) -> Vec<ResourceId> {
        let spec = inst.train(t);
        match self.head(t) {
            None => Vec::new(),
            Some(h) => toward_destination(net, h, spec.direction, spec.destination),
        }
    }

    pub fn at_destination(&self, net: &Network, inst: &Instance, t: TrainId) -> bool {
        self.head(t).is_some_and(|h| net.same_group(h, inst.train(t).destination))
    }
}

pub fn toward_destination(
    net: &Network,
    from: ResourceId,
    dir: crate::topology::Direction,
    dest: ResourceId,
) -> Vec<ResourceId> {
    net.successors(from, dir).iter().copied().filter(|&s| net.reaches_group(s, dest, dir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{InstanceDoc, ScheduleDoc, TrainDoc};
    use crate::topology::{Direction, LineLayout};

    fn train(id: &str, dir: Direction, origin: &str, dest: &str, len: f64) -> TrainDoc {
        TrainDoc {
            id: id.into(),
            priority: 3,
            length_ft: len,
            direction: dir,
            origin: origin.into(),
            destination: dest.into(),
            schedule: vec![ScheduleDoc { resource: dest.into(), time_s: 0.0 }],
            weight: None,
            occupation: None,
            state_value: None,
        }
    }

    #[test]
    fn track_sharing_rules() {
        let net = LineLayout::new(3, 3).build();
        let doc = InstanceDoc {
            name: String::new(),
            trains: vec![
                train("lead", Direction::LeftToRight, "T1", "T3", 4000.0),
                train("follow", Direction::LeftToRight, "S0a", "T3", 4000.0),
                train("oppose", Direction::RightToLeft, "S1a", "T0", 4000.0),
            ],
            start_time_s: 0.0,
            running_times: vec![],
            failures: vec![],
            blocks: vec![],
        };
        let inst = Instance::from_doc(&doc, &net).unwrap();
        let layout = Layout::from_instance(&net, &inst);
        let t1 = net.lookup("T1").unwrap();
        assert!(layout.enterable(&net, &inst, TrainId(1), t1), "same-direction follower fits");
        assert!(!layout.enterable(&net, &inst, TrainId(2), t1), "opposing train may not share a track");
        let s1a = net.lookup("S1a").unwrap();
        let s1b = net.lookup("S1b").unwrap();
        assert!(!layout.enterable(&net, &inst, TrainId(0), s1a));
        assert!(layout.enterable(&net, &inst, TrainId(0), s1b));
    }

    #[test]
    fn advance_releases_tail() {
        let net = LineLayout::new(3, 1).build();
        let doc = InstanceDoc {
            name: String::new(),
            trains: vec![train("long", Direction::LeftToRight, "S1a", "T3", 13_000.0)],
            start_time_s: 0.0,
            running_times: vec![],
            failures: vec![],
            blocks: vec![],
        };
        let inst = Instance::from_doc(&doc, &net).unwrap();
        let mut layout = Layout::from_instance(&net, &inst);
        let t2 = net.lookup("T2").unwrap();
        let released = layout.advance(&net, &inst, TrainId(0), t2);
        // The head track alone is longer than the train, so the whole tail is released.
        assert_eq!(released, vec![net.lookup("T1").unwrap(), net.lookup("S1a").unwrap()]);
        let names: Vec<&str> = layout.occupations[0].iter().map(|r| net.name(*r)).collect();
        assert_eq!(names, ["T2"]);
        let s2a = net.lookup("S2a").unwrap();
        let released = layout.advance(&net, &inst, TrainId(0), s2a);
        assert!(released.is_empty(), "8500 ft platform cannot hold a 13000 ft train");
        let names: Vec<&str> = layout.occupations[0].iter().map(|r| net.name(*r)).collect();
        assert_eq!(names, ["S2a", "T2"]);
    }
}
