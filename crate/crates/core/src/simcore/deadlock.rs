//! Deadlock detection on a line.
//!
//! Two opposing trains are in conflict when each one's remaining route
//! crosses a resource the other occupies: they must pass each other. A
//! conflicting pair whose connecting flow of resources holds no parallel
//! resource can never pass and is deadlocked outright. Other configurations
//! are settled by a memoised search over untimed moves that stops once no
//! reservation is pending and every train has a route around all opposing
//! trains; searches beyond the node budget are inconclusive and fall back to
//! a gridlock test.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::rc::Rc;

use rustc_hash::FxHashSet;

use crate::instance::{Instance, TrainId};
use crate::simcore::occupancy::Layout;
use crate::topology::{Network, ResourceId};

pub const DEFAULT_SEARCH_BUDGET: usize = 4_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeadlockReport {
    pub deadlocked: bool,
    pub trains: Vec<TrainId>,
    /// False when the search hit its budget and the answer relies on the gridlock test.
    pub exhaustive: bool,
}

impl DeadlockReport {
    fn clear(exhaustive: bool) -> Self {
        DeadlockReport { deadlocked: false, trains: Vec::new(), exhaustive }
    }

    fn found(mut trains: Vec<TrainId>, exhaustive: bool) -> Self {
        trains.sort();
        trains.dedup();
        DeadlockReport { deadlocked: true, trains, exhaustive }
    }
}

/// Whether `a` cannot reach its destination without entering a resource `b`
/// occupies or one whose route `b`'s occupation excludes.
pub fn needs(net: &Network, inst: &Instance, layout: &Layout, a: TrainId, b: TrainId) -> bool {
    let mut blocked = vec![false; net.len()];
    for r in &layout.occupations[b.index()] {
        blocked[r.index()] = true;
    }
    !reaches_avoiding(net, inst, layout, a, &blocked)
}

/// Whether `a` cannot reach its destination around every opposing train at once.
pub fn obstructed(net: &Network, inst: &Instance, layout: &Layout, a: TrainId) -> bool {
    let dir = inst.train(a).direction;
    let mut blocked = vec![false; net.len()];
    for t in layout.active().filter(|&t| inst.train(t).direction != dir) {
        for r in &layout.occupations[t.index()] {
            blocked[r.index()] = true;
        }
    }
    !reaches_avoiding(net, inst, layout, a, &blocked)
}

fn reaches_avoiding(net: &Network, inst: &Instance, layout: &Layout, a: TrainId, blocked: &[bool]) -> bool {
    let Some(head) = layout.head(a) else { return true };
    let spec = inst.train(a);
    if net.same_group(head, spec.destination) {
        return true;
    }
    let mut seen = vec![false; net.len()];
    let mut stack = vec![head];
    seen[head.index()] = true;
    while let Some(r) = stack.pop() {
        for &s in net.successors(r, spec.direction) {
            if seen[s.index()] || blocked[s.index()] {
                continue;
            }
            if net.route_exclusion(s) && net.siblings(s).iter().any(|x| *x != s && blocked[x.index()]) {
                continue;
            }
            if net.same_group(s, spec.destination) {
                return true;
            }
            seen[s.index()] = true;
            stack.push(s);
        }
    }
    false
}

/// Opposing pairs that must pass each other, `a < b`.
pub fn conflict_pairs(net: &Network, inst: &Instance, layout: &Layout) -> Vec<(TrainId, TrainId)> {
    let active: Vec<TrainId> = layout.active().collect();
    let mut pairs = Vec::new();
    for (i, &a) in active.iter().enumerate() {
        for &b in &active[i + 1..] {
            if inst.train(a).direction == inst.train(b).direction {
                continue;
            }
            if needs(net, inst, layout, a, b) && needs(net, inst, layout, b, a) {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Resources on some path from `a`'s head to `b`'s head in `a`'s direction, both heads included.
pub fn flow(net: &Network, inst: &Instance, layout: &Layout, a: TrainId, b: TrainId) -> Vec<ResourceId> {
    flow_iter(net, inst, layout, a, b).collect()
}

fn flow_iter<'a>(
    net: &'a Network,
    inst: &Instance,
    layout: &Layout,
    a: TrainId,
    b: TrainId,
) -> impl Iterator<Item = ResourceId> + 'a {
    let heads = layout.head(a).zip(layout.head(b));
    let dir = inst.train(a).direction;
    net.ids().filter(move |&r| heads.is_some_and(|(ha, hb)| net.reaches(ha, r, dir) && net.reaches(r, hb, dir)))
}

/// A conflicting pair with no parallel resource between them can never meet.
pub fn flow_blocked(net: &Network, inst: &Instance, layout: &Layout, a: TrainId, b: TrainId) -> bool {
    let mut empty = true;
    for r in flow_iter(net, inst, layout, a, b) {
        if net.parallel_count(r) != 0 {
            return false;
        }
        empty = false;
    }
    !empty
}

/// Whether some opposing pair must pass and never can.
fn has_blocked_pair(net: &Network, inst: &Instance, layout: &Layout) -> bool {
    let active: Vec<TrainId> = layout.active().collect();
    active.iter().enumerate().any(|(i, &a)| {
        active[i + 1..].iter().any(|&b| {
            inst.train(a).direction != inst.train(b).direction
                && flow_blocked(net, inst, layout, a, b)
                && needs(net, inst, layout, a, b)
                && needs(net, inst, layout, b, a)
        })
    })
}

fn screen(net: &Network, inst: &Instance, layout: &Layout, pairs: &[(TrainId, TrainId)]) -> Vec<TrainId> {
    let mut out = Vec::new();
    for &(a, b) in pairs {
        if flow_blocked(net, inst, layout, a, b) {
            out.push(a);
            out.push(b);
        }
    }
    out
}

/// No reservations pending and every train has a way around the opposing traffic.
fn resolved(net: &Network, inst: &Instance, layout: &Layout) -> bool {
    !layout.any_block_active() && layout.active().all(|t| !obstructed(net, inst, layout, t))
}

enum SearchResult {
    Completable,
    Doomed,
    Inconclusive,
}

/// Best-first over layouts, preferring those with fewer obstructed trains.
fn search(net: &Network, inst: &Instance, root: &Layout, budget: usize) -> SearchResult {
    let root = Rc::new(root.clone());
    let mut visited: FxHashSet<Rc<Layout>> = FxHashSet::default();
    visited.insert(Rc::clone(&root));
    let mut frontier = BinaryHeap::new();
    let mut pending = vec![Some(Rc::clone(&root))];
    frontier.push((Reverse(obstruction(net, inst, &root)), 0usize));
    let mut expanded = 0usize;
    while let Some((_, at)) = frontier.pop() {
        let state = pending[at].take().expect("each layout is expanded once");
        expanded += 1;
        if expanded > budget {
            return SearchResult::Inconclusive;
        }
        for child in successors(net, inst, &state) {
            let child = Rc::new(child);
            if !visited.insert(Rc::clone(&child)) {
                continue;
            }
            if has_blocked_pair(net, inst, &child) {
                continue;
            }
            let h = obstruction(net, inst, &child);
            if h == 0 && !child.any_block_active() {
                return SearchResult::Completable;
            }
            frontier.push((Reverse(h), pending.len()));
            pending.push(Some(child));
        }
    }
    SearchResult::Doomed
}

fn successors(net: &Network, inst: &Instance, state: &Layout) -> Vec<Layout> {
    let mut children = Vec::new();
    for t in state.active() {
        if state.at_destination(net, inst, t) {
            let mut child = state.clone();
            child.remove(t);
            children.push(child);
            continue;
        }
        for r in state.forward_options(net, inst, t) {
            if state.enterable(net, inst, t, r) {
                let mut child = state.clone();
                child.advance(net, inst, t, r);
                children.push(child);
            }
        }
    }
    children
}

fn obstruction(net: &Network, inst: &Instance, layout: &Layout) -> usize {
    layout.active().filter(|&t| obstructed(net, inst, layout, t)).count()
}

fn gridlocked(net: &Network, inst: &Instance, layout: &Layout) -> bool {
    layout.active().all(|t| {
        !layout.at_destination(net, inst, t)
            && layout.forward_options(net, inst, t).iter().all(|&r| !layout.enterable(net, inst, t, r))
    })
}

/// Whether the configuration admits no sequence of moves that lets every
/// train complete its route.
pub fn detect(net: &Network, inst: &Instance, layout: &Layout, budget: usize) -> DeadlockReport {
    if layout.active().next().is_none() {
        return DeadlockReport::clear(true);
    }
    let pairs = conflict_pairs(net, inst, layout);
    let flagged = screen(net, inst, layout, &pairs);
    if !flagged.is_empty() {
        return DeadlockReport::found(flagged, true);
    }
    if resolved(net, inst, layout) {
        return DeadlockReport::clear(true);
    }
    let involved = || {
        let mut trains: Vec<TrainId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        if trains.is_empty() {
            trains = layout.active().filter(|&t| obstructed(net, inst, layout, t)).collect();
        }
        if trains.is_empty() {
            trains = layout.active().collect();
        }
        trains
    };
    match search(net, inst, layout, budget) {
        SearchResult::Completable => DeadlockReport::clear(true),
        SearchResult::Doomed => DeadlockReport::found(involved(), true),
        SearchResult::Inconclusive => {
            if gridlocked(net, inst, layout) {
                DeadlockReport::found(layout.active().collect(), false)
            } else {
                DeadlockReport::clear(false)
            }
        }
    }
}
