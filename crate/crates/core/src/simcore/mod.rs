//! Deterministic event-driven dispatch simulator.
//!
//! Each train carries the time at which its head reaches the control point at
//! the end of its current resource. [`SimState::next_decision`] advances the
//! clock to the earliest such event (ties to the lowest train id), applies
//! the automatic rules and hands genuine choices back to the caller as
//! decision requests, which are answered with [`SimState::apply_action`].

pub mod deadlock;
pub mod occupancy;

use std::io::Write;

use crate::encoding::ActionMask;
use crate::error::{Error, Result};
use crate::instance::{cheapest, Instance, TrainId};
use crate::topology::{Network, ResourceId, ResourceKind};

pub use deadlock::DeadlockReport;
pub use occupancy::Layout;

/// Re-analysis increment for a held train whose blocker has no known release time.
pub const HOLD_EPSILON_S: f64 = 1.0;
/// Consecutive identical holds after which a move is forced.
pub const MAX_HOLD_STREAK: u8 = 3;
/// Number of reachable (non-best) alternatives addressable by actions 2..=4.
pub const ACTION_REACHABLE: usize = 3;

pub const ACTION_HOLD: u8 = 0;
pub const ACTION_BEST: u8 = 1;
/// Step-log code for an arrival.
pub const ACTION_ARRIVE: u8 = 5;

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Apply the automatic go/hold rules; when false every control-point visit
    /// with at least one enterable resource becomes a decision request.
    pub auto_moves: bool,
    pub detect_deadlocks: bool,
    pub search_budget: usize,
    /// Forward window inspected by the automatic go rule.
    pub lf: usize,
    /// Backward window inspected by the automatic go rule.
    pub lb: usize,
    /// Overrides the instance's time horizon.
    pub horizon_s: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            auto_moves: true,
            detect_deadlocks: true,
            search_budget: deadlock::DEFAULT_SEARCH_BUDGET,
            lf: 3,
            lb: 2,
            horizon_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoldStreak {
    pub resource: Option<ResourceId>,
    pub fingerprint: u64,
    pub count: u8,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub next_event_s: f64,
    pub arrival_s: Option<f64>,
    /// Head resources visited, oldest first; the last entry is the current head.
    pub trail: Vec<ResourceId>,
    pub hold_streak: HoldStreak,
    /// Seconds lost to holds, detours and headway waits so far.
    pub produced_delay_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoveOptions {
    pub best: Option<ResourceId>,
    pub reachable: Vec<ResourceId>,
    pub mask: ActionMask,
}

impl MoveOptions {
    pub fn target(&self, action: u8) -> Option<ResourceId> {
        match action {
            ACTION_BEST => self.best,
            2..=4 => self.reachable.get(action as usize - 2).copied(),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AutoAction {
    Go(ResourceId),
    Hold,
    Arrive,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Request { train: TrainId, mask: ActionMask },
    Auto { train: TrainId, action: AutoAction },
    Terminal(EpisodeOutcome),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Decided,
    Forced,
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub train: TrainId,
    pub fingerprint: u64,
    pub action: u8,
    pub kind: StepKind,
    pub clock_s: f64,
    pub resource: Option<ResourceId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerminalClass {
    AllArrived,
    Deadlock,
    HorizonExceeded,
}

impl TerminalClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalClass::AllArrived => "all_arrived",
            TerminalClass::Deadlock => "deadlock",
            TerminalClass::HorizonExceeded => "horizon_exceeded",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub class: TerminalClass,
    /// `None` for deadlocks, where the objective is not evaluated.
    pub weighted_delay: Option<f64>,
    /// Lateness at the destination per train; unfinished trains are measured at the end clock.
    pub per_train_delay: Vec<f64>,
    pub deadlocked_trains: Vec<TrainId>,
    pub end_clock_s: f64,
    pub step_log: Vec<StepRecord>,
}

/// Σ weight × delay.
pub fn weighted_delay(inst: &Instance, per_train_delay: &[f64]) -> f64 {
    inst.trains.iter().zip(per_train_delay).map(|(t, d)| t.weight * d).sum()
}

#[derive(Clone, Debug)]
struct Pending {
    train: TrainId,
    options: MoveOptions,
}

#[derive(Clone, Debug)]
pub struct SimState<'a> {
    net: &'a Network,
    inst: &'a Instance,
    options: SimOptions,
    layout: Layout,
    trains: Vec<TrainState>,
    clock: f64,
    horizon_end: f64,
    /// Per track and direction, the last entry time.
    last_entry: Vec<[f64; 2]>,
    pending: Option<Pending>,
    step_log: Vec<StepRecord>,
    /// Bumped on every occupancy change; keys the deadlock cache.
    version: u64,
    deadlock_cache: Option<(u64, DeadlockReport)>,
    outcome: Option<EpisodeOutcome>,
}

impl<'a> SimState<'a> {
    pub fn new(net: &'a Network, inst: &'a Instance, options: SimOptions) -> Result<Self> {
        let layout = Layout::from_instance(net, inst);
        for t in inst.train_ids() {
            for &r in &layout.occupations[t.index()] {
                for o in layout.occupants(r).filter(|&o| o != t) {
                    let shared_ok = net.resource(r).kind == ResourceKind::Track
                        && inst.train(o).direction == inst.train(t).direction;
                    if !shared_ok {
                        return Err(Error::InvalidInstance(format!(
                            "trains `{}` and `{}` both occupy `{}`",
                            inst.train(t).name,
                            inst.train(o).name,
                            net.name(r)
                        )));
                    }
                }
            }
        }
        let trains = inst
            .trains
            .iter()
            .map(|spec| TrainState {
                next_event_s: inst.start_time_s,
                arrival_s: None,
                trail: spec.occupation.iter().rev().copied().collect(),
                hold_streak: HoldStreak { resource: None, fingerprint: 0, count: 0 },
                produced_delay_s: 0.0,
            })
            .collect();
        let horizon = options.horizon_s.unwrap_or_else(|| inst.time_horizon_s());
        Ok(SimState {
            net,
            inst,
            layout,
            trains,
            clock: inst.start_time_s,
            horizon_end: inst.start_time_s + horizon,
            last_entry: vec![[f64::NEG_INFINITY; 2]; net.len()],
            pending: None,
            step_log: Vec::new(),
            version: 0,
            deadlock_cache: None,
            outcome: None,
            options,
        })
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon_end
    }

    pub fn train_state(&self, t: TrainId) -> &TrainState {
        &self.trains[t.index()]
    }

    pub fn step_log(&self) -> &[StepRecord] {
        &self.step_log
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn pending_train(&self) -> Option<TrainId> {
        self.pending.as_ref().map(|p| p.train)
    }

    pub fn pending_options(&self) -> Option<&MoveOptions> {
        self.pending.as_ref().map(|p| &p.options)
    }

    pub fn head(&self, t: TrainId) -> Option<ResourceId> {
        self.layout.head(t)
    }

    pub fn active_trains(&self) -> impl Iterator<Item = TrainId> + '_ {
        self.layout.active()
    }

    pub fn running_time(&self, t: TrainId, r: ResourceId) -> f64 {
        self.inst.running_times.get(t, r)
    }

    /// Σ weight × produced delay over all trains so far.
    pub fn produced_weighted_delay(&self) -> f64 {
        self.inst.trains.iter().zip(&self.trains).map(|(spec, st)| spec.weight * st.produced_delay_s).sum()
    }

    // -- routing ------------------------------------------------------------

    fn options_toward(&self, t: TrainId, from: ResourceId) -> Vec<ResourceId> {
        let spec = self.inst.train(t);
        occupancy::toward_destination(self.net, from, spec.direction, spec.destination)
    }

    /// Successor with minimum free running time (ties to the lowest id).
    pub fn best_next(&self, t: TrainId) -> Result<ResourceId> {
        let head =
            self.head(t).ok_or_else(|| Error::Contract(format!("train `{}` has arrived", self.inst.train(t).name)))?;
        self.best_from(t, head).ok_or_else(|| Error::NoSuccessor(self.inst.train(t).name.clone()))
    }

    fn best_from(&self, t: TrainId, from: ResourceId) -> Option<ResourceId> {
        cheapest(&self.options_toward(t, from), |r| self.running_time(t, r))
    }

    /// Successors other than the best one, ascending by free running time, at most `n`.
    pub fn reachable_next(&self, t: TrainId, n: usize) -> Vec<ResourceId> {
        let Some(head) = self.head(t) else { return Vec::new() };
        let Some(best) = self.best_from(t, head) else { return Vec::new() };
        let mut rest: Vec<ResourceId> = self.options_toward(t, head).into_iter().filter(|&r| r != best).collect();
        rest.sort_by(|a, b| self.running_time(t, *a).total_cmp(&self.running_time(t, *b)).then(a.cmp(b)));
        rest.truncate(n);
        rest
    }

    /// The chain of best resources ahead, up to `lf` long, ending at the destination.
    pub fn forward_chain(&self, t: TrainId, lf: usize) -> Vec<ResourceId> {
        let mut chain = Vec::with_capacity(lf);
        let Some(mut at) = self.head(t) else { return chain };
        let dest = self.inst.train(t).destination;
        while chain.len() < lf && !self.net.same_group(at, dest) {
            match self.best_from(t, at) {
                Some(next) => {
                    chain.push(next);
                    at = next;
                }
                None => break,
            }
        }
        chain
    }

    /// The `lb` resources behind the head, nearest first: the train's own
    /// trail, continued along the cheapest predecessors.
    pub fn backward_chain(&self, t: TrainId, lb: usize) -> Vec<ResourceId> {
        let st = &self.trains[t.index()];
        let mut chain: Vec<ResourceId> = st.trail.iter().rev().skip(1).take(lb).copied().collect();
        let dir = self.inst.train(t).direction;
        let mut at = chain.last().copied().or_else(|| st.trail.last().copied());
        while chain.len() < lb {
            let Some(from) = at else { break };
            match cheapest(self.net.predecessors(from, dir), |r| self.running_time(t, r)) {
                Some(prev) => {
                    chain.push(prev);
                    at = Some(prev);
                }
                None => break,
            }
        }
        chain
    }

    pub fn failure_at(&self, r: ResourceId, time: f64) -> Option<&crate::instance::Failure> {
        self.inst.failures.iter().find(|f| f.resource == r && f.start_s <= time && time < f.end_s)
    }

    /// Enterable now: structurally allowed and not inside a failure window.
    pub fn can_enter(&self, t: TrainId, r: ResourceId) -> bool {
        self.layout.enterable(self.net, self.inst, t, r) && self.failure_at(r, self.clock).is_none()
    }

    pub fn move_options(&self, t: TrainId) -> MoveOptions {
        let best = self.head(t).and_then(|h| self.best_from(t, h));
        let reachable = self.reachable_next(t, ACTION_REACHABLE);
        let mut allowed = [true, false, false, false, false];
        if let Some(b) = best {
            allowed[1] = self.can_enter(t, b);
        }
        for (k, &r) in reachable.iter().enumerate() {
            allowed[2 + k] = self.can_enter(t, r);
        }
        MoveOptions { best, reachable, mask: ActionMask(allowed) }
    }

    fn window_clear(&self, t: TrainId) -> bool {
        self.forward_chain(t, self.options.lf)
            .into_iter()
            .chain(self.backward_chain(t, self.options.lb))
            .all(|r| self.layout.is_free_of_others(r, t))
    }

    // -- deadlocks ----------------------------------------------------------

    pub fn detect_deadlock(&mut self) -> DeadlockReport {
        if let Some((v, report)) = &self.deadlock_cache {
            if *v == self.version {
                return report.clone();
            }
        }
        let report = deadlock::detect(self.net, self.inst, &self.layout, self.options.search_budget);
        self.deadlock_cache = Some((self.version, report.clone()));
        report
    }

    // -- stepping -----------------------------------------------------------

    fn earliest(&self) -> Option<TrainId> {
        // Few trains: a scan over active trains is the event queue.
        self.layout.active().min_by(|a, b| {
            self.trains[a.index()].next_event_s.total_cmp(&self.trains[b.index()].next_event_s).then(a.cmp(b))
        })
    }

    fn finish(&mut self, class: TerminalClass, deadlocked: Vec<TrainId>) -> EpisodeOutcome {
        let end = match class {
            TerminalClass::HorizonExceeded => self.horizon_end,
            _ => self.clock,
        };
        let per_train_delay: Vec<f64> = self
            .inst
            .trains
            .iter()
            .zip(&self.trains)
            .map(|(spec, st)| (st.arrival_s.unwrap_or(end) - spec.scheduled_arrival_s).max(0.0))
            .collect();
        let weighted = match class {
            TerminalClass::Deadlock => None,
            _ => Some(weighted_delay(self.inst, &per_train_delay)),
        };
        let outcome = EpisodeOutcome {
            class,
            weighted_delay: weighted,
            per_train_delay,
            deadlocked_trains: deadlocked,
            end_clock_s: end,
            step_log: self.step_log.clone(),
        };
        self.outcome = Some(outcome.clone());
        outcome
    }

    fn log(&mut self, train: TrainId, fingerprint: u64, action: u8, kind: StepKind, resource: Option<ResourceId>) {
        self.step_log.push(StepRecord { train, fingerprint, action, kind, clock_s: self.clock, resource });
    }

    /// Advances to the next event: an automatic move, a decision request, or the end of the episode.
    pub fn next_decision(&mut self) -> Result<Step> {
        if let Some(o) = &self.outcome {
            return Ok(Step::Terminal(o.clone()));
        }
        if let Some(p) = &self.pending {
            return Err(Error::Contract(format!(
                "decision for train `{}` still pending",
                self.inst.train(p.train).name
            )));
        }
        let Some(t) = self.earliest() else {
            return Ok(Step::Terminal(self.finish(TerminalClass::AllArrived, Vec::new())));
        };
        if self.options.detect_deadlocks {
            let report = self.detect_deadlock();
            if report.deadlocked {
                return Ok(Step::Terminal(self.finish(TerminalClass::Deadlock, report.trains)));
            }
        }
        let time = self.trains[t.index()].next_event_s;
        if time > self.horizon_end {
            return Ok(Step::Terminal(self.finish(TerminalClass::HorizonExceeded, Vec::new())));
        }
        self.clock = self.clock.max(time);

        if self.layout.at_destination(self.net, self.inst, t) {
            self.trains[t.index()].arrival_s = Some(self.clock);
            self.layout.remove(t);
            self.version += 1;
            let head = self.trains[t.index()].trail.last().copied();
            self.log(t, 0, ACTION_ARRIVE, StepKind::Auto, head);
            return Ok(Step::Auto { train: t, action: AutoAction::Arrive });
        }

        let options = self.move_options(t);
        if !options.mask.any_go() {
            self.hold(t, &options);
            self.log(t, 0, ACTION_HOLD, StepKind::Auto, None);
            return Ok(Step::Auto { train: t, action: AutoAction::Hold });
        }
        let head = self.head(t).expect("active train has a head");
        if !self.net.is_control_point(head) {
            let action = (1..=4u8).find(|&a| options.mask.allowed(a)).expect("some go is allowed");
            let target = options.target(action).expect("allowed go has a target");
            self.go(t, &options, target);
            self.log(t, 0, action, StepKind::Auto, Some(target));
            return Ok(Step::Auto { train: t, action: AutoAction::Go(target) });
        }
        if self.options.auto_moves && options.mask.allowed(ACTION_BEST) && self.window_clear(t) {
            let target = options.best.expect("best exists when allowed");
            self.go(t, &options, target);
            self.log(t, 0, ACTION_BEST, StepKind::Auto, Some(target));
            return Ok(Step::Auto { train: t, action: AutoAction::Go(target) });
        }
        let mask = options.mask;
        self.pending = Some(Pending { train: t, options });
        Ok(Step::Request { train: t, mask })
    }

    /// Applies `action` to the pending decision. Returns the seconds until the
    /// train is analysed again.
    pub fn apply_action(&mut self, train: TrainId, action: u8) -> Result<f64> {
        self.apply_decision(train, action, 0, StepKind::Decided)
    }

    pub fn apply_decision(&mut self, train: TrainId, action: u8, fingerprint: u64, kind: StepKind) -> Result<f64> {
        let pending = match &self.pending {
            Some(p) if p.train == train => p.clone(),
            _ => {
                return Err(Error::Contract(format!("no decision pending for train `{}`", self.inst.train(train).name)))
            }
        };
        if action > 4 || !pending.options.mask.allowed(action) {
            return Err(Error::MaskedAction { train: self.inst.train(train).name.clone(), action });
        }
        self.pending = None;
        let head = self.head(train);
        if action == ACTION_HOLD {
            let streak = &mut self.trains[train.index()].hold_streak;
            if streak.resource == head && streak.fingerprint == fingerprint && streak.count > 0 {
                streak.count = (streak.count + 1).min(MAX_HOLD_STREAK);
            } else {
                *streak = HoldStreak { resource: head, fingerprint, count: 1 };
            }
            self.hold(train, &pending.options);
            self.log(train, fingerprint, action, kind, None);
        } else {
            let target = pending.options.target(action).expect("allowed go has a target");
            self.go(train, &pending.options, target);
            self.log(train, fingerprint, action, kind, Some(target));
        }
        Ok(self.trains[train.index()].next_event_s - self.clock)
    }

    /// True when the train has been held three times on the same resource with
    /// the same state and some go action is available now.
    pub fn forced_move_check(&self, train: TrainId, fingerprint: u64) -> bool {
        let Some(p) = &self.pending else { return false };
        if p.train != train {
            return false;
        }
        let streak = &self.trains[train.index()].hold_streak;
        streak.count >= MAX_HOLD_STREAK
            && streak.resource == self.head(train)
            && streak.fingerprint == fingerprint
            && p.options.mask.any_go()
    }

    fn hold(&mut self, t: TrainId, options: &MoveOptions) {
        let until = self.hold_until(t, options);
        let st = &mut self.trains[t.index()];
        st.produced_delay_s += until - self.clock;
        st.next_event_s = until;
    }

    /// Known release of the best resource if determinable, otherwise the next
    /// other event plus [`HOLD_EPSILON_S`].
    fn hold_until(&self, t: TrainId, options: &MoveOptions) -> f64 {
        let known = options.best.and_then(|b| {
            if options.mask.allowed(ACTION_BEST) {
                return None;
            }
            if let Some(f) = self.failure_at(b, self.clock) {
                return Some(f.end_s);
            }
            let blockers: Vec<TrainId> = self.layout.occupants(b).filter(|&o| o != t).collect();
            if blockers.is_empty() {
                return None;
            }
            let release =
                blockers.iter().map(|o| self.trains[o.index()].next_event_s).fold(f64::NEG_INFINITY, f64::max);
            (release > self.clock).then_some(release)
        });
        let next_other = self
            .layout
            .active()
            .filter(|&o| o != t)
            .map(|o| self.trains[o.index()].next_event_s)
            .fold(f64::INFINITY, f64::min);
        let fallback = if next_other.is_finite() { next_other + HOLD_EPSILON_S } else { self.clock + HOLD_EPSILON_S };
        known.unwrap_or(fallback).max(self.clock + f64::EPSILON * self.clock.abs().max(1.0))
    }

    fn go(&mut self, t: TrainId, options: &MoveOptions, target: ResourceId) {
        let dir = self.inst.train(t).direction.index();
        let mut entry = self.clock;
        if self.net.resource(target).kind == ResourceKind::Track {
            entry = entry.max(self.last_entry[target.index()][dir] + self.net.headway_s());
            self.last_entry[target.index()][dir] = entry;
        }
        let rt = self.running_time(t, target);
        let detour = options.best.map_or(0.0, |b| (rt - self.running_time(t, b)).max(0.0));
        self.layout.advance(self.net, self.inst, t, target);
        self.version += 1;
        let st = &mut self.trains[t.index()];
        st.produced_delay_s += (entry - self.clock) + detour;
        st.next_event_s = entry + rt;
        st.trail.push(target);
        st.hold_streak.count = 0;
    }

    /// Writes the step log as CSV rows `episode,step,clock_s,train,action,resource`.
    pub fn write_step_log_csv<W: Write>(
        net: &Network,
        inst: &Instance,
        episode: usize,
        log: &[StepRecord],
        header: bool,
        out: W,
    ) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(["episode", "step", "clock_s", "train", "action", "resource"])?;
        }
        for (i, rec) in log.iter().enumerate() {
            let action = match rec.action {
                ACTION_ARRIVE => "arrive".to_string(),
                a => a.to_string(),
            };
            w.write_record([
                episode.to_string(),
                i.to_string(),
                format!("{}", rec.clock_s),
                inst.train(rec.train).name.clone(),
                action,
                rec.resource.map(|r| net.name(r).to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
