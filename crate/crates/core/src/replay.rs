//! Experience memories, target construction and batch sampling.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::encoding::{fingerprint, ActionMask, N_ACTIONS};
use crate::error::{Error, Result};
use crate::instance::TrainId;
use crate::qmodel::{QFunction, Sample};

pub const REWARD_BEST: f64 = 1.0;
pub const REWARD_NORMAL: f64 = -1.0;
pub const REWARD_DEADLOCK: f64 = -3.0;
/// Weighted delays are divided by this before becoming per-step rewards.
pub const DELAY_SCALE: f64 = 15_000.0;

pub const SINGLE_CAP: usize = 4096;
pub const SINGLE_KEEP: usize = 2048;
pub const TRIPLE_CAP: usize = 2048;
pub const TRIPLE_KEEP: usize = 1024;
pub const SINGLE_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub mask: ActionMask,
    pub action: u8,
    pub y_target: [f64; N_ACTIONS],
    pub episode: usize,
    pub train: TrainId,
}

impl Experience {
    pub fn sample(&self) -> Sample<'_> {
        Sample { state: &self.state, target: self.y_target, mask: self.mask }
    }

    pub fn key(&self) -> Key {
        Key { state: self.state.iter().map(|v| v.to_bits()).collect(), mask: self.mask.bits() }
    }
}

/// Exact (state, mask) identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Key {
    state: Vec<u64>,
    mask: u8,
}

/// Class of a finished episode, ordered by reward rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeClass {
    Deadlock,
    Normal,
    Best,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 3] = [OutcomeClass::Deadlock, OutcomeClass::Normal, OutcomeClass::Best];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::Deadlock => "deadlock",
            OutcomeClass::Normal => "normal",
            OutcomeClass::Best => "best",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Applies the end-of-episode reward to each experience's captured outputs.
/// In a deadlock only the deadlocked trains' experiences are kept.
pub fn assign_terminal_rewards(
    experiences: Vec<Experience>,
    class: OutcomeClass,
    deadlocked: &[TrainId],
) -> Vec<Experience> {
    experiences
        .into_iter()
        .filter(|e| class != OutcomeClass::Deadlock || deadlocked.contains(&e.train))
        .map(|mut e| {
            let a = e.action as usize;
            match class {
                OutcomeClass::Deadlock => e.y_target[a] = REWARD_DEADLOCK,
                OutcomeClass::Normal => e.y_target[a] = REWARD_NORMAL,
                OutcomeClass::Best => {
                    for b in e.mask.actions() {
                        e.y_target[b as usize] = if b as usize == a { REWARD_BEST } else { REWARD_NORMAL };
                    }
                }
            }
            e
        })
        .collect()
}

/// `r` at a terminal transition, otherwise `r + γ · max` over the next state's unmasked q-values.
pub fn build_q_target(
    reward: f64,
    next: Option<(&[f64], ActionMask)>,
    gamma: f64,
    model: &dyn QFunction,
) -> Result<f64> {
    let Some((state, mask)) = next else { return Ok(reward) };
    if gamma == 0.0 {
        return Ok(reward);
    }
    let q = model.q_values(state)?;
    let best = mask.actions().map(|a| q[a as usize]).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::EmptyMask);
    }
    Ok(reward + gamma * best)
}

/// Scaled, negated weighted delay of an action: what had accrued before it plus what it produced.
pub fn step_reward(cumulative_weighted_delay: f64, produced_weighted_delay: f64) -> f64 {
    -(cumulative_weighted_delay + produced_weighted_delay) / DELAY_SCALE
}

/// Reward of a hold settled when the train is next handled at `resume_s`.
pub fn deferred_hold_reward(hold_s: f64, resume_s: f64, weight: f64, cumulative_weighted_delay: f64) -> f64 {
    step_reward(cumulative_weighted_delay, weight * (resume_s - hold_s).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoryRule {
    pub id: u8,
    /// (deadlock, normal, best)
    pub quotas: [usize; 3],
}

impl MemoryRule {
    pub const ALL: [MemoryRule; 5] = [
        MemoryRule { id: 11, quotas: [12, 12, 12] },
        MemoryRule { id: 12, quotas: [13, 6, 13] },
        MemoryRule { id: 13, quotas: [6, 6, 20] },
        MemoryRule { id: 14, quotas: [16, 0, 16] },
        MemoryRule { id: 15, quotas: [8, 0, 24] },
    ];

    pub fn by_id(id: u8) -> Result<MemoryRule> {
        MemoryRule::ALL
            .into_iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Schema(format!("unknown memory rule {id}")))
    }

    pub fn batch_size(&self) -> usize {
        self.quotas.iter().sum()
    }
}

/// Per-store draw counts: quotas capped by store sizes, with any shortfall
/// handed to stores that still have items, in proportion to their quotas
/// (or to their spare items when those quotas are all zero).
pub fn allocate(quotas: [usize; 3], sizes: [usize; 3]) -> [usize; 3] {
    let mut take = [0; 3];
    for i in 0..3 {
        take[i] = quotas[i].min(sizes[i]);
    }
    let want: usize = quotas.iter().sum();
    loop {
        let have: usize = take.iter().sum();
        let shortfall = want - have;
        let open: Vec<usize> = (0..3).filter(|&i| take[i] < sizes[i]).collect();
        if shortfall == 0 || open.is_empty() {
            return take;
        }
        let quota_weights: Vec<usize> = open.iter().map(|&i| quotas[i]).collect();
        let weights: Vec<usize> = if quota_weights.iter().any(|&w| w > 0) {
            quota_weights
        } else {
            open.iter().map(|&i| sizes[i] - take[i]).collect()
        };
        let shares = largest_remainder(shortfall, &weights);
        let mut moved = 0;
        for (k, &i) in open.iter().enumerate() {
            let add = shares[k].min(sizes[i] - take[i]);
            take[i] += add;
            moved += add;
        }
        if moved == 0 {
            // Only zero-weight stores have room: fill them in store order.
            for &i in &open {
                let add = (sizes[i] - take[i]).min(want - take.iter().sum::<usize>());
                take[i] += add;
            }
        }
    }
}

fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut rest = total - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0).collect();
    order.sort_by(|&a, &b| ((total * weights[b]) % sum).cmp(&((total * weights[a]) % sum)).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        shares[i] += 1;
        rest -= 1;
    }
    shares
}

/// Best, normal and deadlock stores; each (state, mask) key lives in at most one of them.
#[derive(Clone, Debug, Default)]
pub struct TripartiteMemory {
    stores: [Vec<Experience>; 3],
    index: HashMap<Key, (OutcomeClass, usize)>,
}

impl TripartiteMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store_of(&self, class: OutcomeClass) -> &[Experience] {
        &self.stores[class.index()]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.stores[0].len(), self.stores[1].len(), self.stores[2].len()]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, e: &Experience) -> Option<OutcomeClass> {
        self.index.get(&e.key()).map(|&(c, _)| c)
    }

    fn remove_at(&mut self, class: OutcomeClass, pos: usize) {
        let store = &mut self.stores[class.index()];
        store.swap_remove(pos);
        if pos < store.len() {
            let moved = store[pos].key();
            self.index.insert(moved, (class, pos));
        }
    }

    /// Inserts `e` into `class` unless an equal key already sits in a higher-ranked store.
    pub fn store(&mut self, e: Experience, class: OutcomeClass) {
        let key = e.key();
        match self.index.get(&key).copied() {
            Some((held, _)) if held > class => {}
            Some((held, pos)) if held == class => self.stores[class.index()][pos] = e,
            Some((held, pos)) => {
                self.remove_at(held, pos);
                self.push(key, e, class);
            }
            None => self.push(key, e, class),
        }
    }

    fn push(&mut self, key: Key, e: Experience, class: OutcomeClass) {
        let store = &mut self.stores[class.index()];
        store.push(e);
        self.index.insert(key, (class, store.len() - 1));
    }

    pub fn clear_best(&mut self) {
        for e in self.stores[OutcomeClass::Best.index()].drain(..) {
            self.index.remove(&e.key());
        }
    }

    /// Keeps a uniformly random subset of `keep` items when a store exceeds `cap`.
    pub fn truncate<R: Rng>(&mut self, cap: usize, keep: usize, rng: &mut R) {
        for class in OutcomeClass::ALL {
            let len = self.stores[class.index()].len();
            if len <= cap {
                continue;
            }
            let mut chosen = sample_indices(rng, len, keep).into_vec();
            chosen.sort_unstable();
            let old = std::mem::take(&mut self.stores[class.index()]);
            for e in &old {
                self.index.remove(&e.key());
            }
            let mut slots: Vec<Option<Experience>> = old.into_iter().map(Some).collect();
            for i in chosen {
                let e = slots[i].take().unwrap();
                self.push(e.key(), e, class);
            }
        }
    }

    /// Draws the rule's quotas without replacement, redistributing shortfalls.
    pub fn sample<R: Rng>(&self, rule: &MemoryRule, rng: &mut R) -> Vec<&Experience> {
        let take = allocate(rule.quotas, self.sizes());
        let mut batch = Vec::with_capacity(take.iter().sum());
        for (i, &k) in take.iter().enumerate() {
            let store = &self.stores[i];
            for j in sample_indices(rng, store.len(), k) {
                batch.push(&store[j]);
            }
        }
        batch
    }

    pub fn iter(&self) -> impl Iterator<Item = (OutcomeClass, &Experience)> {
        OutcomeClass::ALL.into_iter().flat_map(move |c| self.stores[c.index()].iter().map(move |e| (c, e)))
    }
}

/// One store that is cut back to half when it overflows.
#[derive(Clone, Debug, Default)]
pub struct BoundedMemory {
    items: Vec<Experience>,
}

impl BoundedMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn store<R: Rng>(&mut self, e: Experience, rng: &mut R) {
        self.items.push(e);
        if self.items.len() > SINGLE_CAP {
            let mut chosen = sample_indices(rng, self.items.len(), SINGLE_KEEP).into_vec();
            chosen.sort_unstable();
            let old = std::mem::take(&mut self.items);
            let mut slots: Vec<Option<Experience>> = old.into_iter().map(Some).collect();
            self.items = chosen.into_iter().map(|i| slots[i].take().unwrap()).collect();
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        let k = n.min(self.items.len());
        sample_indices(rng, self.items.len(), k).into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoryMode {
    /// Three unbounded stores sampled by a memory rule.
    Tripartite(MemoryRule),
    /// One store capped at 4096, cut to 2048; batches of 32.
    BoundedSingle,
    /// Three stores capped at 2048 each, cut to 1024; sampled by a memory rule.
    BoundedTriple(MemoryRule),
}

impl fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryMode::Tripartite(r) => write!(f, "tripartite:{}", r.id),
            MemoryMode::BoundedSingle => f.write_str("bounded_single"),
            MemoryMode::BoundedTriple(r) => write!(f, "bounded_triple:{}", r.id),
        }
    }
}

impl FromStr for MemoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rule = |id: &str| -> Result<MemoryRule> {
            MemoryRule::by_id(id.parse().map_err(|_| Error::Schema(format!("bad memory rule `{id}`")))?)
        };
        match s.split_once(':') {
            None if s == "bounded_single" => Ok(MemoryMode::BoundedSingle),
            Some(("tripartite", id)) => Ok(MemoryMode::Tripartite(rule(id)?)),
            Some(("bounded_triple", id)) => Ok(MemoryMode::BoundedTriple(rule(id)?)),
            _ => Err(Error::Schema(format!("unknown memory mode `{s}`"))),
        }
    }
}

/// The memory used by a training run.
#[derive(Clone, Debug)]
pub enum ReplayMemory {
    Triple { mode: MemoryMode, memory: TripartiteMemory },
    Single(BoundedMemory),
}

impl ReplayMemory {
    pub fn new(mode: MemoryMode) -> Self {
        match mode {
            MemoryMode::BoundedSingle => ReplayMemory::Single(BoundedMemory::new()),
            _ => ReplayMemory::Triple { mode, memory: TripartiteMemory::new() },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ReplayMemory::Triple { memory, .. } => memory.len(),
            ReplayMemory::Single(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear_best(&mut self) {
        if let ReplayMemory::Triple { memory, .. } = self {
            memory.clear_best();
        }
    }

    pub fn store<R: Rng>(&mut self, e: Experience, class: OutcomeClass, rng: &mut R) {
        match self {
            ReplayMemory::Triple { mode, memory } => {
                memory.store(e, class);
                if matches!(mode, MemoryMode::BoundedTriple(_)) {
                    memory.truncate(TRIPLE_CAP, TRIPLE_KEEP, rng);
                }
            }
            ReplayMemory::Single(m) => m.store(e, rng),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<&Experience> {
        match self {
            ReplayMemory::Triple { mode: MemoryMode::Tripartite(rule) | MemoryMode::BoundedTriple(rule), memory } => {
                memory.sample(rule, rng)
            }
            ReplayMemory::Triple { memory, .. } => memory.sample(&MemoryRule::ALL[0], rng),
            ReplayMemory::Single(m) => m.sample(SINGLE_BATCH, rng),
        }
    }

    /// CSV rows `store,episode,train,action,y0..y4,key_hash`.
    pub fn write_snapshot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["store", "episode", "train", "action", "y0", "y1", "y2", "y3", "y4", "key_hash"])?;
        let rows: Vec<(&str, &Experience)> = match self {
            ReplayMemory::Triple { memory, .. } => memory.iter().map(|(c, e)| (c.as_str(), e)).collect(),
            ReplayMemory::Single(m) => m.iter().map(|e| ("single", e)).collect(),
        };
        for (store, e) in rows {
            let mut rec = vec![store.to_string(), e.episode.to_string(), e.train.0.to_string(), e.action.to_string()];
            rec.extend(e.y_target.iter().map(|v| v.to_string()));
            let mut keyed = e.state.clone();
            keyed.push(e.mask.bits() as f64);
            rec.push(format!("{:016x}", fingerprint(&keyed)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
