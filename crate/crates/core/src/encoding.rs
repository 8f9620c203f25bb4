//! State encoders and the action mask.
//!
//! Local encoders describe a window of resources around the deciding train
//! with six features each; global encoders describe the whole line.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::instance::{Instance, TrainId};
use crate::simcore::SimState;
use crate::topology::{Network, ResourceId, ResourceKind};

pub const N_FEATURES: usize = 6;
pub const ABSENT: f64 = 9.0;
pub const N_ACTIONS: usize = 5;
pub const DEFAULT_HISTORY_DEPTH: usize = 3;

/// Failures with less than this much outage left encode as severity 3.
pub const SHORT_FAILURE_S: f64 = 900.0;
/// Failures with less than this much outage left encode as severity 4, longer ones as 5.
pub const MEDIUM_FAILURE_S: f64 = 3_600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ActionMask(pub [bool; N_ACTIONS]);

impl ActionMask {
    pub fn allowed(&self, action: u8) -> bool {
        self.0.get(action as usize).copied().unwrap_or(false)
    }

    pub fn any_go(&self) -> bool {
        self.0[1..].iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn actions(&self) -> impl Iterator<Item = u8> + '_ {
        (0..N_ACTIONS as u8).filter(|&a| self.allowed(a))
    }

    pub fn bits(&self) -> u8 {
        self.0.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u8) << i))
    }

    pub fn from_bits(bits: u8) -> Self {
        let mut m = [false; N_ACTIONS];
        for (i, slot) in m.iter_mut().enumerate() {
            *slot = bits & (1 << i) != 0;
        }
        ActionMask(m)
    }
}

impl fmt::Display for ActionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|&b| if b { "1" } else { "0" }).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

pub fn build_action_mask(sim: &SimState, t: TrainId) -> ActionMask {
    sim.move_options(t).mask
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LocalConfig {
    pub lf: usize,
    pub lb: usize,
    pub n_r: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig { lf: 3, lb: 2, n_r: 3 }
    }
}

impl LocalConfig {
    /// lf by the longest train's length class: 5 up to 4000 ft, 7 up to 8000 ft, 10 beyond.
    pub fn for_instance(inst: &Instance) -> Self {
        let longest = inst.trains.iter().map(|t| t.length_ft).fold(0.0, f64::max);
        let lf = if longest <= 4_000.0 {
            5
        } else if longest <= 8_000.0 {
            7
        } else {
            10
        };
        LocalConfig { lf, ..LocalConfig::default() }
    }

    pub fn slots(&self) -> usize {
        self.lf + self.lb + 1 + self.n_r
    }

    pub fn len(&self) -> usize {
        self.slots() * N_FEATURES
    }
}

/// Six features of resource `r` as seen by train `t`.
pub fn resource_features(sim: &SimState, t: TrainId, r: ResourceId) -> [f64; N_FEATURES] {
    let net = sim.network();
    let inst = sim.instance();
    let res = net.resource(r);
    let desc = if let Some(f) = sim.failure_at(r, sim.clock()) {
        let left = f.end_s - sim.clock();
        if left < SHORT_FAILURE_S {
            3.0
        } else if left < MEDIUM_FAILURE_S {
            4.0
        } else {
            5.0
        }
    } else if sim.layout().blocks[r.index()].is_some_and(|owner| owner != t) {
        2.0
    } else {
        match res.kind {
            ResourceKind::Track => 0.0,
            ResourceKind::StoppingPoint | ResourceKind::StationRoute => 1.0,
        }
    };
    let others: Vec<TrainId> = sim.layout().occupants(r).filter(|&o| o != t).collect();
    let top = others.iter().copied().min_by_key(|&o| (inst.train(o).priority, o));
    let (priority, direction) = match top {
        Some(o) => {
            let dir = if inst.train(o).direction == inst.train(t).direction { 2.0 } else { 1.0 };
            (inst.train(o).priority as f64, dir)
        }
        None => (0.0, 0.0),
    };
    let fits = if inst.train(t).length_ft <= res.length_ft { 1.0 } else { 0.0 };
    [desc, others.len() as f64, priority, direction, fits, net.parallel_count(r) as f64]
}

/// Window of slots: backward (farthest first), current, forward best chain, reachable.
pub fn local_window(sim: &SimState, t: TrainId, cfg: &LocalConfig) -> Vec<Option<ResourceId>> {
    let mut slots = Vec::with_capacity(cfg.slots());
    let back = sim.backward_chain(t, cfg.lb);
    slots.extend(std::iter::repeat_n(None, cfg.lb - back.len()));
    slots.extend(back.into_iter().rev().map(Some));
    slots.push(sim.head(t));
    let fwd = sim.forward_chain(t, cfg.lf);
    let n_fwd = fwd.len();
    slots.extend(fwd.into_iter().map(Some));
    slots.extend(std::iter::repeat_n(None, cfg.lf - n_fwd));
    let reach = sim.reachable_next(t, cfg.n_r);
    let n_reach = reach.len();
    slots.extend(reach.into_iter().map(Some));
    slots.extend(std::iter::repeat_n(None, cfg.n_r - n_reach));
    slots
}

pub fn encode_local(sim: &SimState, t: TrainId, cfg: &LocalConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.len());
    for slot in local_window(sim, t, cfg) {
        match slot {
            Some(r) => out.extend_from_slice(&resource_features(sim, t, r)),
            None => out.extend_from_slice(&[ABSENT; N_FEATURES]),
        }
    }
    out
}

/// Row 0 is `current`; further rows are the latest past encodings that
/// differ from it, newest first, padded with 9s. `past` is oldest first.
pub fn history_rows(current: &[f64], past: &[Vec<f64>], depth: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(current.len() * depth);
    out.extend_from_slice(current);
    let mut rows = 1;
    for p in past.iter().rev() {
        if rows == depth {
            break;
        }
        if p.as_slice() != current {
            out.extend_from_slice(p);
            rows += 1;
        }
    }
    out.resize(current.len() * depth, ABSENT);
    out
}

pub fn encode_local_history(
    sim: &SimState,
    t: TrainId,
    cfg: &LocalConfig,
    past: &[Vec<f64>],
    depth: usize,
) -> Vec<f64> {
    history_rows(&encode_local(sim, t, cfg), past, depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GlobalVariant {
    S0,
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl GlobalVariant {
    pub const ALL: [GlobalVariant; 6] = [
        GlobalVariant::S0,
        GlobalVariant::S1,
        GlobalVariant::S2,
        GlobalVariant::S3,
        GlobalVariant::S4,
        GlobalVariant::S5,
    ];

    /// (rows, columns) for `n_r` resources and `n_t` one-hot train slots.
    pub fn shape(self, n_r: usize, n_t: usize) -> (usize, usize) {
        match self {
            GlobalVariant::S0 => (1, n_r),
            GlobalVariant::S1 | GlobalVariant::S2 | GlobalVariant::S3 => (3, n_r + 1),
            GlobalVariant::S4 => (4, n_r),
            GlobalVariant::S5 => (3, n_r + n_t),
        }
    }

    pub fn len(self, n_r: usize, n_t: usize) -> usize {
        let (r, c) = self.shape(n_r, n_t);
        r * c
    }
}

impl fmt::Display for GlobalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GlobalVariant::S0 => "S0",
            GlobalVariant::S1 => "S1",
            GlobalVariant::S2 => "S2",
            GlobalVariant::S3 => "S3",
            GlobalVariant::S4 => "S4",
            GlobalVariant::S5 => "S5",
        };
        f.write_str(s)
    }
}

impl FromStr for GlobalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GlobalVariant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Schema(format!("unknown state variant `{s}`")))
    }
}

/// Identifying value of a train in the global states: the instance override or 3k for the k-th train.
pub fn train_value(inst: &Instance, t: TrainId) -> f64 {
    inst.train(t).state_value.unwrap_or(3.0 * (t.index() + 1) as f64)
}

pub fn length_class(length_ft: f64) -> f64 {
    if length_ft <= 4_000.0 {
        1.0
    } else if length_ft <= 8_000.0 {
        2.0
    } else {
        3.0
    }
}

fn representative(sim: &SimState, r: ResourceId) -> Option<TrainId> {
    let inst = sim.instance();
    sim.layout().occupants(r).min_by_key(|&o| (inst.train(o).priority, o))
}

pub fn encode_global(sim: &SimState, t: TrainId, variant: GlobalVariant, n_t: usize) -> Result<Vec<f64>> {
    let net = sim.network();
    let inst = sim.instance();
    let n_r = net.len();
    if variant == GlobalVariant::S5 && inst.len() > n_t {
        return Err(Error::Dimension { expected: n_t, got: inst.len() });
    }
    if variant == GlobalVariant::S0 {
        let mut out = vec![0.0; n_r];
        for (i, slot) in out.iter_mut().enumerate() {
            let r = ResourceId(i as u16);
            if let Some(o) = sim.layout().occupants(r).next() {
                *slot = train_value(inst, o) + if o == t { 2.0 } else { 0.0 };
            }
        }
        return Ok(out);
    }
    let (rows, cols) = variant.shape(n_r, n_t);
    let mut m = vec![0.0; rows * cols];
    for r in net.ids() {
        if let Some(o) = representative(sim, r) {
            let spec = inst.train(o);
            m[r.index()] = spec.priority as f64;
            m[cols + r.index()] = spec.direction.index() as f64 + 1.0;
            m[2 * cols + r.index()] = length_class(spec.length_ft);
        }
    }
    let head_index = sim.head(t).map_or(0.0, |h| (h.index() + 1) as f64);
    match variant {
        GlobalVariant::S1 | GlobalVariant::S2 | GlobalVariant::S3 => {
            let v = match variant {
                GlobalVariant::S1 => train_value(inst, t),
                GlobalVariant::S2 => head_index,
                _ => head_index / 10.0,
            };
            for row in 0..3 {
                m[row * cols + n_r] = v;
            }
        }
        GlobalVariant::S4 => {
            for c in 0..n_r {
                m[3 * cols + c] = (t.index() + 1) as f64;
            }
        }
        GlobalVariant::S5 => {
            for row in 0..3 {
                m[row * cols + n_r + t.index()] = 1.0;
            }
        }
        GlobalVariant::S0 => unreachable!(),
    }
    Ok(m)
}

/// Encoder selection shared by agents, model files and configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Encoder {
    Local(LocalConfig),
    LocalHistory(LocalConfig, usize),
    Global(GlobalVariant, usize),
}

impl Encoder {
    pub fn dim(&self, net: &Network) -> usize {
        match *self {
            Encoder::Local(cfg) => cfg.len(),
            Encoder::LocalHistory(cfg, depth) => cfg.len() * depth,
            Encoder::Global(v, n_t) => v.len(net.len(), n_t),
        }
    }

    /// Encodes the state of `t`; `past` holds that train's earlier local encodings.
    pub fn encode(&self, sim: &SimState, t: TrainId, past: &[Vec<f64>]) -> Result<Vec<f64>> {
        match *self {
            Encoder::Local(cfg) => Ok(encode_local(sim, t, &cfg)),
            Encoder::LocalHistory(cfg, depth) => Ok(encode_local_history(sim, t, &cfg, past, depth)),
            Encoder::Global(v, n_t) => encode_global(sim, t, v, n_t),
        }
    }

    /// The row that is remembered as history for later decisions.
    pub fn history_row(&self, encoded: &[f64]) -> Option<Vec<f64>> {
        match *self {
            Encoder::LocalHistory(cfg, _) => Some(encoded[..cfg.len()].to_vec()),
            _ => None,
        }
    }

    pub fn is_global(&self) -> bool {
        matches!(self, Encoder::Global(..))
    }
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoder::Local(c) => write!(f, "local:{}:{}:{}", c.lf, c.lb, c.n_r),
            Encoder::LocalHistory(c, d) => write!(f, "history:{}:{}:{}:{}", c.lf, c.lb, c.n_r, d),
            Encoder::Global(v, n_t) => write!(f, "global:{v}:{n_t}"),
        }
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ModelFormat(format!("bad encoder token `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<usize> { parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(bad) };
        match parts.first().copied() {
            Some("local") if parts.len() == 4 => {
                Ok(Encoder::Local(LocalConfig { lf: num(1)?, lb: num(2)?, n_r: num(3)? }))
            }
            Some("history") if parts.len() == 5 => {
                Ok(Encoder::LocalHistory(LocalConfig { lf: num(1)?, lb: num(2)?, n_r: num(3)? }, num(4)?))
            }
            Some("global") if parts.len() == 3 => Ok(Encoder::Global(parts[1].parse().map_err(|_| bad())?, num(2)?)),
            _ => Err(bad()),
        }
    }
}

/// Stable hash of an encoding's exact bit pattern.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Writes one CSV row `episode,step,train,variant,v1,...`.
pub fn write_encoding_row<W: Write>(
    out: &mut W,
    episode: usize,
    step: usize,
    train: &str,
    variant: &str,
    values: &[f64],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(out);
    let mut rec = vec![episode.to_string(), step.to_string(), train.to_string(), variant.to_string()];
    rec.extend(values.iter().map(|v| v.to_string()));
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_rows_skip_current_duplicates() {
        let s = |x: f64| vec![x, x];
        let rows = history_rows(&s(6.0), &[s(1.0), s(2.0), s(3.0), s(4.0), s(5.0)], 3);
        assert_eq!(rows, vec![6.0, 6.0, 5.0, 5.0, 4.0, 4.0]);
        let rows = history_rows(&s(2.0), &[s(1.0), s(2.0)], 3);
        assert_eq!(rows, vec![2.0, 2.0, 1.0, 1.0, 9.0, 9.0]);
        let rows = history_rows(&s(1.0), &[], 3);
        assert_eq!(rows, vec![1.0, 1.0, 9.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn mask_bits_round_trip() {
        for bits in 0..32u8 {
            assert_eq!(ActionMask::from_bits(bits).bits(), bits);
        }
        let m = ActionMask([true, true, true, false, false]);
        assert_eq!(m.to_string(), "[1,1,1,0,0]");
        assert_eq!(m.count(), 3);
    }

    #[test]
    fn encoder_tokens_round_trip() {
        let encs = [
            Encoder::Local(LocalConfig { lf: 5, lb: 2, n_r: 3 }),
            Encoder::LocalHistory(LocalConfig::default(), 3),
            Encoder::Global(GlobalVariant::S5, 12),
        ];
        for e in encs {
            assert_eq!(e.to_string().parse::<Encoder>().unwrap(), e);
        }
        assert!("global:S9:3".parse::<Encoder>().is_err());
    }

    #[test]
    fn length_classes() {
        assert_eq!(length_class(4000.0), 1.0);
        assert_eq!(length_class(4500.0), 2.0);
        assert_eq!(length_class(8000.0), 2.0);
        assert_eq!(length_class(9000.0), 3.0);
    }
}
