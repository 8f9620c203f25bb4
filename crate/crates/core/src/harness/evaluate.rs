//! Greedy evaluation over test instances.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::episode::run_episode;
use crate::harness::Agent;
use crate::instance::Instance;
use crate::qmodel::EpsilonGreedy;
use crate::simcore::TerminalClass;
use crate::topology::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub instance: String,
    pub class: TerminalClass,
    /// `None` for deadlocks.
    pub weighted_delay: Option<f64>,
    pub seconds: f64,
}

/// Moments of the weighted delay over non-deadlocked runs.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayStats {
    pub min: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub deadlocks: usize,
}

impl DelayStats {
    pub fn from_delays(delays: &[Option<f64>]) -> Self {
        let ok: Vec<f64> = delays.iter().flatten().copied().collect();
        let deadlocks = delays.len() - ok.len();
        if ok.is_empty() {
            return DelayStats { min: None, mean: None, max: None, std: None, deadlocks };
        }
        let n = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / n;
        let var = ok.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        DelayStats {
            min: ok.iter().copied().reduce(f64::min),
            mean: Some(mean),
            max: ok.iter().copied().reduce(f64::max),
            std: Some(var.sqrt()),
            deadlocks,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub runs: Vec<EvalRun>,
    pub stats: DelayStats,
}

/// One greedy episode per instance, in parallel.
pub fn evaluate(agent: &Agent, net: &Network, instances: &[Instance]) -> Result<Evaluation> {
    let runs: Vec<EvalRun> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let started = Instant::now();
            let mut policy = EpsilonGreedy::greedy(i as u64);
            let run = run_episode(agent, net, inst, &mut policy)?;
            let name = if inst.name.is_empty() { format!("p{i}") } else { inst.name.clone() };
            Ok(EvalRun {
                instance: name,
                class: run.outcome.class,
                weighted_delay: run.outcome.weighted_delay,
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let delays: Vec<Option<f64>> = runs.iter().map(|r| r.weighted_delay).collect();
    Ok(Evaluation { stats: DelayStats::from_delays(&delays), runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_three() {
        let s = DelayStats::from_delays(&[Some(10.0), Some(20.0), Some(30.0)]);
        assert_eq!((s.min, s.mean, s.max), (Some(10.0), Some(20.0), Some(30.0)));
        assert!((s.std.unwrap() - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.deadlocks, 0);
    }

    #[test]
    fn all_deadlocks() {
        let s = DelayStats::from_delays(&[None, None]);
        assert_eq!(s, DelayStats { min: None, mean: None, max: None, std: None, deadlocks: 2 });
    }
}
