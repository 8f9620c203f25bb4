//! One dispatching episode driven by an agent.

use crate::encoding::{fingerprint, ActionMask, Encoder, LocalConfig, N_ACTIONS};
use crate::error::{Error, Result};
use crate::harness::{Agent, RewardScheme};
use crate::instance::{Instance, TrainId};
use crate::qmodel::{EpsilonGreedy, QFunction};
use crate::replay::{build_q_target, deferred_hold_reward, step_reward, Experience, OutcomeClass, REWARD_DEADLOCK};
use crate::simcore::{EpisodeOutcome, SimOptions, SimState, Step, StepKind, ACTION_HOLD};
use crate::topology::Network;

/// A decision the agent actually took (forced moves are not kept).
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub train: TrainId,
    pub state: Vec<f64>,
    pub mask: ActionMask,
    pub action: u8,
    /// Network outputs when the decision was taken.
    pub q: [f64; N_ACTIONS],
    pub clock_s: f64,
    /// Scaled per-step reward, settled for holds when the train is next handled.
    pub reward: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EpisodeRun {
    pub outcome: EpisodeOutcome,
    pub decisions: Vec<Decision>,
    pub forced_moves: usize,
}

/// Simulator options for running `inst` with `encoder`: the automatic-move
/// window follows the encoder's local window.
pub fn sim_options(encoder: &Encoder, inst: &Instance) -> SimOptions {
    let cfg = match encoder {
        Encoder::Local(c) | Encoder::LocalHistory(c, _) => *c,
        Encoder::Global(..) => LocalConfig::for_instance(inst),
    };
    SimOptions { lf: cfg.lf, lb: cfg.lb, ..SimOptions::default() }
}

struct PendingHold {
    decision: usize,
    clock_s: f64,
    cumulative: f64,
}

pub fn run_episode(agent: &Agent, net: &Network, inst: &Instance, policy: &mut EpsilonGreedy) -> Result<EpisodeRun> {
    run_episode_with(agent, net, inst, policy, sim_options(&agent.encoder, inst))
}

pub fn run_episode_with(
    agent: &Agent,
    net: &Network,
    inst: &Instance,
    policy: &mut EpsilonGreedy,
    options: SimOptions,
) -> Result<EpisodeRun> {
    agent.check_dims(net)?;
    let mut sim = SimState::new(net, inst, options)?;
    let mut history: Vec<Vec<Vec<f64>>> = vec![Vec::new(); inst.len()];
    let mut pending: Vec<Option<PendingHold>> = (0..inst.len()).map(|_| None).collect();
    let mut decisions = Vec::new();
    let mut forced_moves = 0;
    let settle = |decisions: &mut Vec<Decision>, pending: &mut Option<PendingHold>, clock: f64| {
        if let Some(p) = pending.take() {
            let w = inst.train(decisions[p.decision].train).weight;
            decisions[p.decision].reward = Some(deferred_hold_reward(p.clock_s, clock, w, p.cumulative));
        }
    };
    let outcome = loop {
        let step = sim.next_decision()?;
        let (train, mask) = match step {
            Step::Terminal(o) => break o,
            Step::Auto { train, .. } => {
                settle(&mut decisions, &mut pending[train.index()], sim.clock());
                continue;
            }
            Step::Request { train, mask } => (train, mask),
        };
        settle(&mut decisions, &mut pending[train.index()], sim.clock());
        let state = agent.encoder.encode(&sim, train, &history[train.index()])?;
        let fp = fingerprint(&state);
        let q = agent.model.q_values(&state)?;
        let forced = sim.forced_move_check(train, fp);
        let action = if forced {
            (1..N_ACTIONS as u8).find(|&a| mask.allowed(a)).ok_or(Error::EmptyMask)?
        } else {
            policy.select(&q, mask)?
        };
        let cumulative = sim.produced_weighted_delay();
        let clock = sim.clock();
        let kind = if forced { StepKind::Forced } else { StepKind::Decided };
        sim.apply_decision(train, action, fp, kind)?;
        if let Some(row) = agent.encoder.history_row(&state) {
            history[train.index()].push(row);
        }
        if forced {
            forced_moves += 1;
            continue;
        }
        let reward = if action == ACTION_HOLD {
            pending[train.index()] = Some(PendingHold { decision: decisions.len(), clock_s: clock, cumulative });
            None
        } else {
            Some(step_reward(cumulative, sim.produced_weighted_delay() - cumulative))
        };
        decisions.push(Decision { train, state, mask, action, q, clock_s: clock, reward });
    };
    for p in pending.iter_mut() {
        settle(&mut decisions, p, outcome.end_clock_s);
    }
    Ok(EpisodeRun { outcome, decisions, forced_moves })
}

/// Turns an episode's decisions into experiences with settled targets.
pub fn settle_experiences(
    run: &EpisodeRun,
    class: OutcomeClass,
    scheme: RewardScheme,
    encoder: &Encoder,
    gamma: f64,
    model: &dyn QFunction,
    episode: usize,
) -> Result<Vec<Experience>> {
    let base: Vec<Experience> = run
        .decisions
        .iter()
        .filter(|d| d.mask.count() >= 2)
        .map(|d| Experience {
            state: d.state.clone(),
            mask: d.mask,
            action: d.action,
            y_target: d.q,
            episode,
            train: d.train,
        })
        .collect();
    match scheme {
        RewardScheme::TerminalClass => {
            Ok(crate::replay::assign_terminal_rewards(base, class, &run.outcome.deadlocked_trains))
        }
        RewardScheme::PerStepDelay => {
            let kept: Vec<&Decision> = run.decisions.iter().filter(|d| d.mask.count() >= 2).collect();
            let deadlock = class == OutcomeClass::Deadlock;
            let mut out = Vec::with_capacity(kept.len());
            for (i, (d, mut e)) in kept.iter().zip(base).enumerate() {
                // Successor: the next decision overall for whole-line states, the train's own next one otherwise.
                let next = if encoder.is_global() {
                    kept.get(i + 1).copied()
                } else {
                    kept[i + 1..].iter().copied().find(|n| n.train == d.train)
                };
                let reward = d.reward.unwrap_or(0.0);
                let y = match next {
                    Some(n) => build_q_target(reward, Some((&n.state, n.mask)), gamma, model)?,
                    None if deadlock && run.outcome.deadlocked_trains.contains(&d.train) => REWARD_DEADLOCK,
                    None => reward,
                };
                if !y.is_finite() {
                    return Err(Error::NonFiniteLoss(y));
                }
                e.y_target[d.action as usize] = y;
                out.push(e);
            }
            Ok(out)
        }
    }
}
