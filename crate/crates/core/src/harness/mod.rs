//! Episode, training and evaluation loops.

pub mod config;
pub mod episode;
pub mod evaluate;
pub mod profile;
pub mod training;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::Encoder;
use crate::error::{Error, Result};
use crate::qmodel::{deep, linear, DeepQ, LinearQ, Model, ModelFile, QFunction};
use crate::replay::OutcomeClass;
use crate::simcore::{EpisodeOutcome, TerminalClass};
use crate::topology::Network;

pub use config::TrainingConfig;
pub use episode::{run_episode, Decision, EpisodeRun};
pub use evaluate::{evaluate, DelayStats, Evaluation};
pub use profile::{performance_profile, DelayTable, ProfileCurve};
pub use training::{train, EpisodeRecord, Trainer};

/// Episodes within this factor of the best weighted delay found count as best.
pub const BEST_RATIO: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Linear,
    DecentralizedDeep,
    CentralizedDeep,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Linear => "linear",
            AgentKind::DecentralizedDeep => "decentralized_deep",
            AgentKind::CentralizedDeep => "centralized_deep",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            AgentKind::Linear => linear::DEFAULT_LR,
            _ => deep::DEFAULT_LR,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AgentKind::Linear, AgentKind::DecentralizedDeep, AgentKind::CentralizedDeep]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown agent `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// One reward per episode from its best/normal/deadlock class.
    TerminalClass,
    /// Scaled weighted delay per decision with bootstrapped targets.
    PerStepDelay,
}

/// A dispatch agent: how states are encoded and the Q-function reading them.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub kind: AgentKind,
    pub encoder: Encoder,
    pub model: Model,
}

impl Agent {
    pub fn new(kind: AgentKind, encoder: Encoder, net: &Network, lr: f64, seed: u64) -> Self {
        let dim = encoder.dim(net);
        let model = match kind {
            AgentKind::Linear => Model::Linear(LinearQ::new(dim, lr)),
            _ => {
                let mut m = DeepQ::new(dim, seed);
                m.lr = lr;
                Model::Deep(m)
            }
        };
        Agent { kind, encoder, model }
    }

    pub fn variant(&self) -> String {
        format!("{}+{}", self.kind, self.encoder)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile { variant: self.variant(), model: self.model.clone() }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Agent> {
        let (kind, enc) = file
            .variant
            .split_once('+')
            .ok_or_else(|| Error::ModelFormat(format!("bad model variant `{}`", file.variant)))?;
        let kind: AgentKind = kind.parse()?;
        let encoder: Encoder = enc.parse()?;
        let agent = Agent { kind, encoder, model: file.model };
        match (&agent.model, kind) {
            (Model::Linear(_), AgentKind::Linear)
            | (Model::Deep(_), AgentKind::DecentralizedDeep | AgentKind::CentralizedDeep) => Ok(agent),
            _ => Err(Error::ModelFormat(format!("model body does not match agent `{kind}`"))),
        }
    }

    /// Checks that the encoder output fits the model input on `net`.
    pub fn check_dims(&self, net: &Network) -> Result<()> {
        let dim = self.encoder.dim(net);
        if dim != self.model.input_dim() {
            return Err(Error::Dimension { expected: self.model.input_dim(), got: dim });
        }
        Ok(())
    }
}

/// Running minimum of feasible weighted delays.
#[derive(Clone, Debug, Default)]
pub struct Classifier {
    pub best_delay: Option<f64>,
}

impl Classifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Class of `outcome`; the flag is true when the running minimum strictly improved.
    pub fn classify(&mut self, outcome: &EpisodeOutcome) -> (OutcomeClass, bool) {
        match (outcome.class, outcome.weighted_delay) {
            (TerminalClass::Deadlock, _) | (_, None) => (OutcomeClass::Deadlock, false),
            (_, Some(d)) => self.classify_delay(d),
        }
    }

    pub fn classify_delay(&mut self, delay: f64) -> (OutcomeClass, bool) {
        match self.best_delay {
            None => {
                self.best_delay = Some(delay);
                (OutcomeClass::Best, true)
            }
            Some(min) if delay < min => {
                self.best_delay = Some(delay);
                (OutcomeClass::Best, true)
            }
            Some(min) if delay <= BEST_RATIO * min => (OutcomeClass::Best, false),
            Some(_) => (OutcomeClass::Normal, false),
        }
    }
}
