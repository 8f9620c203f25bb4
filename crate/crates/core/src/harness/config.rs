//! Training configuration documents.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Encoder, GlobalVariant, LocalConfig, DEFAULT_HISTORY_DEPTH};
use crate::error::{Error, Result};
use crate::harness::{AgentKind, RewardScheme};
use crate::instance::Instance;
use crate::qmodel::policy::{DECAY_DIVISOR, EPSILON_FLOOR};
use crate::replay::{MemoryMode, MemoryRule};
use crate::topology::Network;
use crate::traingen::{fixture, sample_instance, GenerationProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    #[serde(default = "one")]
    pub initial: f64,
    #[serde(default = "default_divisor")]
    pub divisor: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn one() -> f64 {
    1.0
}

fn default_divisor() -> f64 {
    DECAY_DIVISOR
}

fn default_floor() -> f64 {
    EPSILON_FLOOR
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { initial: 1.0, divisor: DECAY_DIVISOR, floor: EPSILON_FLOOR }
    }
}

/// Randomly generated training instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub profile: String,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub agent: AgentKind,
    /// `local`, `local:lf:lb:nr`, `history`, `history:lf:lb:nr:depth` or `S0`..`S5`.
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub reward: Option<RewardScheme>,
    /// `tripartite:<rule>`, `bounded_single` or `bounded_triple:<rule>`.
    #[serde(default = "default_memory")]
    pub memory: String,
    pub episodes: usize,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Save the model every this many episodes (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "one_usize")]
    pub train_steps_per_episode: usize,
    /// One-hot width of whole-line states; defaults to the largest training instance.
    #[serde(default)]
    pub max_trains: Option<usize>,
    /// A named fixture; it brings its own network.
    #[serde(default)]
    pub fixture: Option<String>,
    /// Instance files, relative to the configuration file.
    #[serde(default)]
    pub instances: Vec<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateSpec>,
}

fn default_memory() -> String {
    "tripartite:12".into()
}

fn default_window() -> usize {
    1000
}

fn one_usize() -> usize {
    1
}

impl TrainingConfig {
    pub fn new(agent: AgentKind, episodes: usize, seed: u64) -> Self {
        TrainingConfig {
            agent,
            state: None,
            reward: None,
            memory: default_memory(),
            episodes,
            gamma: 1.0,
            lr: None,
            epsilon: EpsilonSchedule::default(),
            seed,
            checkpoint_every: 0,
            window: default_window(),
            train_steps_per_episode: 1,
            max_trains: None,
            fixture: None,
            instances: Vec::new(),
            generate: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: TrainingConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schema(m.to_string()));
        self.memory_mode()?;
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return bad("gamma must lie in [0, 1]");
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return bad("lr must be positive");
            }
        }
        let e = &self.epsilon;
        if !(e.initial <= 1.0 && e.initial >= e.floor && e.floor >= 0.0 && e.divisor >= 1.0) {
            return bad("epsilon schedule needs floor <= initial <= 1 and divisor >= 1");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.reward() == RewardScheme::PerStepDelay && self.agent == AgentKind::Linear {
            return bad("the per-step delay reward needs a deep agent");
        }
        Ok(())
    }

    pub fn reward(&self) -> RewardScheme {
        self.reward.unwrap_or(match self.agent {
            AgentKind::CentralizedDeep => RewardScheme::PerStepDelay,
            _ => RewardScheme::TerminalClass,
        })
    }

    pub fn memory_mode(&self) -> Result<MemoryMode> {
        self.memory.parse()
    }

    pub fn rule(&self) -> Option<MemoryRule> {
        match self.memory_mode().ok()? {
            MemoryMode::Tripartite(r) | MemoryMode::BoundedTriple(r) => Some(r),
            MemoryMode::BoundedSingle => None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.agent.default_lr())
    }

    /// Encoder for this configuration on the given training instances.
    pub fn encoder(&self, instances: &[Instance]) -> Result<Encoder> {
        let auto_local = || instances.iter().map(LocalConfig::for_instance).max_by_key(|c| c.lf).unwrap_or_default();
        let n_t = self.max_trains.unwrap_or_else(|| instances.iter().map(|i| i.len()).max().unwrap_or(1));
        let default = match self.agent {
            AgentKind::CentralizedDeep => "S5",
            _ => "local",
        };
        let spec = self.state.as_deref().unwrap_or(default);
        match spec {
            "local" => Ok(Encoder::Local(auto_local())),
            "history" => Ok(Encoder::LocalHistory(auto_local(), DEFAULT_HISTORY_DEPTH)),
            s if s.starts_with("local:") || s.starts_with("history:") => {
                s.parse().map_err(|_| Error::Schema(format!("bad state `{s}`")))
            }
            s => Ok(Encoder::Global(s.parse::<GlobalVariant>()?, n_t)),
        }
    }

    /// The network and training instances named by this configuration.
    pub fn resolve_instances(&self, network: Option<&Network>, base: &Path) -> Result<(Network, Vec<Instance>)> {
        if let Some(name) = &self.fixture {
            let s = fixture(name)?;
            return Ok((s.network, vec![s.instance]));
        }
        let net = network
            .ok_or_else(|| Error::Schema("a network is required unless the config names a fixture".into()))?
            .clone();
        let mut out = Vec::new();
        for p in &self.instances {
            out.push(Instance::load(base.join(p), &net)?);
        }
        if let Some(g) = &self.generate {
            let profile = GenerationProfile::resolve(&g.profile)?;
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            for _ in 0..g.count {
                out.push(sample_instance(&profile, &net, &mut rng)?);
            }
        }
        if out.is_empty() {
            return Err(Error::Schema("the config names no training instances".into()));
        }
        Ok((net, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let c = TrainingConfig::from_json_str(
            r#"{"agent": "decentralized_deep", "episodes": 10, "fixture": "second-instance"}"#,
        )
        .unwrap();
        assert_eq!(c.reward(), RewardScheme::TerminalClass);
        assert_eq!(c.rule().unwrap().id, 12);
        assert_eq!(c.lr(), 0.01);
        let (_, inst) = c.resolve_instances(None, Path::new(".")).unwrap();
        assert_eq!(c.encoder(&inst).unwrap(), Encoder::Local(LocalConfig { lf: 5, lb: 2, n_r: 3 }));
    }

    #[test]
    fn centralized_defaults_to_s5_and_per_step() {
        let c = TrainingConfig::from_json_str(
            r#"{"agent": "centralized_deep", "episodes": 1, "fixture": "second-instance"}"#,
        )
        .unwrap();
        assert_eq!(c.reward(), RewardScheme::PerStepDelay);
        let (_, inst) = c.resolve_instances(None, Path::new(".")).unwrap();
        assert_eq!(c.encoder(&inst).unwrap(), Encoder::Global(GlobalVariant::S5, 3));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(TrainingConfig::from_json_str(r#"{"agent": "linear", "episodes": 1, "bogus": 1}"#).is_err());
        assert!(
            TrainingConfig::from_json_str(r#"{"agent": "linear", "episodes": 1, "memory": "tripartite:10"}"#).is_err()
        );
        assert!(
            TrainingConfig::from_json_str(r#"{"agent": "linear", "episodes": 1, "reward": "per_step_delay"}"#).is_err()
        );
    }
}
