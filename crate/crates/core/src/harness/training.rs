//! The training loop.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::harness::episode::{run_episode, settle_experiences};
use crate::harness::{Agent, Classifier, TrainingConfig};
use crate::instance::Instance;
use crate::qmodel::{EpsilonGreedy, QFunction, Sample};
use crate::replay::{OutcomeClass, ReplayMemory};
use crate::topology::Network;

pub const LOG_HEADER: &str = "episode,class,weighted_delay,epsilon,loss,ms";

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub class: OutcomeClass,
    pub weighted_delay: Option<f64>,
    pub epsilon: f64,
    pub loss: f64,
    pub ms: f64,
}

impl EpisodeRecord {
    /// The CSV row without the trailing wall-time column.
    pub fn deterministic_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode,
            self.class,
            self.weighted_delay.map(|d| d.to_string()).unwrap_or_default(),
            self.epsilon,
            self.loss
        )
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:.3}", self.deterministic_row(), self.ms)
    }
}

/// Per-window counts of (best, normal, deadlock).
pub fn window_counts(records: &[EpisodeRecord], window: usize) -> Vec<[usize; 3]> {
    records
        .chunks(window.max(1))
        .map(|c| {
            let mut n = [0; 3];
            for r in c {
                match r.class {
                    OutcomeClass::Best => n[0] += 1,
                    OutcomeClass::Normal => n[1] += 1,
                    OutcomeClass::Deadlock => n[2] += 1,
                }
            }
            n
        })
        .collect()
}

pub struct Trainer<'a> {
    pub config: TrainingConfig,
    pub agent: Agent,
    pub memory: ReplayMemory,
    pub policy: EpsilonGreedy,
    pub classifier: Classifier,
    pub records: Vec<EpisodeRecord>,
    net: &'a Network,
    instances: &'a [Instance],
    rng: ChaCha8Rng,
    checkpoint: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainingConfig, net: &'a Network, instances: &'a [Instance]) -> Result<Self> {
        config.validate()?;
        let encoder = config.encoder(instances)?;
        let agent = Agent::new(config.agent, encoder, net, config.lr(), config.seed);
        let e = &config.epsilon;
        let policy = EpsilonGreedy::with_schedule(e.initial, e.divisor, e.floor, config.seed ^ 0x5eed_0001);
        let memory = ReplayMemory::new(config.memory_mode()?);
        Ok(Trainer {
            agent,
            memory,
            policy,
            classifier: Classifier::new(),
            records: Vec::new(),
            net,
            instances,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002),
            checkpoint: None,
            config,
        })
    }

    /// Saves the model here on the configured cadence and before aborting on a bad loss.
    pub fn with_checkpoint(mut self, path: PathBuf) -> Self {
        self.checkpoint = Some(path);
        self
    }

    fn save_checkpoint(&self) -> Result<()> {
        if let Some(p) = &self.checkpoint {
            self.agent.to_model_file().save(p)?;
        }
        Ok(())
    }

    pub fn run_one(&mut self) -> Result<EpisodeRecord> {
        let started = Instant::now();
        let episode = self.records.len();
        let inst = if self.instances.len() == 1 {
            &self.instances[0]
        } else {
            &self.instances[self.rng.gen_range(0..self.instances.len())]
        };
        let epsilon = self.policy.epsilon;
        let run = run_episode(&self.agent, self.net, inst, &mut self.policy)?;
        let (class, improved) = self.classifier.classify(&run.outcome);
        if improved {
            self.memory.clear_best();
        }
        let experiences = settle_experiences(
            &run,
            class,
            self.config.reward(),
            &self.agent.encoder,
            self.config.gamma,
            &self.agent.model,
            episode,
        )?;
        for e in experiences {
            self.memory.store(e, class, &mut self.rng);
        }
        let mut loss = 0.0;
        for _ in 0..self.config.train_steps_per_episode {
            let batch: Vec<Sample> = self.memory.sample(&mut self.rng).into_iter().map(|e| e.sample()).collect();
            if batch.is_empty() {
                break;
            }
            loss = match self.agent.model.train_step(&batch) {
                Ok(l) => l,
                Err(e) => {
                    self.save_checkpoint()?;
                    return Err(e);
                }
            };
        }
        self.policy.decay();
        let record = EpisodeRecord {
            episode,
            class,
            weighted_delay: run.outcome.weighted_delay,
            epsilon,
            loss,
            ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.records.push(record.clone());
        if self.config.checkpoint_every > 0 && (episode + 1).is_multiple_of(self.config.checkpoint_every) {
            self.save_checkpoint()?;
        }
        Ok(record)
    }

    /// Runs all configured episodes, appending each record to `log` as it completes.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<()> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        for _ in 0..self.config.episodes {
            let r = self.run_one()?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", r.csv_row())?;
            }
        }
        if let Some(w) = log {
            w.flush()?;
        }
        Ok(())
    }
}

/// Trains an agent from scratch; returns it with the episode log.
pub fn train(
    config: TrainingConfig,
    net: &Network,
    instances: &[Instance],
    log: Option<&mut dyn Write>,
) -> Result<(Agent, Vec<EpisodeRecord>)> {
    let mut t = Trainer::new(config, net, instances)?;
    t.run(log)?;
    Ok((t.agent, t.records))
}
