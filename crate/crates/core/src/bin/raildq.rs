use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raildq::harness::profile::write_profile_csv;
use raildq::harness::{evaluate, performance_profile, Agent, DelayTable, Trainer, TrainingConfig};
use raildq::instance::Instance;
use raildq::qmodel::ModelFile;
use raildq::topology::{LineLayout, Network};
use raildq::traingen::{fixture, sample_instance, GenerationProfile};

#[derive(Parser)]
#[command(name = "raildq", about = "Single-track train dispatching with Q-learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random instances (and the network they live on) to a directory.
    Generate {
        /// `exp1`, `exp2` or a profile JSON file.
        #[arg(long, default_value = "exp1")]
        profile: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Network file; defaults to a 41-resource synthetic line.
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Train an agent and write the model and the episode log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Greedy evaluation of a model on instance files.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Instance files or directories of them, or `fixture:<name>`.
        #[arg(long, num_args = 1.., required = true)]
        instances: Vec<String>,
        #[arg(long)]
        network: Option<PathBuf>,
        /// Long-format delays `problem,solver,delay`.
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Solver name in the CSV; defaults to the model file stem.
        #[arg(long)]
        solver: Option<String>,
    },
    /// Performance profiles from long-format delay tables.
    Profile {
        #[arg(long = "in-csv", required = true, num_args = 1..)]
        in_csv: Vec<PathBuf>,
        #[arg(long)]
        out_csv: PathBuf,
    },
}

fn default_line() -> Network {
    LineLayout::new(15, 10).build()
}

fn load_network(path: Option<&Path>) -> Result<Option<Network>> {
    path.map(|p| Network::load(p).with_context(|| format!("loading network {}", p.display()))).transpose()
}

fn instance_files(spec: &str) -> Result<Vec<PathBuf>> {
    let p = PathBuf::from(spec);
    if p.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| {
                f.extension().is_some_and(|x| x == "json") && f.file_name().is_some_and(|n| n != "network.json")
            })
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![p])
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { profile, count, seed, out, network } => {
            let profile = GenerationProfile::resolve(&profile)?;
            let net = load_network(network.as_deref())?.unwrap_or_else(default_line);
            fs::create_dir_all(&out)?;
            fs::write(out.join("network.json"), net.to_json_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let width = count.max(1).to_string().len();
            for i in 0..count {
                let mut inst = sample_instance(&profile, &net, &mut rng)?;
                inst.name = format!("{}-{:0width$}", profile.id, i);
                fs::write(out.join(format!("{}.json", inst.name)), inst.to_json_string(&net))?;
            }
            println!("wrote {count} instances to {}", out.display());
        }
        Command::Train { config, network, out_model, log } => {
            let cfg = TrainingConfig::load(&config).with_context(|| format!("loading config {}", config.display()))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let net_arg = load_network(network.as_deref())?;
            let (net, instances) = cfg.resolve_instances(net_arg.as_ref(), base)?;
            let mut trainer = Trainer::new(cfg, &net, &instances)?.with_checkpoint(out_model.clone());
            match log {
                Some(p) => {
                    let mut w = BufWriter::new(fs::File::create(&p)?);
                    trainer.run(Some(&mut w))?;
                }
                None => trainer.run(None)?,
            }
            trainer.agent.to_model_file().save(&out_model)?;
            let best = trainer.records.iter().filter(|r| r.class == raildq::replay::OutcomeClass::Best).count();
            println!(
                "trained {} episodes ({best} best); model written to {}",
                trainer.records.len(),
                out_model.display()
            );
        }
        Command::Evaluate { model, instances, network, out_csv, solver } => {
            let agent = Agent::from_model_file(ModelFile::load(&model)?)?;
            let mut net = load_network(network.as_deref())?;
            let mut insts: Vec<Instance> = Vec::new();
            for spec in &instances {
                if let Some(name) = spec.strip_prefix("fixture:") {
                    let s = fixture(name)?;
                    if !insts.is_empty() || instances.len() > 1 {
                        bail!("fixtures bring their own network and cannot be mixed with other instances");
                    }
                    net = Some(s.network);
                    insts.push(s.instance);
                    continue;
                }
                let Some(n) = net.as_ref() else { bail!("--network is required for instance files") };
                for f in instance_files(spec)? {
                    insts.push(Instance::load(&f, n).with_context(|| format!("loading {}", f.display()))?);
                }
            }
            let net = net.expect("network resolved above");
            let eval = evaluate(&agent, &net, &insts)?;
            let s = &eval.stats;
            let show = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
            println!("minimum {}", show(s.min));
            println!("average {}", show(s.mean));
            println!("maximum {}", show(s.max));
            println!("std dev {}", show(s.std));
            println!("# deadlocks {}", s.deadlocks);
            if let Some(p) = out_csv {
                let name = solver
                    .unwrap_or_else(|| model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
                let table = DelayTable::new(
                    vec![name],
                    eval.runs.iter().map(|r| r.instance.clone()).collect(),
                    vec![eval.runs.iter().map(|r| r.weighted_delay).collect()],
                );
                table.write_long_csv(fs::File::create(&p)?)?;
            }
        }
        Command::Profile { in_csv, out_csv } => {
            let mut cells = BTreeMap::new();
            for p in &in_csv {
                DelayTable::read_long_csv(
                    fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
                    &mut cells,
                )?;
            }
            let curves = performance_profile(&DelayTable::from_cells(&cells))?;
            write_profile_csv(&curves, fs::File::create(&out_csv)?)?;
            for c in &curves {
                println!("{}: rho(1) = {:.3}", c.solver, c.rho(1.0));
            }
        }
    }
    Ok(())
}
