//! Q-function approximators, action selection and model files.

pub mod deep;
pub mod linear;
pub mod policy;

use std::fs;
use std::path::Path;

use crate::encoding::{ActionMask, N_ACTIONS};
use crate::error::{Error, Result};

pub use deep::DeepQ;
pub use linear::LinearQ;
pub use policy::{greedy_action, EpsilonGreedy};

pub const MODEL_MAGIC: &str = "raildq-model";
pub const MODEL_VERSION: &str = "v1";

/// One training example: the encoded state, its target q-vector and the
/// mask selecting which outputs take part in the loss.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub state: &'a [f64],
    pub target: [f64; N_ACTIONS],
    pub mask: ActionMask,
}

pub trait QFunction {
    fn input_dim(&self) -> usize;
    fn q_values(&self, x: &[f64]) -> Result<[f64; N_ACTIONS]>;
    /// One update on `batch`; returns the loss before the update.
    fn train_step(&mut self, batch: &[Sample]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Deep(DeepQ),
    Linear(LinearQ),
}

impl QFunction for Model {
    fn input_dim(&self) -> usize {
        match self {
            Model::Deep(m) => m.input_dim(),
            Model::Linear(m) => m.input_dim(),
        }
    }

    fn q_values(&self, x: &[f64]) -> Result<[f64; N_ACTIONS]> {
        match self {
            Model::Deep(m) => m.q_values(x),
            Model::Linear(m) => m.q_values(x),
        }
    }

    fn train_step(&mut self, batch: &[Sample]) -> Result<f64> {
        match self {
            Model::Deep(m) => m.train_step(batch),
            Model::Linear(m) => m.train_step(batch),
        }
    }
}

/// A model together with the token describing how its inputs are produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub variant: String,
    pub model: Model,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::ModelFormat(format!("bad number `{s}`")))
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.model {
            Model::Deep(net) => {
                let dims: Vec<String> = net.sizes().iter().map(|d| d.to_string()).collect();
                out.push_str(&format!("{MODEL_MAGIC} {MODEL_VERSION} {} {}\n", self.variant, dims.join(",")));
                out.push_str(&format!("lr {}\n", fmt_f64(net.lr)));
                for l in &net.layers {
                    for tensor in [&l.w, &l.b] {
                        let line: Vec<String> = tensor.iter().map(|&v| fmt_f64(v)).collect();
                        out.push_str(&line.join(" "));
                        out.push('\n');
                    }
                }
            }
            Model::Linear(table) => {
                out.push_str(&format!("{MODEL_MAGIC} {MODEL_VERSION} {} table:{}\n", self.variant, table.input_dim()));
                out.push_str(&format!("lr {}\n", fmt_f64(table.lr)));
                for (key, q) in table.sorted_entries() {
                    let k: Vec<String> = key.iter().map(|v| v.to_string()).collect();
                    let v: Vec<String> = q.iter().map(|&x| fmt_f64(x)).collect();
                    out.push_str(&format!("{}:{}\n", k.join(","), v.join(" ")));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ModelFile> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty model file"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != MODEL_MAGIC {
            return Err(bad("missing model header"));
        }
        if header[1] != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version `{}`", header[1])));
        }
        let variant = header[2].to_string();
        let lr_line = lines.next().ok_or_else(|| bad("missing learning rate"))?;
        let lr = match lr_line.split_once(' ') {
            Some(("lr", v)) => parse_f64(v)?,
            _ => return Err(bad("missing learning rate")),
        };
        if let Some(dim) = header[3].strip_prefix("table:") {
            let dim: usize = dim.parse().map_err(|_| bad("bad table dimension"))?;
            let mut table = LinearQ::new(dim, lr);
            for line in lines.filter(|l| !l.trim().is_empty()) {
                let (k, v) = line.split_once(':').ok_or_else(|| bad("bad table row"))?;
                let key: Vec<i32> = if k.is_empty() {
                    Vec::new()
                } else {
                    k.split(',').map(|x| x.parse().map_err(|_| bad("bad table key"))).collect::<Result<_>>()?
                };
                let vals: Vec<f64> = v.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
                if vals.len() != N_ACTIONS {
                    return Err(Error::Dimension { expected: N_ACTIONS, got: vals.len() });
                }
                let mut q = [0.0; N_ACTIONS];
                q.copy_from_slice(&vals);
                table.insert(key, q);
            }
            return Ok(ModelFile { variant, model: Model::Linear(table) });
        }
        let sizes: Vec<usize> =
            header[3].split(',').map(|d| d.parse().map_err(|_| bad("bad layer sizes"))).collect::<Result<_>>()?;
        if sizes.len() < 2 {
            return Err(bad("bad layer sizes"));
        }
        let mut net = DeepQ::zeros(&sizes, lr);
        for l in &mut net.layers {
            for tensor in [&mut l.w, &mut l.b] {
                let line = lines.next().ok_or_else(|| bad("truncated parameters"))?;
                let vals: Vec<f64> = line.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
                if vals.len() != tensor.len() {
                    return Err(Error::Dimension { expected: tensor.len(), got: vals.len() });
                }
                tensor.copy_from_slice(&vals);
            }
        }
        Ok(ModelFile { variant, model: Model::Deep(net) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        ModelFile::from_text(&fs::read_to_string(path)?)
    }
}
