//! Performance profiles over a solvers × problems table of weighted delays.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Delays per solver and problem; `None` marks a failure (deadlock).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayTable {
    pub solvers: Vec<String>,
    pub problems: Vec<String>,
    /// `delays[s][p]`
    pub delays: Vec<Vec<Option<f64>>>,
}

impl DelayTable {
    pub fn new(solvers: Vec<String>, problems: Vec<String>, delays: Vec<Vec<Option<f64>>>) -> Self {
        DelayTable { solvers, problems, delays }
    }

    /// Reads long-format CSV `problem,solver,delay`; an empty, `inf` or
    /// `deadlock` delay is a failure. Missing cells are failures too.
    pub fn read_long_csv<R: Read>(input: R, into: &mut BTreeMap<(String, String), Option<f64>>) -> Result<()> {
        let mut r = csv::Reader::from_reader(input);
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Schema("delay rows need problem,solver,delay".into()));
            }
            let d = rec[2].trim();
            let delay = match d {
                "" | "inf" | "deadlock" => None,
                v => Some(v.parse::<f64>().map_err(|_| Error::Schema(format!("bad delay `{v}`")))?),
            };
            into.insert((rec[1].to_string(), rec[0].to_string()), delay);
        }
        Ok(())
    }

    pub fn from_cells(cells: &BTreeMap<(String, String), Option<f64>>) -> Self {
        let mut solvers: Vec<String> = cells.keys().map(|k| k.0.clone()).collect();
        solvers.dedup();
        let mut problems: Vec<String> = cells.keys().map(|k| k.1.clone()).collect();
        problems.sort();
        problems.dedup();
        let delays = solvers
            .iter()
            .map(|s| problems.iter().map(|p| cells.get(&(s.clone(), p.clone())).copied().flatten()).collect())
            .collect();
        DelayTable { solvers, problems, delays }
    }

    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["problem", "solver", "delay"])?;
        for (s, row) in self.solvers.iter().zip(&self.delays) {
            for (p, d) in self.problems.iter().zip(row) {
                w.write_record([p.as_str(), s.as_str(), &d.map(|v| v.to_string()).unwrap_or_default()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileCurve {
    pub solver: String,
    /// Sorted (τ, ρ(τ)) breakpoints of the step function.
    pub points: Vec<(f64, f64)>,
}

impl ProfileCurve {
    /// ρ(τ): share of problems solved within factor τ of the best.
    pub fn rho(&self, tau: f64) -> f64 {
        self.points.iter().take_while(|(t, _)| *t <= tau).last().map_or(0.0, |p| p.1)
    }
}

/// Ratio of each delay to the per-problem best. If any per-problem best is
/// zero, every delay is first shifted by one second.
pub fn ratios(table: &DelayTable) -> Vec<Vec<f64>> {
    let n_p = table.problems.len();
    let mins: Vec<Option<f64>> =
        (0..n_p).map(|p| table.delays.iter().filter_map(|row| row[p]).reduce(f64::min)).collect();
    let shift = if mins.iter().flatten().any(|&m| m <= 0.0) { 1.0 } else { 0.0 };
    table
        .delays
        .iter()
        .map(|row| {
            (0..n_p)
                .map(|p| match (row[p], mins[p]) {
                    (Some(d), Some(m)) => (d + shift) / (m + shift),
                    _ => f64::INFINITY,
                })
                .collect()
        })
        .collect()
}

pub fn performance_profile(table: &DelayTable) -> Result<Vec<ProfileCurve>> {
    if table.solvers.is_empty() || table.problems.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n_p = table.problems.len() as f64;
    Ok(ratios(table)
        .into_iter()
        .zip(&table.solvers)
        .map(|(mut r, solver)| {
            r.sort_by(f64::total_cmp);
            let mut points: Vec<(f64, f64)> = Vec::new();
            for (i, &tau) in r.iter().enumerate() {
                if !tau.is_finite() {
                    break;
                }
                let rho = (i + 1) as f64 / n_p;
                match points.last_mut() {
                    Some(last) if last.0 == tau => last.1 = rho,
                    _ => points.push((tau, rho)),
                }
            }
            ProfileCurve { solver: solver.clone(), points }
        })
        .collect())
}

pub fn write_profile_csv<W: Write>(curves: &[ProfileCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["solver", "tau", "rho"])?;
    for c in curves {
        for (tau, rho) in &c.points {
            w.write_record([c.solver.clone(), tau.to_string(), rho.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
