//! Multi-seed runs, the ablation table and low-resource sweeps.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::stats::{mean_std, relative_improvement};
use super::train::{prepare, train_on, TrainReport};
use crate::error::{Error, Result};
use crate::mixup::{MinMode, Policy};

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    RandOp,
    MaxOp,
    Amp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::RandOp, Variant::MaxOp, Variant::Amp];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::RandOp => "+RandOp",
            Variant::MaxOp => "+MaxOp",
            Variant::Amp => "AMP",
        }
    }

    /// `config` with the policy fields this variant prescribes.
    pub fn apply(self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        (c.mix.policy, c.mix.min_mode) = match self {
            Variant::Baseline => (Policy::None, MinMode::Compare),
            Variant::RandOp => (Policy::Mixup, MinMode::Compare),
            Variant::MaxOp => (Policy::Amp, MinMode::AlwaysPerturbed),
            Variant::Amp => (Policy::Amp, MinMode::Compare),
        };
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub outcome: std::result::Result<TrainReport, String>,
}

impl RunRecord {
    pub fn test_error(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.test_error)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    /// Against the first row of the table.
    pub rp_percent: Option<f64>,
    pub failures: usize,
}

/// Trains every labelled config on every seed of the first config.
///
/// Runs are independent and execute in parallel; the data split of a seed
/// is shared by all labels. Results come back ordered by label, then seed.
pub fn run_grid(configs: &[(String, ExperimentConfig)]) -> Result<Vec<RunRecord>> {
    let first = &configs
        .first()
        .ok_or_else(|| Error::config("no configurations to run"))?
        .1;
    for (_, c) in configs {
        c.validate()?;
    }
    let seeds = first.seeds.clone();
    let data: Vec<_> = seeds
        .par_iter()
        .map(|&s| prepare(first, s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(c, s)| {
            let (label, cfg) = &configs[c];
            let outcome = train_on(cfg, &data[s], seeds[s])
                .map(|(_, r)| r)
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("{label} seed {}: {e}", seeds[s]);
            }
            RunRecord {
                label: label.clone(),
                seed: seeds[s],
                outcome,
            }
        })
        .collect())
}

/// Runs `config` under each policy.
pub fn run_seeds(config: &ExperimentConfig, policies: &[Policy]) -> Result<Vec<RunRecord>> {
    let configs: Vec<_> = policies
        .iter()
        .map(|&p| {
            let mut c = config.clone();
            c.mix.policy = p;
            (p.name().to_string(), c)
        })
        .collect();
    run_grid(&configs)
}

/// Mean, sample std and RP against the first label, in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<Summary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    let mut out: Vec<Summary> = Vec::new();
    for label in labels {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.label == label).collect();
        let errs: Vec<f64> = rows.iter().filter_map(|r| r.test_error()).collect();
        let (mean, std) = mean_std(&errs);
        let rp_percent = match out.first() {
            None => Some(0.0),
            Some(base) => relative_improvement(base.mean, mean),
        };
        out.push(Summary {
            label: label.to_string(),
            mean,
            std,
            rp_percent,
            failures: rows.len() - errs.len(),
        });
    }
    out
}

/// The four ablation variants on every seed.
pub fn ablate(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let configs: Vec<_> = Variant::ALL
        .iter()
        .map(|v| (v.label().to_string(), v.apply(config)))
        .collect();
    run_grid(&configs)
}

#[derive(Clone, Debug)]
pub struct LowResRow {
    pub ratio: f64,
    pub records: Vec<RunRecord>,
    pub summary: Vec<Summary>,
}

/// Repeats a policy comparison at every subsample ratio.
pub fn lowres(config: &ExperimentConfig, ratios: &[f64], policies: &[Policy]) -> Result<Vec<LowResRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            let mut c = config.clone();
            c.subsample_ratio = ratio;
            let records = run_seeds(&c, policies)?;
            let summary = summarize(&records);
            Ok(LowResRow {
                ratio,
                records,
                summary,
            })
        })
        .collect()
}

/// Paired per-seed test errors of two labels, matched by seed.
pub fn paired_errors(records: &[RunRecord], a: &str, b: &str) -> Vec<(u64, f64, f64)> {
    records
        .iter()
        .filter(|r| r.label == a)
        .filter_map(|ra| {
            let rb = records.iter().find(|r| r.label == b && r.seed == ra.seed)?;
            Some((ra.seed, ra.test_error()?, rb.test_error()?))
        })
        .collect()
}

pub fn write_runs_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "seed", "test_error"]).map_err(csv_err)?;
    for r in records {
        let err = r.test_error().map_or("NaN".to_string(), |e| e.to_string());
        w.write_record([r.label.clone(), r.seed.to_string(), err]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(e.to_string()))
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "mean", "std", "rp_percent"]).map_err(csv_err)?;
    for s in rows {
        let rp = s.rp_percent.map_or(String::new(), |v| format!("{v:.1}"));
        w.write_record([s.label.clone(), format!("{:.4}", s.mean), format!("{:.4}", s.std), rp])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}
