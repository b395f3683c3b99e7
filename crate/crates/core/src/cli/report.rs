use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{csv_err, mean_and_se, SweepRow};
use crate::error::{Error, Result};

/// One (method, ε) cell of the robustness report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub env: String,
    pub method: String,
    pub attack: String,
    pub eps: f64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_err: f64,
    /// Certification rate at `eps`; empty for methods without certificates.
    pub acr: Option<f64>,
}

pub const REPORT_HEADER: [&str; 8] = ["env", "method", "attack", "eps", "episodes", "mean_reward", "std_err", "acr"];

impl EvalRow {
    pub fn from_sweep(method: &str, row: &SweepRow) -> Self {
        Self {
            env: row.env.clone(),
            method: method.to_string(),
            attack: row.attack.clone(),
            eps: row.eps,
            episodes: row.episodes,
            mean_reward: row.mean_reward,
            std_err: row.std_err,
            acr: None,
        }
    }
}

pub fn write_report_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.method.clone(),
            r.attack.clone(),
            r.eps.to_string(),
            r.episodes.to_string(),
            r.mean_reward.to_string(),
            r.std_err.to_string(),
            r.acr.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<EvalRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Per-episode returns behind a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub method: String,
    pub eps: f64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub total_return: f64,
}

pub fn write_episodes_csv<W: Write>(out: W, method: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "eps", "episode", "return"]).map_err(csv_err)?;
    for r in rows {
        for (i, ret) in r.returns.iter().enumerate() {
            w.write_record([method.to_string(), r.eps.to_string(), i.to_string(), ret.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes_csv<R: Read>(input: R) -> Result<Vec<EpisodeRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Mean and standard error per (method, ε) recomputed from episode rows,
/// in first-appearance order.
pub fn summarize_episodes(rows: &[EpisodeRow]) -> Vec<(String, f64, f64, f64)> {
    let mut groups: Vec<(String, f64, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g.0 == r.method && g.1.to_bits() == r.eps.to_bits()) {
            Some(g) => g.2.push(r.total_return),
            None => groups.push((r.method.clone(), r.eps, vec![r.total_return])),
        }
    }
    groups
        .into_iter()
        .map(|(m, e, v)| {
            let (mean, se) = mean_and_se(&v);
            (m, e, mean, se)
        })
        .collect()
}

/// Sweep summary rows as written by [`crate::adversary::write_sweep_csv`].
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SweepCsvRow {
    pub env: String,
    pub attack: String,
    pub eps: f64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_err: f64,
    pub flip_rate: f64,
    pub mean_margin: f64,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepCsvRow>> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Metadata kept out of the CSVs so that those stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
    pub unix_time: u64,
}
