//! Multi-seed aggregation of metric logs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{load_config, RunConfig};
use super::metrics::{read_metrics, MetricRecord, RecordKind};
use super::train::run_training;
use crate::error::{Error, Result};

/// Outcome of one seed, derived from its metric records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Mean eval return over the final 10% of training steps.
    pub final_return: f64,
    /// First step at which an eval return exceeded the threshold.
    pub steps_to_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub critics: usize,
    pub actors: usize,
    pub suspension_period: Option<u64>,
    pub seeds: Vec<SeedSummary>,
    pub mean_return: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std_return: f64,
    pub solved: usize,
    /// Mean steps-to-threshold over solving seeds; `None` if no seed solved.
    pub mean_steps_to_threshold: Option<f64>,
}

/// Summarizes one seed's records. Eval records are preferred; if a run has
/// none, training-episode returns are used instead.
pub fn summarize_seed(seed: u64, records: &[MetricRecord], total_steps: u64, threshold: f64) -> SeedSummary {
    let evals: Vec<&MetricRecord> = records
        .iter()
        .filter(|r| r.seed == seed && r.kind == RecordKind::Eval)
        .collect();
    let pool: Vec<&MetricRecord> = if evals.is_empty() {
        records
            .iter()
            .filter(|r| r.seed == seed && r.kind == RecordKind::Train)
            .collect()
    } else {
        evals.clone()
    };
    let cutoff = total_steps - total_steps / 10;
    let mut tail: Vec<f64> = pool.iter().filter(|r| r.step > cutoff).map(|r| r.ret).collect();
    if tail.is_empty() {
        tail.extend(pool.last().map(|r| r.ret));
    }
    let final_return = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    SeedSummary {
        seed,
        final_return,
        steps_to_threshold: evals.iter().find(|r| r.ret > threshold).map(|r| r.step),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize_variant(cfg: &RunConfig, seeds: Vec<SeedSummary>) -> VariantSummary {
    let returns: Vec<f64> = seeds.iter().map(|s| s.final_return).collect();
    let (mean_return, std_return) = mean_std(&returns);
    let hits: Vec<f64> = seeds.iter().filter_map(|s| s.steps_to_threshold).map(|s| s as f64).collect();
    VariantSummary {
        name: cfg.run.name.clone(),
        critics: cfg.agent.critics,
        actors: cfg.agent.actors,
        suspension_period: cfg.agent.suspension_period,
        solved: hits.len(),
        mean_steps_to_threshold: (!hits.is_empty()).then(|| mean_std(&hits).0),
        seeds,
        mean_return,
        std_return,
    }
}

/// Trains every seed of every config, then aggregates from the written logs.
pub fn run_sweep(configs: &[RunConfig], out: &Path) -> Result<Vec<VariantSummary>> {
    if configs.is_empty() {
        return Err(Error::usage("sweep needs at least one configuration"));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        let mut seeds = Vec::new();
        for &seed in &cfg.run.seeds {
            let outputs = run_training(cfg, seed, out)?;
            let records = read_metrics(&outputs.metrics)?;
            seeds.push(summarize_seed(seed, &records, cfg.run.total_steps, cfg.run.threshold));
        }
        rows.push(summarize_variant(cfg, seeds));
    }
    write_tables(&rows, out)?;
    Ok(rows)
}

/// Expands a glob into sorted config paths and loads them.
pub fn load_configs(pattern: &str) -> Result<Vec<(PathBuf, RunConfig)>> {
    let paths = glob::glob(pattern).map_err(|e| Error::usage(format!("bad glob `{pattern}`: {e}")))?;
    let mut paths: Vec<PathBuf> = paths.filter_map(|p| p.ok()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::usage(format!("no configuration files match `{pattern}`")));
    }
    paths
        .into_iter()
        .map(|p| load_config(&p).map(|c| (p, c)))
        .collect()
}

pub fn summary_table(rows: &[VariantSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<4} {:<20} {:>3} {:>3} {:>3} {:>18} {:>8} {:>14}", "No.", "Algorithm", "M", "K", "S", "Return", "Solved", "Steps-to-thr");
    for (i, r) in rows.iter().enumerate() {
        let s_col = r.suspension_period.map_or("-".to_string(), |p| p.to_string());
        let steps = r
            .mean_steps_to_threshold
            .map_or("not reached".to_string(), |v| format!("{v:.0}"));
        let _ = writeln!(
            s,
            "{:<4} {:<20} {:>3} {:>3} {:>3} {:>18} {:>8} {:>14}",
            i + 1,
            r.name,
            r.critics,
            r.actors,
            s_col,
            format!("{:.2} ± {:.2}", r.mean_return, r.std_return),
            format!("{}/{}", r.solved, r.seeds.len()),
            steps
        );
    }
    s
}

fn write_tables(rows: &[VariantSummary], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let json = out.join("summary.json");
    let text = serde_json::to_string_pretty(rows).expect("summaries always encode");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let txt = out.join("summary.txt");
    std::fs::write(&txt, summary_table(rows)).map_err(|e| Error::io(&txt, e))
}
