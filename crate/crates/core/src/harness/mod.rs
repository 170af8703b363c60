//! Training runs, evaluation, sweeps and inference.

mod config;
mod inference;
mod metrics;
mod sweep;
mod train;

pub use config::{load_config, LogFormat, ReplayConfig, RunConfig, RunSettings, PRESETS};
pub use inference::{run_inference, EvalReport, StepLog};
pub use metrics::{read_metrics, MetricRecord, MetricWriter, RecordKind};
pub use sweep::{load_configs, run_sweep, summarize_seed, summarize_variant, summary_table, SeedSummary, VariantSummary};
pub use train::{run_training, seed_dir, RunOutputs, StepOutcome, Trainer};

#[cfg(test)]
mod tests;
