//! Corruption generators, reconstruction and embedding metrics, robustness
//! sweeps and out-of-distribution scoring.

mod corrupt;
mod metrics;
mod ood;
mod probe;
mod report;
mod sweep;

pub use corrupt::{corrupt, dataset_mask, missing_mask, pixel_grid, Corruption, CorruptionSpec, MarPattern};
pub use metrics::{auroc, curve_area, mean_ssim, mean_std, mse, spearman, ssim};
pub use ood::{embedding_scores, ood_histogram, Histogram, OodReport};
pub use probe::{downstream_probe, LogisticRegression, ProbeConfig, Split};
pub use report::{line_plot, ood_table, sweep_table, Series};
pub use sweep::{
    default_levels, robustness_sweep, EmbeddingMode, EvalModel, LevelResult, Metric, MetricStats, SweepConfig,
    SweepData, SweepResult,
};

use crate::error::{Error, Result};

/// Worker threads for parallel evaluation: `APC_THREADS` when set,
/// otherwise one per available core.
pub fn thread_count() -> Result<usize> {
    match std::env::var("APC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "APC_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub(crate) fn worker_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}
