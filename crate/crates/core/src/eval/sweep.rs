use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corrupt::{dataset_mask, Corruption, CorruptionSpec};
use super::metrics::{curve_area, mean_ssim, mean_std, mse};
use super::probe::{downstream_probe, ProbeConfig, Split};
use super::worker_pool;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::Evidence;
use crate::model::Apc;
use crate::nn::Vae;
use crate::scalar::Scalar;

const CHUNK: usize = 256;

/// A trained autoencoder under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum EvalModel<'a, T> {
    /// Missing inputs are marginalized inside the circuit.
    Apc(&'a Apc<T>),
    /// Missing inputs are replaced by zeros.
    Vae(&'a Vae<T>),
}

/// How the circuit encoder turns evidence into an embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// A draw from the conditional embedding distribution.
    #[default]
    Sample,
    /// The max-product state.
    Mpe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Ssim,
    Accuracy,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Ssim => "ssim",
            Metric::Accuracy => "accuracy",
        }
    }
}

impl<T: Scalar> EvalModel<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalModel::Apc(_) => "apc",
            EvalModel::Vae(_) => "vae",
        }
    }

    /// Embeddings of the selected rows with `missing` entries hidden.
    pub fn embed(
        &self,
        data: &Dataset,
        idx: &[usize],
        missing: &[bool],
        mode: EmbeddingMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<T>> {
        let cols = data.cols();
        let mut out = Vec::new();
        for (c, rows) in idx.chunks(CHUNK).enumerate() {
            let miss = &missing[c * CHUNK * cols..(c * CHUNK + rows.len()) * cols];
            let z = match self {
                EvalModel::Apc(m) => {
                    let full = data.evidence::<T>(rows);
                    let observed = miss.iter().map(|m| !m).collect();
                    let e = Evidence::new(rows.len(), cols, full.values().to_vec(), observed)?;
                    match mode {
                        EmbeddingMode::Sample => m.encode(&e, rng)?,
                        EmbeddingMode::Mpe => m.encode_mpe(&e)?,
                    }
                }
                EvalModel::Vae(v) => {
                    let x = data.targets::<T>(rows);
                    let x: Vec<T> = x
                        .iter()
                        .zip(miss)
                        .map(|(&v, &m)| if m { T::zero() } else { v })
                        .collect();
                    v.encode_values(&x, None)?
                }
            };
            out.extend(z);
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        match self {
            EvalModel::Apc(m) => m.decoder.decode_values(z),
            EvalModel::Vae(v) => v.decode_values(z),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            EvalModel::Apc(m) => m.embedding_dim(),
            EvalModel::Vae(v) => v.embedding_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Corruption family; its level is replaced by each grid value.
    pub corruption: Corruption,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
    pub embedding: EmbeddingMode,
    pub probe: ProbeConfig,
}

/// `0.00, 0.05, …, 0.95`.
pub fn default_levels() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            corruption: Corruption::Mcar { p: 0.0 },
            levels: default_levels(),
            seeds: (0..5).collect(),
            metrics: vec![Metric::Mse, Metric::Accuracy],
            embedding: EmbeddingMode::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl SweepConfig {
    /// A single corruption evaluated once per seed.
    pub fn single(corruption: Corruption) -> Self {
        Self {
            corruption,
            levels: vec![corruption.level()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.seeds.is_empty() || self.metrics.is_empty() {
            return Err(Error::Config("sweep needs levels, seeds and metrics".into()));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep levels must increase".into()));
        }
        for &l in &self.levels {
            self.corruption.at_level(l).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    /// One value per seed, in seed order.
    pub values: Vec<f64>,
}

impl MetricStats {
    fn new(values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self { mean, std, values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: f64,
    /// `(metric, stats)` in the configured metric order.
    pub metrics: Vec<(Metric, MetricStats)>,
}

impl LevelResult {
    pub fn get(&self, m: Metric) -> Option<&MetricStats> {
        self.metrics.iter().find(|(k, _)| *k == m).map(|(_, s)| s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub model: String,
    pub corruption: Corruption,
    pub seeds: Vec<u64>,
    pub levels: Vec<LevelResult>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.level).collect()
    }

    /// Per-level means of a metric.
    pub fn curve(&self, m: Metric) -> Option<Vec<f64>> {
        self.levels.iter().map(|l| l.get(m).map(|s| s.mean)).collect()
    }

    /// Mean of a metric over all levels.
    pub fn average(&self, m: Metric) -> Option<f64> {
        let c = self.curve(m)?;
        Some(c.iter().sum::<f64>() / c.len() as f64)
    }

    /// The metric curve of one seed.
    pub fn seed_curve(&self, m: Metric, seed_pos: usize) -> Option<Vec<f64>> {
        self.levels
            .iter()
            .map(|l| l.get(m).map(|s| s.values[seed_pos]))
            .collect()
    }

    /// Trapezoidal area under the mean curve of a metric.
    pub fn area(&self, m: Metric) -> Option<f64> {
        curve_area(&self.grid(), &self.curve(m)?).ok()
    }
}

/// Data the sweep evaluates on. The probe is fitted on `train` embeddings
/// and scored on `test` embeddings, both corrupted at the cell's level.
#[derive(Clone, Copy, Debug)]
pub struct SweepData<'a> {
    pub test: &'a Dataset,
    pub train: Option<&'a Dataset>,
}

fn cell_seed(seed: u64, level: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((level as u64) << 32) ^ stream
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|v| v.f64()).collect()
}

fn labels(d: &Dataset) -> Result<&[u32]> {
    d.labels
        .as_deref()
        .ok_or_else(|| Error::Config("downstream accuracy needs labelled data".into()))
}

fn run_cell<T: Scalar>(
    model: EvalModel<'_, T>,
    data: SweepData<'_>,
    cfg: &SweepConfig,
    level_pos: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let level = cfg.levels[level_pos];
    let corruption = cfg.corruption.at_level(level);
    let test = data.test;
    let idx = test.all_indices();
    let spec = CorruptionSpec {
        corruption,
        seed: cell_seed(seed, level_pos, 0),
    };
    let missing = dataset_mask(test, idx.len(), &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, level_pos, 1));
    let z = model.embed(test, &idx, &missing, cfg.embedding, &mut rng)?;
    let truth = test.targets::<T>(&idx);
    let mut out = Vec::with_capacity(cfg.metrics.len());
    let mut recon = None;
    for m in &cfg.metrics {
        let v = match m {
            Metric::Mse | Metric::Ssim => {
                if recon.is_none() {
                    recon = Some(model.decode(&z)?);
                }
                let r = recon.as_deref().expect("decoded above");
                if *m == Metric::Mse {
                    mse(r, &truth)?
                } else {
                    let (h, w) = test
                        .kind
                        .image_shape()
                        .ok_or_else(|| Error::Config("SSIM needs single-channel image data".into()))?;
                    mean_ssim(r, &truth, h, w)?
                }
            }
            Metric::Accuracy => {
                let train = data
                    .train
                    .ok_or_else(|| Error::Config("downstream accuracy needs a training split".into()))?;
                let tidx = train.all_indices();
                let tspec = CorruptionSpec {
                    corruption,
                    seed: cell_seed(seed, level_pos, 2),
                };
                let tmissing = dataset_mask(train, tidx.len(), &tspec)?;
                let tz = model.embed(train, &tidx, &tmissing, cfg.embedding, &mut rng)?;
                let dim = model.embedding_dim();
                let (tz, z) = (to_f64(&tz), to_f64(&z));
                let probe = ProbeConfig {
                    seed: cell_seed(seed, level_pos, 3),
                    ..cfg.probe.clone()
                };
                downstream_probe(
                    Split {
                        features: &tz,
                        labels: labels(train)?,
                    },
                    Split {
                        features: &z,
                        labels: labels(test)?,
                    },
                    dim,
                    &probe,
                )?
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Corrupts the test inputs at every level and seed, encodes, decodes and
/// scores against the uncorrupted data. Cells run in parallel; results do
/// not depend on the number of threads.
pub fn robustness_sweep<T: Scalar>(
    model: EvalModel<'_, T>,
    data: SweepData<'_>,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    cfg.validate()?;
    let cells: Vec<(usize, u64)> = (0..cfg.levels.len())
        .flat_map(|l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = worker_pool()?;
    let values: Vec<Vec<f64>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(l, s)| run_cell(model, data, cfg, l, s))
            .collect::<Result<_>>()
    })?;
    let ns = cfg.seeds.len();
    let levels = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(l, &level)| LevelResult {
            level,
            metrics: cfg
                .metrics
                .iter()
                .enumerate()
                .map(|(k, &m)| (m, MetricStats::new((0..ns).map(|s| values[l * ns + s][k]).collect())))
                .collect(),
        })
        .collect();
    Ok(SweepResult {
        model: model.name().to_string(),
        corruption: cfg.corruption,
        seeds: cfg.seeds.clone(),
        levels,
    })
}
