//! Synthetic benchmark comparing gradient estimators for learning the
//! weights of a single sum unit from one-hot samples of a target
//! categorical distribution.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::eval::{mean_std, worker_pool};
use crate::inference::{gumbel, gumbel_argmax, simple_sample};
use crate::scalar::argmax;
use crate::training::{AdamW, AdamWConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Exact one-hot forward, identity backward onto the unit's weights.
    Simple,
    /// Hard straight-through Gumbel-Softmax at temperature `tau`.
    GumbelSoftmax { tau: f64 },
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Simple => "simple".into(),
            Estimator::GumbelSoftmax { tau } => format!("gumbel-softmax(tau={tau})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Number of sum-unit inputs, one run per entry; the target has as many
    /// categories.
    pub dims: Vec<usize>,
    pub estimators: Vec<Estimator>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Concentration of the symmetric Dirichlet the target is drawn from.
    pub dirichlet_alpha: f64,
    /// Seed of the target distribution, shared by every run of a dimension.
    pub target_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![32, 64, 128, 256],
            estimators: vec![Estimator::Simple, Estimator::GumbelSoftmax { tau: 1.0 }],
            seeds: (0..10).collect(),
            iterations: 1000,
            batch_size: 64,
            lr: 0.01,
            weight_decay: 0.0,
            dirichlet_alpha: 1.0,
            target_seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("every sum unit needs at least two inputs".into()));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.seeds.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config(
                "benchmark needs iterations, a batch, seeds and estimators".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.dirichlet_alpha > 0.0) {
            return Err(Error::Config("learning rate must be >= 0 and alpha > 0".into()));
        }
        for e in &self.estimators {
            if let Estimator::GumbelSoftmax { tau } = e {
                if !(*tau > 0.0) {
                    return Err(Error::Config(format!(
                        "Gumbel-Softmax temperature {tau} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `KL(p || q)` in nats; terms with `p_i = 0` contribute nothing.
pub fn categorical_kld(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Target distribution of a benchmark dimension, drawn from a symmetric
/// Dirichlet as normalized Gamma variates.
pub fn target_distribution(dim: usize, alpha: f64, seed: u64) -> Result<Vec<f64>> {
    let g = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("Dirichlet concentration: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (dim as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    let x: Vec<f64> = (0..dim).map(|_| g.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
    let s: f64 = x.iter().sum();
    Ok(x.into_iter().map(|v| v / s).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Row-wise softmax of `[B, D]` logits on the tape.
fn softmax_rows<'t>(a: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let shape = a.shape();
    let lse = a.logsumexp(Some(1))?.reshape(&[shape[0], 1])?.broadcast_to(&shape)?;
    Ok(a.sub(lse)?.exp())
}

/// One-hot `[B, D]` samples from `theta` (rows of a `[B, D]` tensor) with
/// the estimator's backward rule.
fn one_hot_samples<'t>(theta: Var<'t, f64>, est: Estimator, rng: &mut ChaCha8Rng) -> Result<Var<'t, f64>> {
    match est {
        Estimator::Simple => simple_sample(theta, rng),
        Estimator::GumbelSoftmax { tau } => {
            let shape = theta.shape();
            let g: Vec<f64> = (0..theta.len()).map(|_| gumbel(rng)).collect();
            let g = theta.tape().constant(Array::new(shape.clone(), g)?);
            let y = softmax_rows(theta.log()?.add(g)?.mul_scalar(1.0 / tau))?;
            let d = shape[1];
            let mut hard = vec![0.0; y.len()];
            for (row, out) in y.value().data().chunks(d).zip(hard.chunks_mut(d)) {
                out[argmax(row)] = 1.0;
            }
            y.straight_through(Array::new(shape, hard)?)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub dim: usize,
    pub estimator: Estimator,
    pub seed: u64,
    /// `KL(learned || target)` before training and after every iteration.
    pub kld: Vec<f64>,
}

impl BenchRun {
    pub fn final_kld(&self) -> f64 {
        *self.kld.last().expect("trajectory includes the initial value")
    }
}

/// Gradient of the paired one-hot MSE with respect to the unit's logits for
/// one batch of `batch` target and learned samples.
pub fn batch_gradient(
    log_target: &[f64],
    logits: &[f64],
    est: Estimator,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = logits.len();
    let mut truth = vec![0.0; batch * d];
    for row in truth.chunks_mut(d) {
        row[gumbel_argmax(log_target, rng)] = 1.0;
    }
    let tape = Tape::new();
    let w = tape.param(Array::new(vec![1, d], logits.to_vec())?);
    let theta = softmax_rows(w)?.broadcast_to(&[batch, d])?;
    let s = one_hot_samples(theta, est, rng)?;
    let t = tape.constant(Array::new(vec![batch, d], truth)?);
    s.sub(t)?.square().mean(None)?.backward()?;
    Ok(w.grad().into_data())
}

/// Trains one sum unit from `init_logits` towards `target`.
pub fn train_sum_unit(
    target: &[f64],
    init_logits: &[f64],
    est: Estimator,
    cfg: &BenchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let log_target: Vec<f64> = target.iter().map(|p| p.ln()).collect();
    let mut logits = init_logits.to_vec();
    let mut opt = AdamW::<f64>::new(AdamWConfig::default(), &[logits.len()]);
    let mut traj = Vec::with_capacity(cfg.iterations + 1);
    traj.push(categorical_kld(&softmax(&logits), target));
    for _ in 0..cfg.iterations {
        let g = batch_gradient(&log_target, &logits, est, cfg.batch_size, rng)?;
        opt.begin_step();
        opt.update(0, &mut logits, &g, cfg.lr, cfg.weight_decay);
        traj.push(categorical_kld(&softmax(&logits), target));
    }
    Ok(traj)
}

fn run_one(dim: usize, est: Estimator, seed: u64, cfg: &BenchConfig) -> Result<BenchRun> {
    let target = target_distribution(dim, cfg.dirichlet_alpha, cfg.target_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect();
    let kld = train_sum_unit(&target, &init, est, cfg, &mut rng)?;
    Ok(BenchRun {
        dim,
        estimator: est,
        seed,
        kld,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
}

/// Final-KLD statistics of one `(dim, estimator)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub dim: usize,
    pub estimator: Estimator,
    pub mean: f64,
    pub std: f64,
}

impl BenchReport {
    pub fn final_klds(&self, dim: usize, est: Estimator) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.dim == dim && r.estimator == est)
            .map(BenchRun::final_kld)
            .collect()
    }

    pub fn summary(&self) -> Vec<BenchSummary> {
        let mut out: Vec<BenchSummary> = Vec::new();
        for r in &self.runs {
            if out.iter().any(|s| s.dim == r.dim && s.estimator == r.estimator) {
                continue;
            }
            let (mean, std) = mean_std(&self.final_klds(r.dim, r.estimator));
            out.push(BenchSummary {
                dim: r.dim,
                estimator: r.estimator,
                mean,
                std,
            });
        }
        out
    }

    /// `dim,estimator,seed,iteration,kld` rows for every recorded step.
    pub fn trajectory_table(&self) -> String {
        let mut s = String::from("dim,estimator,seed,iteration,kld\n");
        for r in &self.runs {
            for (i, k) in r.kld.iter().enumerate() {
                writeln!(s, "{},{},{},{},{}", r.dim, r.estimator.name(), r.seed, i, k).unwrap();
            }
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::from("dim,estimator,final_kld_mean,final_kld_std\n");
        for c in self.summary() {
            writeln!(s, "{},{},{},{}", c.dim, c.estimator.name(), c.mean, c.std).unwrap();
        }
        s
    }
}

/// Runs every `(dim, estimator, seed)` combination in parallel; each run
/// owns its random stream, so results do not depend on scheduling.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, Estimator, u64)> = cfg
        .dims
        .iter()
        .flat_map(|&d| {
            cfg.estimators
                .iter()
                .flat_map(move |&e| cfg.seeds.iter().map(move |&s| (d, e, s)))
        })
        .collect();
    let runs = worker_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(d, e, s)| run_one(d, e, s, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport { runs })
}

#[cfg(test)]
mod tests;
