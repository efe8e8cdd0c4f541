use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::sample_batch;
use crate::error::{Error, Result};
use crate::training::Schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Standardize every feature with training-set statistics first.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            iterations: 5000,
            lr: 0.05,
            seed: 0,
            standardize: true,
        }
    }
}

/// Labelled feature rows, `features` row-major with `dim` columns.
#[derive(Clone, Copy, Debug)]
pub struct Split<'a> {
    pub features: &'a [f64],
    pub labels: &'a [u32],
}

impl Split<'_> {
    fn check(&self, dim: usize) -> Result<()> {
        if dim == 0 || self.features.len() != self.labels.len() * dim || self.labels.is_empty() {
            return Err(Error::invalid(format!(
                "{} features do not match {} labels of dimension {dim}",
                self.features.len(),
                self.labels.len()
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe features".into()));
        }
        Ok(())
    }
}

/// Multinomial logistic regression trained by minibatch SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub dim: usize,
    pub classes: usize,
    /// `[dim, classes]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl LogisticRegression {
    pub fn fit(train: Split<'_>, dim: usize, cfg: &ProbeConfig) -> Result<Self> {
        train.check(dim)?;
        let classes = *train.labels.iter().max().expect("non-empty") as usize + 1;
        let first = train.labels[0];
        if train.labels.iter().all(|&l| l == first) {
            return Err(Error::invalid("probe labels contain a single class"));
        }
        let rows = train.labels.len();
        let (shift, scale) = if cfg.standardize {
            feature_stats(train.features, dim)
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };
        let mut m = Self {
            dim,
            classes,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
            shift,
            scale,
        };
        let x: Vec<f64> = m.transform(train.features);
        let schedule = Schedule::new(cfg.iterations);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gw = vec![0.0; dim * classes];
        let mut gb = vec![0.0; classes];
        let mut p = vec![0.0; classes];
        for step in 0..cfg.iterations {
            let idx = sample_batch(rows, cfg.batch_size, &mut rng);
            gw.fill(0.0);
            gb.fill(0.0);
            for &i in &idx {
                let xi = &x[i * dim..(i + 1) * dim];
                m.probabilities_into(xi, &mut p);
                p[train.labels[i] as usize] -= 1.0;
                for (k, &pk) in p.iter().enumerate() {
                    gb[k] += pk;
                    for (j, &xj) in xi.iter().enumerate() {
                        gw[j * classes + k] += xj * pk;
                    }
                }
            }
            let lr = cfg.lr * schedule.factor(step) / idx.len() as f64;
            for (w, g) in m.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
            for (b, g) in m.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
        }
        Ok(m)
    }

    fn transform(&self, features: &[f64]) -> Vec<f64> {
        features
            .chunks(self.dim)
            .flat_map(|r| {
                r.iter()
                    .zip(&self.shift)
                    .zip(&self.scale)
                    .map(|((v, s), c)| (v - s) / c)
            })
            .collect()
    }

    fn probabilities_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias[k]
                + x.iter()
                    .enumerate()
                    .map(|(j, v)| v * self.weights[j * self.classes + k])
                    .sum::<f64>();
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o /= s;
        }
    }

    pub fn predict(&self, features: &[f64]) -> Vec<u32> {
        let x = self.transform(features);
        let mut p = vec![0.0; self.classes];
        x.chunks(self.dim)
            .map(|r| {
                self.probabilities_into(r, &mut p);
                crate::scalar::argmax(&p) as u32
            })
            .collect()
    }

    pub fn accuracy(&self, test: Split<'_>) -> Result<f64> {
        test.check(self.dim)?;
        let pred = self.predict(test.features);
        let hits = pred.iter().zip(test.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / test.labels.len() as f64)
    }
}

fn feature_stats(x: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (x.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for r in x.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / rows;
        }
    }
    let mut var = vec![0.0; dim];
    for r in x.chunks(dim) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / rows;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

/// Test accuracy of a logistic-regression probe fitted on frozen features.
pub fn downstream_probe(train: Split<'_>, test: Split<'_>, dim: usize, cfg: &ProbeConfig) -> Result<f64> {
    LogisticRegression::fit(train, dim, cfg)?.accuracy(test)
}
