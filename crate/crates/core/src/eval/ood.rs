use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::auroc;
use super::sweep::{EmbeddingMode, EvalModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::log_embedding_marginal;
use crate::model::Apc;
use crate::scalar::Scalar;

/// Counts of two score samples over shared, equally wide bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing bin edges.
    pub edges: Vec<f64>,
    pub in_counts: Vec<usize>,
    pub out_counts: Vec<usize>,
}

impl Histogram {
    pub fn new(a: &[f64], b: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let count = |xs: &[f64]| {
            let mut c = vec![0; bins];
            for &x in xs {
                let k = (((x - lo) / width) as usize).min(bins - 1);
                c[k] += 1;
            }
            c
        };
        Self {
            edges,
            in_counts: count(a),
            out_counts: count(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    /// `log p(z)` of each in-distribution input's embedding.
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
    /// Probability that an in-distribution input scores above an outlier.
    pub auroc: f64,
    pub histogram: Histogram,
}

/// Embedding log-likelihood of every row: encode, then score the embedding
/// under the circuit's marginal over embedding variables.
pub fn embedding_scores<T: Scalar>(model: &Apc<T>, data: &Dataset, mode: EmbeddingMode, seed: u64) -> Result<Vec<f64>> {
    let idx = data.all_indices();
    let missing = vec![false; idx.len() * data.cols()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = EvalModel::Apc(model).embed(data, &idx, &missing, mode, &mut rng)?;
    let scores: Vec<f64> = log_embedding_marginal(&model.circuit, &z)?
        .iter()
        .map(|v| v.f64())
        .collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("embedding log-likelihood of row {i}")));
    }
    Ok(scores)
}

pub fn ood_histogram<T: Scalar>(
    model: &Apc<T>,
    in_data: &Dataset,
    ood_data: &Dataset,
    mode: EmbeddingMode,
    bins: usize,
    seed: u64,
) -> Result<OodReport> {
    let in_scores = embedding_scores(model, in_data, mode, seed)?;
    let out_scores = embedding_scores(model, ood_data, mode, seed.wrapping_add(1))?;
    let auroc = auroc(&in_scores, &out_scores)?;
    let histogram = Histogram::new(&in_scores, &out_scores, bins);
    Ok(OodReport {
        in_scores,
        out_scores,
        auroc,
        histogram,
    })
}
