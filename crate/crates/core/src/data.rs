//! In-memory datasets and the small synthetic corpora used for offline runs.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Evidence;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataKind {
    /// Values in `{0, 1}`.
    BinaryTabular,
    /// Values in `{0, 1}`, row-major `height x width`.
    BinaryImage { height: usize, width: usize },
    /// Intensities in `0..=255`, row-major `height x width`.
    GrayImage { height: usize, width: usize },
    /// Intensities in `0..=255`, row-major `height x width x 3`.
    RgbImage { height: usize, width: usize },
}

impl DataKind {
    /// Largest representable value; decoder targets are divided by it.
    pub fn max_value(&self) -> u8 {
        match self {
            DataKind::BinaryTabular | DataKind::BinaryImage { .. } => 1,
            DataKind::GrayImage { .. } | DataKind::RgbImage { .. } => 255,
        }
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match *self {
            DataKind::BinaryTabular | DataKind::RgbImage { .. } => None,
            DataKind::BinaryImage { height, width } | DataKind::GrayImage { height, width } => Some((height, width)),
        }
    }
}

/// A matrix of small non-negative integers with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DataKind,
    cols: usize,
    values: Vec<u8>,
    pub labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(kind: DataKind, cols: usize, values: Vec<u8>, labels: Option<Vec<u32>>) -> Result<Self> {
        if cols == 0 || values.is_empty() || !values.len().is_multiple_of(cols) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of {cols}",
                values.len()
            )));
        }
        let expected = match kind {
            DataKind::BinaryTabular => cols,
            DataKind::BinaryImage { height, width } | DataKind::GrayImage { height, width } => height * width,
            DataKind::RgbImage { height, width } => 3 * height * width,
        };
        if expected != cols {
            return Err(Error::invalid(format!("{kind:?} needs {expected} columns, got {cols}")));
        }
        if let Some(v) = values.iter().find(|&&v| v > kind.max_value()) {
            return Err(Error::invalid(format!("value {v} exceeds {}", kind.max_value())));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() / cols {
                return Err(Error::invalid("label count differs from row count"));
            }
        }
        Ok(Self {
            kind,
            cols,
            values,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().max().map_or(0, |m| *m as usize + 1))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            kind: self.kind,
            cols: self.cols,
            values,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Rows whose label satisfies `keep`.
    pub fn filter_labels(&self, keep: impl Fn(u32) -> bool) -> Dataset {
        let idx: Vec<usize> = match &self.labels {
            Some(l) => (0..self.rows()).filter(|&i| keep(l[i])).collect(),
            None => (0..self.rows()).collect(),
        };
        self.subset(&idx)
    }

    /// Raw values as fully observed evidence.
    pub fn evidence<T: Scalar>(&self, idx: &[usize]) -> Evidence<T> {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend(self.row(i).iter().map(|&v| T::c(v as f64)));
        }
        Evidence::observed_rows(idx.len(), self.cols, values).expect("rows have the dataset width")
    }

    /// Values scaled into `[0, 1]`.
    pub fn targets<T: Scalar>(&self, idx: &[usize]) -> Vec<T> {
        let scale = 1.0 / self.kind.max_value() as f64;
        idx.iter()
            .flat_map(|&i| self.row(i).iter().map(move |&v| T::c(v as f64 * scale)))
            .collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.rows()).collect()
    }
}

/// Random mini-batch indices: without replacement when the batch fits,
/// with replacement otherwise.
pub fn sample_batch(rows: usize, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    if batch <= rows {
        index::sample(rng, rows, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..rows)).collect()
    }
}

/// Binary 8x8 images of a two-pixel-thick bar: label 0 is a horizontal bar
/// at one of seven heights, label 1 a vertical bar at one of seven offsets.
/// Every pixel is flipped independently with probability `noise`.
pub fn bars(rows: usize, noise: f64, families: &[u32], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(rows * 64);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let label = families[rng.random_range(0..families.len())];
        let pos = rng.random_range(0..7);
        for r in 0..8 {
            for c in 0..8 {
                let on = match label {
                    0 => r == pos || r == pos + 1,
                    1 => c == pos || c == pos + 1,
                    _ => (r + c) % 2 == pos % 2,
                };
                let flip = rng.random_bool(noise);
                values.push((on ^ flip) as u8);
            }
        }
        labels.push(label);
    }
    Dataset::new(DataKind::BinaryImage { height: 8, width: 8 }, 64, values, Some(labels))
        .expect("generator is consistent")
}

/// Binary data from a mixture of `components` product-of-Bernoulli
/// distributions over `cols` variables; labels are the mixture component.
pub fn bernoulli_mixture(rows: usize, cols: usize, components: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs: Vec<Vec<f64>> = (0..components)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0.75..0.95)
                    } else {
                        rng.random_range(0.05..0.25)
                    }
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(rows * cols);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let k = rng.random_range(0..components);
        values.extend(probs[k].iter().map(|&p| rng.random_bool(p) as u8));
        labels.push(k as u32);
    }
    Dataset::new(DataKind::BinaryTabular, cols, values, Some(labels)).expect("generator is consistent")
}
