use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::builders::BuilderConfig;
use crate::data::{bars, bernoulli_mixture, Dataset};
use crate::error::{Error, Result};
use crate::eval::SweepConfig;
use crate::nn::{DecoderConfig, EncoderConfig};
use crate::training::TrainConfig;

use super::{binarize, load_debd, load_idx, load_labels};

/// How stored intensities are presented to the models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Integer values as stored; decoder targets are divided by the maximum.
    #[default]
    Counts,
    /// Gray images become binary images: `1` where the value is at least
    /// `threshold`.
    Binarize { threshold: u8 },
}

/// Where a dataset split comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Comma-separated binary rows, with optional one-label-per-line file.
    Debd { path: PathBuf, labels: Option<PathBuf> },
    /// IDX image file with an optional IDX label file.
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
        #[serde(default)]
        normalization: Normalization,
    },
    /// Generated 8×8 bar images.
    Bars {
        rows: usize,
        noise: f64,
        families: Vec<u32>,
        seed: u64,
    },
    /// Generated product-of-Bernoulli mixture.
    Mixture {
        rows: usize,
        cols: usize,
        components: usize,
        seed: u64,
    },
}

impl DataSource {
    /// Loads the split; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        match self {
            DataSource::Debd { path, labels } => {
                let d = load_debd(&at(path))?;
                match labels {
                    Some(l) => attach_labels(d, load_labels(&at(l))?),
                    None => Ok(d),
                }
            }
            DataSource::Idx {
                images,
                labels,
                normalization,
            } => {
                let d = load_idx(&at(images), labels.as_deref().map(at).as_deref())?;
                match normalization {
                    Normalization::Counts => Ok(d),
                    Normalization::Binarize { threshold } => binarize(&d, *threshold),
                }
            }
            DataSource::Bars {
                rows,
                noise,
                families,
                seed,
            } => {
                if !(0.0..=1.0).contains(noise) || families.is_empty() || *rows == 0 {
                    return Err(Error::Config("bars need rows, families and noise in [0, 1]".into()));
                }
                Ok(bars(*rows, *noise, families, *seed))
            }
            DataSource::Mixture {
                rows,
                cols,
                components,
                seed,
            } => {
                if *rows == 0 || *cols == 0 || *components == 0 {
                    return Err(Error::Config("mixture needs rows, columns and components".into()));
                }
                Ok(bernoulli_mixture(*rows, *cols, *components, *seed))
            }
        }
    }
}

fn attach_labels(d: Dataset, labels: Vec<u32>) -> Result<Dataset> {
    Dataset::new(d.kind, d.cols(), d.values().to_vec(), Some(labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: DataSource,
    pub test: Option<DataSource>,
    /// Inputs scored as out-of-distribution by `ood`.
    pub ood: Option<DataSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub builder: BuilderConfig,
    pub decoder: DecoderConfig,
    /// Encoder of the VAE baseline and distillation teacher.
    #[serde(default = "default_encoder")]
    pub encoder: EncoderConfig,
}

fn default_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: vec![64],
        negative_slope: 0.1,
    }
}

/// Everything one experiment needs, kept in a single TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model construction and generated data.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: SweepConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.embedding_dim != m.builder.embedding_dim() {
            return Err(Error::Config(format!(
                "model.embedding_dim = {} but the builder declares {}",
                m.embedding_dim,
                m.builder.embedding_dim()
            )));
        }
        self.train.validate()?;
        self.eval.validate()?;
        self.bench.validate()
    }

    /// Replaces the value at a dotted path such as `train.iterations` with
    /// a TOML literal, then re-validates.
    pub fn set(&mut self, path: &str, literal: &str) -> Result<()> {
        let mut updated = self.clone();
        set_field(&mut updated, path, literal)?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

/// Replaces the field at a dotted path of any TOML-serializable value with
/// a TOML literal; bare words are taken as strings.
pub fn set_field<C: Serialize + DeserializeOwned>(value: &mut C, path: &str, literal: &str) -> Result<()> {
    let mut root = toml::Value::try_from(&*value).map_err(|e| Error::Config(e.to_string()))?;
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one item");
    if last.is_empty() {
        return Err(Error::Config("empty override path".into()));
    }
    let mut node = &mut root;
    for k in parents {
        node = node
            .get_mut(*k)
            .ok_or_else(|| Error::Config(format!("unknown config section '{k}' in '{path}'")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{path}' does not name a field")))?;
    table.insert((*last).to_string(), parse_literal(literal));
    *value = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{path}: {e}")))?;
    Ok(())
}

fn parse_literal(literal: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {literal}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(literal.to_string()))
}
