//! Files on disk: experiment configs, dataset loaders, checkpoints, images
//! and the small datasets bundled with the repository.

mod checkpoint;
mod config;
mod idx;
mod image;
mod text;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{
    apc_checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, read_header, save_apc, save_vae, unit_line,
    vae_checkpoint_bytes, BlockInfo, Checkpoint, CheckpointHeader, ModelHeader, CHECKPOINT_VERSION,
};
pub use config::{set_field, DataConfig, DataSource, ExperimentConfig, ModelConfig, Normalization};
pub use idx::{binarize, idx_bytes, load_idx, parse_idx};
pub use image::{netpbm_bytes, tile_grid, Channels};
pub use text::{debd_text, labels_text, load_debd, load_labels, parse_debd};

use crate::data::{bars, bernoulli_mixture, Dataset};
use crate::error::Result;

/// Replaces `path` with `bytes` so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// One of the datasets shipped under `data/`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bundled {
    BarsTrain,
    BarsTest,
    NltcsTrain,
    NltcsTest,
}

impl Bundled {
    pub const ALL: [Bundled; 4] = [
        Bundled::BarsTrain,
        Bundled::BarsTest,
        Bundled::NltcsTrain,
        Bundled::NltcsTest,
    ];

    /// Regenerates the dataset from its seed.
    pub fn generate(self) -> Dataset {
        match self {
            Bundled::BarsTrain => bars(2000, 0.05, &[0, 1], 11),
            Bundled::BarsTest => bars(500, 0.05, &[0, 1], 12),
            Bundled::NltcsTrain => bernoulli_mixture(5000, 16, 4, 21).subset(&(0..4000).collect::<Vec<_>>()),
            Bundled::NltcsTest => bernoulli_mixture(5000, 16, 4, 21).subset(&(4000..5000).collect::<Vec<_>>()),
        }
    }

    /// Data file and label file, relative to the data directory.
    pub fn files(self) -> (&'static str, &'static str) {
        match self {
            Bundled::BarsTrain => ("bars/train-images.idx3-ubyte", "bars/train-labels.idx1-ubyte"),
            Bundled::BarsTest => ("bars/test-images.idx3-ubyte", "bars/test-labels.idx1-ubyte"),
            Bundled::NltcsTrain => ("nltcs/nltcs.train.data", "nltcs/nltcs.train.labels"),
            Bundled::NltcsTest => ("nltcs/nltcs.test.data", "nltcs/nltcs.test.labels"),
        }
    }

    pub fn load(self, data_dir: &Path) -> Result<Dataset> {
        let (d, l) = self.files();
        match self {
            Bundled::BarsTrain | Bundled::BarsTest => load_idx(&data_dir.join(d), Some(&data_dir.join(l))),
            Bundled::NltcsTrain | Bundled::NltcsTest => {
                let x = load_debd(&data_dir.join(d))?;
                Dataset::new(
                    x.kind,
                    x.cols(),
                    x.values().to_vec(),
                    Some(load_labels(&data_dir.join(l))?),
                )
            }
        }
    }

    /// Writes the generated dataset to its files under `data_dir`.
    pub fn write(self, data_dir: &Path) -> Result<()> {
        let d = self.generate();
        let (df, lf) = self.files();
        let labels = d.labels.clone().expect("bundled data is labelled");
        match self {
            Bundled::BarsTrain | Bundled::BarsTest => {
                let (h, w) = d.kind.image_shape().expect("bars are images");
                write_atomic(&data_dir.join(df), &idx_bytes(&[d.rows(), h, w], d.values()))?;
                let l: Vec<u8> = labels.iter().map(|&v| v as u8).collect();
                write_atomic(&data_dir.join(lf), &idx_bytes(&[l.len()], &l))
            }
            Bundled::NltcsTrain | Bundled::NltcsTest => {
                write_atomic(&data_dir.join(df), debd_text(&d).as_bytes())?;
                write_atomic(&data_dir.join(lf), labels_text(&labels).as_bytes())
            }
        }
    }
}
