use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::inference::Evidence;
use crate::scalar::Scalar;

/// Structured region masks. Each pattern covers a fraction of the image that
/// grows linearly with severity, from nothing at 0 to everything at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarPattern {
    LeftBand,
    RightBand,
    TopBand,
    BottomBand,
    CenterSquare,
    BorderFrame,
    HorizontalBands,
    VerticalBands,
}

impl MarPattern {
    pub const ALL: [MarPattern; 8] = [
        MarPattern::LeftBand,
        MarPattern::RightBand,
        MarPattern::TopBand,
        MarPattern::BottomBand,
        MarPattern::CenterSquare,
        MarPattern::BorderFrame,
        MarPattern::HorizontalBands,
        MarPattern::VerticalBands,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MarPattern::LeftBand => "left-band",
            MarPattern::RightBand => "right-band",
            MarPattern::TopBand => "top-band",
            MarPattern::BottomBand => "bottom-band",
            MarPattern::CenterSquare => "center-square",
            MarPattern::BorderFrame => "border-frame",
            MarPattern::HorizontalBands => "horizontal-bands",
            MarPattern::VerticalBands => "vertical-bands",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown MAR pattern '{s}'")))
    }

    /// Missing-entry mask (`true` = missing) for an `height × width` grid.
    pub fn mask(&self, height: usize, width: usize, severity: f64) -> Vec<bool> {
        let mut out = vec![false; height * width];
        let count = |n: usize| (severity * n as f64).round() as usize;
        // `k` of `n` lines spread evenly: line `i` is hit when the rounded
        // running total steps up.
        let spread = |i: usize| {
            let at = |t: usize| (severity * t as f64 + 0.5).floor() as usize;
            at(i + 1) > at(i)
        };
        let inner = |frac: f64| {
            let side = frac.max(0.0).sqrt();
            let h = (side * height as f64).round() as usize;
            let w = (side * width as f64).round() as usize;
            let top = (height - h) / 2;
            let left = (width - w) / 2;
            move |y: usize, x: usize| y >= top && y < top + h && x >= left && x < left + w
        };
        let center = inner(severity);
        let keep = inner(1.0 - severity);
        for y in 0..height {
            for x in 0..width {
                out[y * width + x] = match self {
                    MarPattern::LeftBand => x < count(width),
                    MarPattern::RightBand => x >= width - count(width),
                    MarPattern::TopBand => y < count(height),
                    MarPattern::BottomBand => y >= height - count(height),
                    MarPattern::CenterSquare => center(y, x),
                    MarPattern::BorderFrame => !keep(y, x),
                    MarPattern::HorizontalBands => spread(y),
                    MarPattern::VerticalBands => spread(x),
                };
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    /// Every entry independently missing with probability `p`.
    Mcar {
        p: f64,
    },
    Mar {
        pattern: MarPattern,
        severity: f64,
    },
}

impl Corruption {
    /// Parses `mcar:<p>` or `mar:<pattern>:<severity>`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::invalid(format!("'{v}' is not a number in corruption '{s}'")))
        };
        let c = match parts.as_slice() {
            ["mcar", p] => Corruption::Mcar { p: num(p)? },
            ["mar", pattern, severity] => Corruption::Mar {
                pattern: MarPattern::parse(pattern)?,
                severity: num(severity)?,
            },
            _ => {
                return Err(Error::invalid(format!(
                    "corruption '{s}' is not mcar:<p> or mar:<pattern>:<severity>"
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match self {
            Corruption::Mcar { p } => ("MCAR fraction", *p),
            Corruption::Mar { severity, .. } => ("MAR severity", *severity),
        };
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// The same corruption at another level.
    pub fn at_level(&self, level: f64) -> Self {
        match *self {
            Corruption::Mcar { .. } => Corruption::Mcar { p: level },
            Corruption::Mar { pattern, .. } => Corruption::Mar {
                pattern,
                severity: level,
            },
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            Corruption::Mcar { p } => p,
            Corruption::Mar { severity, .. } => severity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub corruption: Corruption,
    pub seed: u64,
}

/// Missing-entry mask for `rows` samples laid out as `height × width`.
/// MAR masks repeat the same region for every row and ignore the seed.
pub fn missing_mask(spec: &CorruptionSpec, rows: usize, height: usize, width: usize) -> Result<Vec<bool>> {
    spec.corruption.validate()?;
    Ok(match spec.corruption {
        Corruption::Mcar { p } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..rows * height * width).map(|_| rng.random_bool(p)).collect()
        }
        Corruption::Mar { pattern, severity } => pattern.mask(height, width, severity).repeat(rows),
    })
}

/// Pixel grid `(height, width, channels)` of a dataset; tabular rows are
/// `1 × cols` images.
pub fn pixel_grid(kind: DataKind, cols: usize) -> (usize, usize, usize) {
    match kind {
        DataKind::BinaryTabular => (1, cols, 1),
        DataKind::BinaryImage { height, width } | DataKind::GrayImage { height, width } => (height, width, 1),
        DataKind::RgbImage { height, width } => (height, width, 3),
    }
}

/// Missing-entry mask for the selected rows; a dropped pixel hides all of
/// its channels.
pub fn dataset_mask(data: &Dataset, rows: usize, spec: &CorruptionSpec) -> Result<Vec<bool>> {
    let (h, w, ch) = pixel_grid(data.kind, data.cols());
    let pixels = missing_mask(spec, rows, h, w)?;
    Ok(pixels.iter().flat_map(|&m| std::iter::repeat_n(m, ch)).collect())
}

/// Evidence for the selected rows with corrupted entries marked missing.
pub fn corrupt<T: Scalar>(data: &Dataset, idx: &[usize], spec: &CorruptionSpec) -> Result<Evidence<T>> {
    let missing = dataset_mask(data, idx.len(), spec)?;
    let e = data.evidence::<T>(idx);
    let observed: Vec<bool> = missing.iter().map(|m| !m).collect();
    Evidence::new(idx.len(), data.cols(), e.values().to_vec(), observed)
}
