//! Structure generators for encoder circuits.
//!
//! [`build_tabular`] produces a random balanced region graph over the joint
//! list of data and embedding variables. [`build_convpc`] produces a
//! layered image circuit in which each embedding variable is attached to a
//! random pixel at the lowest layer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, CircuitBuilder, CircuitMeta, LeafFamily};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn default_depth() -> usize {
    4
}
fn default_one() -> usize {
    1
}
fn default_channels() -> usize {
    32
}
fn default_leaf_channels() -> usize {
    256
}
fn default_bernoulli() -> LeafFamily {
    LeafFamily::Bernoulli
}
fn default_binomial() -> LeafFamily {
    LeafFamily::Binomial { n: 255 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    pub num_data_vars: usize,
    pub embedding_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_one")]
    pub repetitions: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_bernoulli")]
    pub data_leaf: LeafFamily,
}

impl TabularConfig {
    pub fn new(num_data_vars: usize, embedding_dim: usize) -> Self {
        Self {
            num_data_vars,
            embedding_dim,
            depth: default_depth(),
            repetitions: 1,
            channels: default_channels(),
            data_leaf: default_bernoulli(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.num_data_vars + self.embedding_dim < 2 {
            return Err(Error::Config("a tabular circuit needs at least two variables".into()));
        }
        if self.depth < 1 || self.repetitions < 1 || self.channels < 1 {
            return Err(Error::Config("depth, repetitions and channels must be positive".into()));
        }
        if self.data_leaf == LeafFamily::Gaussian {
            return Err(Error::Config("data leaves must be Bernoulli or Binomial".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvPcConfig {
    pub height: usize,
    pub width: usize,
    pub embedding_dim: usize,
    #[serde(default = "default_leaf_channels")]
    pub leaf_channels: usize,
    /// Sum layers halve the channel count down to this floor.
    #[serde(default = "default_channels")]
    pub min_channels: usize,
    #[serde(default = "default_binomial")]
    pub pixel_leaf: LeafFamily,
}

impl ConvPcConfig {
    pub fn new(height: usize, width: usize, embedding_dim: usize) -> Self {
        Self {
            height,
            width,
            embedding_dim,
            leaf_channels: default_leaf_channels(),
            min_channels: default_channels(),
            pixel_leaf: default_binomial(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config("image height and width must be at least 2".into()));
        }
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(Error::Config(format!(
                "image size {}x{} is not a power of two; pad first",
                self.height, self.width
            )));
        }
        if self.embedding_dim > self.height * self.width {
            return Err(Error::Config(format!(
                "{} embedding variables exceed {} pixels",
                self.embedding_dim,
                self.height * self.width
            )));
        }
        if self.leaf_channels < 1 || self.min_channels < 1 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.pixel_leaf == LeafFamily::Gaussian {
            return Err(Error::Config("pixel leaves must be Bernoulli or Binomial".into()));
        }
        Ok(())
    }

    /// Output channels of every sum layer, bottom to top.
    pub fn sum_layer_channels(&self) -> Vec<usize> {
        let layers = self.height.max(self.width).trailing_zeros() as usize;
        let mut out = Vec::with_capacity(layers);
        let mut c = self.leaf_channels;
        for l in 0..layers {
            c = if l + 1 == layers {
                1
            } else {
                (c / 2).max(self.min_channels.min(c))
            };
            out.push(c);
        }
        out
    }
}

/// Either builder's configuration, as stored in experiment files and
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuilderConfig {
    Tabular(TabularConfig),
    Convpc(ConvPcConfig),
}

impl BuilderConfig {
    pub fn embedding_dim(&self) -> usize {
        match self {
            BuilderConfig::Tabular(c) => c.embedding_dim,
            BuilderConfig::Convpc(c) => c.embedding_dim,
        }
    }

    pub fn num_data_vars(&self) -> usize {
        match self {
            BuilderConfig::Tabular(c) => c.num_data_vars,
            BuilderConfig::Convpc(c) => c.height * c.width,
        }
    }

    pub fn build<T: Scalar>(&self, rng: &mut impl Rng) -> Result<Circuit<T>> {
        match self {
            BuilderConfig::Tabular(c) => build_tabular(c, rng),
            BuilderConfig::Convpc(c) => build_convpc(c, rng),
        }
    }
}

fn meta(cfg: BuilderConfig) -> CircuitMeta {
    CircuitMeta {
        embedding_dim: cfg.embedding_dim(),
        builder: serde_json::to_string(&cfg).expect("configs serialize"),
    }
}

struct Tabular<'a> {
    b: CircuitBuilder,
    cfg: &'a TabularConfig,
}

impl Tabular<'_> {
    fn leaf(&mut self, var: usize) -> usize {
        let family = if var < self.cfg.num_data_vars {
            self.cfg.data_leaf
        } else {
            LeafFamily::Gaussian
        };
        self.b.input(var, family)
    }

    /// `channels` units over `vars`; for the top region, the products feeding the root.
    fn region(&mut self, vars: &[usize], depth_left: usize, top: bool) -> Vec<usize> {
        let c = self.cfg.channels;
        if vars.len() == 1 {
            return (0..c).map(|_| self.leaf(vars[0])).collect();
        }
        if depth_left == 0 {
            let per_var: Vec<Vec<usize>> = vars.iter().map(|&v| (0..c).map(|_| self.leaf(v)).collect()).collect();
            return (0..c)
                .map(|k| self.b.product(per_var.iter().map(|leaves| leaves[k]).collect()))
                .collect();
        }
        let mid = vars.len() / 2;
        let left = self.region(&vars[..mid], depth_left - 1, false);
        let right = self.region(&vars[mid..], depth_left - 1, false);
        let mut prods = Vec::with_capacity(left.len() * right.len());
        for &l in &left {
            for &r in &right {
                prods.push(self.b.product(vec![l, r]));
            }
        }
        if top {
            return prods;
        }
        (0..c).map(|_| self.b.sum(prods.clone())).collect()
    }
}

/// Random balanced region graph over the data and embedding variables
/// shuffled together. Parameters are left at zero.
pub fn build_tabular<T: Scalar>(cfg: &TabularConfig, rng: &mut impl Rng) -> Result<Circuit<T>> {
    cfg.validate()?;
    let nv = cfg.num_data_vars + cfg.embedding_dim;
    let mut t = Tabular {
        b: CircuitBuilder::with_counts(cfg.num_data_vars, cfg.embedding_dim),
        cfg,
    };
    let mut root_children = Vec::new();
    for _ in 0..cfg.repetitions {
        let mut vars: Vec<usize> = (0..nv).collect();
        vars.shuffle(rng);
        root_children.extend(t.region(&vars, cfg.depth, true));
    }
    t.b.sum(root_children);
    t.b.build(meta(BuilderConfig::Tabular(cfg.clone())))
}

/// Layered image circuit: per-pixel leaf channels, embedding leaves paired
/// with distinct random pixels, then alternating 2x2 product layers and
/// channel-mixing sum layers until one unit covers the image.
pub fn build_convpc<T: Scalar>(cfg: &ConvPcConfig, rng: &mut impl Rng) -> Result<Circuit<T>> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let npix = h * w;
    let c0 = cfg.leaf_channels;
    let mut b = CircuitBuilder::with_counts(npix, cfg.embedding_dim);
    let mut positions: Vec<usize> = (0..npix).collect();
    positions.shuffle(rng);
    let mut attached = vec![None; npix];
    for (j, &p) in positions.iter().take(cfg.embedding_dim).enumerate() {
        attached[p] = Some(npix + j);
    }
    // grid[pos] = units of the current layer at that position, one per channel
    let mut grid: Vec<Vec<usize>> = (0..npix)
        .map(|p| {
            (0..c0)
                .map(|_| {
                    let pixel = b.input(p, cfg.pixel_leaf);
                    match attached[p] {
                        Some(z) => {
                            let zl = b.input(z, LeafFamily::Gaussian);
                            b.product(vec![pixel, zl])
                        }
                        None => pixel,
                    }
                })
                .collect()
        })
        .collect();
    let (mut gh, mut gw) = (h, w);
    for c_out in cfg.sum_layer_channels() {
        let (kh, kw) = (if gh > 1 { 2 } else { 1 }, if gw > 1 { 2 } else { 1 });
        let (nh, nw) = (gh / kh, gw / kw);
        let mut next = Vec::with_capacity(nh * nw);
        for y in 0..nh {
            for x in 0..nw {
                let window: Vec<&Vec<usize>> = (0..kh)
                    .flat_map(|dy| (0..kw).map(move |dx| (y * kh + dy, x * kw + dx)))
                    .map(|(yy, xx)| &grid[yy * gw + xx])
                    .collect();
                let c_in = window[0].len();
                let prods: Vec<usize> = (0..c_in)
                    .map(|k| b.product(window.iter().map(|units| units[k]).collect()))
                    .collect();
                next.push((0..c_out).map(|_| b.sum(prods.clone())).collect());
            }
        }
        grid = next;
        gh = nh;
        gw = nw;
    }
    b.build(meta(BuilderConfig::Convpc(cfg.clone())))
}

/// A row-major image zero-padded on the right and bottom to power-of-two
/// sides, with a mask that is `false` on the padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedImage<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub observed: Vec<bool>,
}

pub fn pad_to_pow2<T: Scalar>(image: &[T], height: usize, width: usize) -> Result<PaddedImage<T>> {
    if image.len() != height * width {
        return Err(Error::ShapeMismatch {
            op: "pad_to_pow2",
            lhs: vec![height, width],
            rhs: vec![image.len()],
        });
    }
    let (ph, pw) = (height.next_power_of_two(), width.next_power_of_two());
    let mut values = vec![T::zero(); ph * pw];
    let mut observed = vec![false; ph * pw];
    for y in 0..height {
        for x in 0..width {
            values[y * pw + x] = image[y * width + x];
            observed[y * pw + x] = true;
        }
    }
    Ok(PaddedImage {
        height: ph,
        width: pw,
        values,
        observed,
    })
}
