//! Neural decoders mapping embeddings back to data space, and a small
//! Gaussian VAE used as a baseline and as a distillation teacher.
//!
//! Networks keep their weights in a [`ParamSet`] and are evaluated on a
//! tape after binding: `let p = net.params.bind(&tape); net.forward(&p, x)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An ordered list of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    pub tensors: Vec<Array<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Array::len).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.tensors.iter().map(|a| tape.param(a.clone())).collect()
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.tensors.iter().map(|a| tape.constant(a.clone())).collect()
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(T::zero());
        }
    }

    fn push(&mut self, a: Array<T>) -> usize {
        self.tensors.push(a);
        self.tensors.len() - 1
    }
}

/// Uniform fan-in scaled weights for a layer followed by a leaky ReLU with
/// the given slope.
fn kaiming<T: Scalar>(shape: &[usize], fan_in: usize, slope: f64, rng: &mut impl Rng) -> Array<T> {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| T::c(dist.sample(rng))).collect()).expect("consistent shape")
}

fn affine<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let y = x.matmul(w)?;
    let shape = y.shape();
    y.add(b.broadcast_to(&shape)?)
}

fn check_rows<T: Scalar>(x: &Var<'_, T>, cols: usize, what: &str) -> Result<usize> {
    match x.shape().as_slice() {
        [b, c] if *c == cols => Ok(*b),
        s => Err(Error::invalid(format!("{what} expects [rows, {cols}], got {s:?}"))),
    }
}

fn check_finite<T: Scalar>(x: &Var<'_, T>, what: &str) -> Result<()> {
    if x.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} input")))
    }
}

/// Fully connected stack with leaky-ReLU hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub dims: Vec<usize>,
    pub negative_slope: f64,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(dims: Vec<usize>, negative_slope: f64, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::default();
        for w in dims.windows(2) {
            params.push(kaiming(&[w[0], w[1]], w[0], negative_slope, rng));
            params.push(Array::zeros(&[w[1]]));
        }
        Self {
            dims,
            negative_slope,
            params,
        }
    }

    /// Pre-activation output of the last layer for `x: [rows, dims[0]]`.
    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_rows(&x, self.dims[0], "mlp")?;
        let layers = self.dims.len() - 1;
        let mut h = x;
        for l in 0..layers {
            h = affine(h, p[2 * l], p[2 * l + 1])?;
            if l + 1 < layers {
                h = h.leaky_relu(T::c(self.negative_slope));
            }
        }
        Ok(h)
    }
}

fn default_slope() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderConfig {
    /// Dense layers with leaky-ReLU activations.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_slope")]
        negative_slope: f64,
    },
    /// Dense projection to a small feature map followed by stride-2
    /// transposed convolutions that double the resolution, halving the
    /// channel count each time. The feature map is the output size halved
    /// as often as both sides stay even and at least 4.
    Deconv { channels: usize },
}

/// What the decoder produces per row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputShape {
    Flat { size: usize },
    Image { height: usize, width: usize },
}

impl OutputShape {
    pub fn size(&self) -> usize {
        match self {
            OutputShape::Flat { size } => *size,
            OutputShape::Image { height, width } => height * width,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum DecoderNet<T> {
    Mlp(Mlp<T>),
    Deconv {
        channels: Vec<usize>,
        base: (usize, usize),
        params: ParamSet<T>,
    },
}

/// Map from embeddings `[rows, embedding_dim]` to reconstructions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub config: DecoderConfig,
    pub embedding_dim: usize,
    pub output: OutputShape,
    net: DecoderNet<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(config: DecoderConfig, embedding_dim: usize, output: OutputShape, rng: &mut impl Rng) -> Result<Self> {
        if embedding_dim == 0 || output.size() == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        let net = match &config {
            DecoderConfig::Mlp { hidden, negative_slope } => {
                let mut dims = vec![embedding_dim];
                dims.extend(hidden);
                dims.push(output.size());
                DecoderNet::Mlp(Mlp::new(dims, *negative_slope, rng))
            }
            DecoderConfig::Deconv { channels } => {
                let OutputShape::Image { height, width } = output else {
                    return Err(Error::Config("a deconvolution decoder needs an image output".into()));
                };
                if *channels == 0 {
                    return Err(Error::Config("deconvolution channels must be positive".into()));
                }
                let mut n = 0;
                while (height >> n) % 2 == 0 && (width >> n) % 2 == 0 && height.min(width) >> (n + 1) >= 4 {
                    n += 1;
                }
                let base = (height >> n, width >> n);
                let mut ch = vec![*channels];
                for l in 0..n {
                    ch.push(if l + 1 == n { 1 } else { (ch[l] / 2).max(1) });
                }
                let mut params = ParamSet::default();
                let dense_out = ch[0] * base.0 * base.1;
                params.push(kaiming(&[embedding_dim, dense_out], embedding_dim, 0.0, rng));
                params.push(Array::zeros(&[dense_out]));
                for w in ch.windows(2) {
                    params.push(kaiming(&[w[0], w[1], 4, 4], w[0] * 4, 0.0, rng));
                    params.push(Array::zeros(&[w[1]]));
                }
                if n == 0 {
                    params.push(kaiming(&[dense_out, output.size()], dense_out, 0.0, rng));
                    params.push(Array::zeros(&[output.size()]));
                }
                DecoderNet::Deconv {
                    channels: ch,
                    base,
                    params,
                }
            }
        };
        Ok(Self {
            config,
            embedding_dim,
            output,
            net,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        match &self.net {
            DecoderNet::Mlp(m) => &m.params,
            DecoderNet::Deconv { params, .. } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        match &mut self.net {
            DecoderNet::Mlp(m) => &mut m.params,
            DecoderNet::Deconv { params, .. } => params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().num_params()
    }

    /// Reconstruction `[rows, output.size()]` for `z: [rows, embedding_dim]`.
    pub fn forward<'t>(&self, p: &[Var<'t, T>], z: Var<'t, T>) -> Result<Var<'t, T>> {
        let rows = check_rows(&z, self.embedding_dim, "decoder")?;
        check_finite(&z, "decoder")?;
        let logits = match &self.net {
            DecoderNet::Mlp(m) => m.forward(p, z)?,
            DecoderNet::Deconv { channels, base, .. } => {
                let mut h = affine(z, p[0], p[1])?.relu();
                if channels.len() == 1 {
                    h = affine(h.reshape(&[rows, channels[0] * base.0 * base.1])?, p[2], p[3])?;
                } else {
                    h = h.reshape(&[rows, channels[0], base.0, base.1])?;
                    let layers = channels.len() - 1;
                    for l in 0..layers {
                        h = h.conv_transpose2d(p[2 + 2 * l], 2, 1)?;
                        let shape = h.shape();
                        let bias = p[3 + 2 * l].reshape(&[channels[l + 1], 1, 1])?.broadcast_to(&shape)?;
                        h = h.add(bias)?;
                        if l + 1 < layers {
                            h = h.relu();
                        }
                    }
                }
                h.reshape(&[rows, self.output.size()])?
            }
        };
        Ok(logits.sigmoid())
    }

    /// Reconstructions for row-major embedding values.
    pub fn decode_values(&self, z: &[T]) -> Result<Vec<T>> {
        let tape = Tape::new();
        let p = self.params().bind_frozen(&tape);
        let rows = z.len() / self.embedding_dim;
        let zv = tape.constant(Array::new(vec![rows, self.embedding_dim], z.to_vec())?);
        Ok(self.forward(&p, zv)?.value().into_data())
    }
}

/// Closed-form `KL(N(mean, exp(log_std)^2) || N(0, 1))` per element.
pub fn gaussian_kld<'t, T: Scalar>(mean: Var<'t, T>, log_std: Var<'t, T>) -> Result<Var<'t, T>> {
    let two_ls = log_std.mul_scalar(T::c(2.0));
    let sum = mean.square().add(two_ls.exp())?.sub(two_ls)?;
    Ok(sum.add_scalar(-T::one()).mul_scalar(T::c(0.5)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_slope")]
    pub negative_slope: f64,
}

/// Gaussian VAE whose encoder sees zero-imputed inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae<T> {
    pub encoder: Mlp<T>,
    pub decoder: Decoder<T>,
}

/// Tape nodes of one VAE pass, each `[rows, ...]`.
pub struct VaeOutput<'t, T: Scalar> {
    pub reconstruction: Var<'t, T>,
    pub mean: Var<'t, T>,
    pub log_std: Var<'t, T>,
    pub z: Var<'t, T>,
}

/// Bound parameters of a [`Vae`].
pub struct VaeVars<'t, T: Scalar> {
    pub encoder: Vec<Var<'t, T>>,
    pub decoder: Vec<Var<'t, T>>,
}

impl<T: Scalar> Vae<T> {
    pub fn new(
        encoder: &EncoderConfig,
        decoder: DecoderConfig,
        embedding_dim: usize,
        output: OutputShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![output.size()];
        dims.extend(&encoder.hidden);
        dims.push(2 * embedding_dim);
        Ok(Self {
            encoder: Mlp::new(dims, encoder.negative_slope, rng),
            decoder: Decoder::new(decoder, embedding_dim, output, rng)?,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.decoder.embedding_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.dims[0]
    }

    /// Sets every encoder and decoder weight to zero.
    pub fn zero_init(&mut self) {
        self.encoder.params.zero();
        self.decoder.params_mut().zero();
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> VaeVars<'t, T> {
        VaeVars {
            encoder: self.encoder.params.bind(tape),
            decoder: self.decoder.params().bind(tape),
        }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> VaeVars<'t, T> {
        VaeVars {
            encoder: self.encoder.params.bind_frozen(tape),
            decoder: self.decoder.params().bind_frozen(tape),
        }
    }

    /// Posterior parameters `(mean, log_std)`, each `[rows, embedding_dim]`.
    pub fn encode<'t>(&self, p: &VaeVars<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let out = self.encoder.forward(&p.encoder, x)?;
        let d = self.embedding_dim();
        Ok((out.narrow(1, 0, d)?, out.narrow(1, d, d)?))
    }

    /// Reparameterized pass on zero-imputed inputs.
    pub fn forward<'t>(&self, p: &VaeVars<'t, T>, x: Var<'t, T>, rng: &mut impl Rng) -> Result<VaeOutput<'t, T>> {
        let (mean, log_std) = self.encode(p, x)?;
        let shape = mean.shape();
        let n: usize = shape.iter().product();
        let eps: Vec<T> = (0..n).map(|_| T::c(StandardNormal.sample(rng))).collect();
        let eps = x.tape().constant(Array::new(shape, eps)?);
        let z = mean.add(log_std.exp().mul(eps)?)?;
        let reconstruction = self.decoder.forward(&p.decoder, z)?;
        Ok(VaeOutput {
            reconstruction,
            mean,
            log_std,
            z,
        })
    }

    /// Embeddings for row-major zero-imputed inputs: the posterior mean, or a
    /// posterior sample when `rng` is given.
    pub fn encode_values(&self, x: &[T], rng: Option<&mut dyn rand::RngCore>) -> Result<Vec<T>> {
        let tape = Tape::new();
        let p = self.bind_frozen(&tape);
        let rows = x.len() / self.input_dim();
        let xv = tape.constant(Array::new(vec![rows, self.input_dim()], x.to_vec())?);
        let (mean, log_std) = self.encode(&p, xv)?;
        let mut z = mean.value().into_data();
        if let Some(rng) = rng {
            for (zi, ls) in z.iter_mut().zip(log_std.value().data()) {
                let e: f64 = StandardNormal.sample(rng);
                *zi += (*ls).exp() * T::c(e);
            }
        }
        Ok(z)
    }

    pub fn decode_values(&self, z: &[T]) -> Result<Vec<T>> {
        self.decoder.decode_values(z)
    }
}

#[cfg(test)]
mod tests;
