//! Exact inference on circuits: marginal likelihoods, conditional encoding
//! of the embedding variables, most-probable-explanation encoding, and
//! ancestral sampling.
//!
//! Everything runs in the log domain. The differentiable entry points
//! ([`log_marginal`], [`encode`]) record a single custom op on the tape whose
//! parents are the circuit's two flat parameter tensors, bound with
//! [`bind`] or [`bind_frozen`].

mod encode;
mod evidence;
mod forward;
mod mpe;
mod sample;

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Array, CustomOp, Tape, Var};
use crate::circuit::{Circuit, Structure};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use encode::SampleTrace;
pub use evidence::Evidence;
pub use forward::ForwardCache;
pub use mpe::{mpe, mpe_encode, MpeState};
pub use sample::{
    condition_log_weights, condition_weights, gumbel, gumbel_argmax, sample_joint, simple_sample, Conditioned,
};

use forward::{Grads, Inputs, Semiring};

/// The circuit's parameter tensors recorded on a tape.
#[derive(Clone, Copy)]
pub struct CircuitVars<'t, T: Scalar> {
    pub sum_logits: Var<'t, T>,
    pub leaf: Var<'t, T>,
}

/// Records the circuit parameters as trainable tape inputs.
pub fn bind<'t, T: Scalar>(c: &Circuit<T>, tape: &'t Tape<T>) -> CircuitVars<'t, T> {
    CircuitVars {
        sum_logits: tape.param(Array::from_vec(c.params.sum_logits.clone())),
        leaf: tape.param(Array::from_vec(c.params.leaf.clone())),
    }
}

/// Records the circuit parameters as constants.
pub fn bind_frozen<'t, T: Scalar>(c: &Circuit<T>, tape: &'t Tape<T>) -> CircuitVars<'t, T> {
    CircuitVars {
        sum_logits: tape.constant(Array::from_vec(c.params.sum_logits.clone())),
        leaf: tape.constant(Array::from_vec(c.params.leaf.clone())),
    }
}

/// Embedding values supplied to a marginal evaluation.
#[derive(Clone, Copy)]
pub enum Embeddings<'a, 't, T: Scalar> {
    Missing,
    /// Row-major `[rows, num_embedding]` constants.
    Values(&'a [T]),
    /// A `[rows, num_embedding]` node that receives gradients.
    Node(Var<'t, T>),
}

fn check_evidence<T: Scalar>(c: &Circuit<T>, e: &Evidence<T>) -> Result<()> {
    if e.cols() != c.num_data() {
        return Err(Error::ShapeMismatch {
            op: "evidence",
            lhs: vec![e.rows(), e.cols()],
            rhs: vec![c.num_data()],
        });
    }
    Ok(())
}

fn check_z<T: Scalar>(c: &Circuit<T>, rows: usize, z: &[T]) -> Result<()> {
    if z.len() != rows * c.num_embedding() {
        return Err(Error::ShapeMismatch {
            op: "embeddings",
            lhs: vec![rows, c.num_embedding()],
            rhs: vec![z.len()],
        });
    }
    Ok(())
}

/// `log p(observed)` per row, missing variables marginalized out. When
/// `cache` is given it receives every unit's log value.
pub fn log_marginal_values<T: Scalar>(
    c: &Circuit<T>,
    e: &Evidence<T>,
    z: Option<&[T]>,
    cache: Option<&mut ForwardCache<T>>,
) -> Result<Vec<T>> {
    check_evidence(c, e)?;
    if let Some(z) = z {
        check_z(c, e.rows(), z)?;
    }
    let f = forward::forward(
        &c.st,
        &c.params.sum_logits,
        &c.params.leaf,
        Inputs { data: e, z },
        Semiring::LogSum,
    )?;
    let out = f.root_values().to_vec();
    if let Some(slot) = cache {
        *slot = f;
    }
    Ok(out)
}

/// `log p(z)` per row with every data variable marginalized out.
pub fn log_embedding_marginal<T: Scalar>(c: &Circuit<T>, z: &[T]) -> Result<Vec<T>> {
    let nz = c.num_embedding().max(1);
    let rows = z.len() / nz;
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding value {bad}")));
    }
    log_marginal_values(c, &Evidence::all_missing(rows, c.num_data()), Some(z), None)
}

struct MarginalOp<T: Scalar> {
    st: Arc<Structure>,
    data: Evidence<T>,
    has_z_node: bool,
    z: Option<Vec<T>>,
    cache: ForwardCache<T>,
}

impl<T: Scalar> CustomOp<T> for MarginalOp<T> {
    fn name(&self) -> &'static str {
        "log_marginal"
    }

    fn backward(&self, g: &Array<T>, parents: &[&Array<T>], _out: &Array<T>) -> Result<Vec<Option<Array<T>>>> {
        let b = self.data.rows();
        let mut adj = vec![T::zero(); self.cache.log_values.len()];
        let root = self.st.units.len() - 1;
        adj[root * b..(root + 1) * b].copy_from_slice(g.data());
        let mut gl = Array::zeros(parents[0].shape());
        let mut gp = Array::zeros(parents[1].shape());
        let mut gz = self.has_z_node.then(|| Array::zeros(parents[2].shape()));
        let inputs = Inputs {
            data: &self.data,
            z: self.z.as_deref(),
        };
        let mut grads = Grads {
            logits: gl.data_mut(),
            leaf: gp.data_mut(),
            z: gz.as_mut().map(|a| a.data_mut()),
        };
        forward::backward(&self.st, parents[1].data(), inputs, &self.cache, &mut adj, &mut grads);
        let mut out = vec![Some(gl), Some(gp)];
        if let Some(gz) = gz {
            out.push(Some(gz));
        }
        Ok(out)
    }
}

/// Differentiable `log p(observed)` per row, shape `[rows]`.
pub fn log_marginal<'t, T: Scalar>(
    c: &Circuit<T>,
    vars: &CircuitVars<'t, T>,
    e: &Evidence<T>,
    z: Embeddings<'_, 't, T>,
) -> Result<Var<'t, T>> {
    check_evidence(c, e)?;
    let tape = vars.sum_logits.tape();
    let logits = vars.sum_logits.value();
    let leaf = vars.leaf.value();
    let (zvals, z_node) = match z {
        Embeddings::Missing => (None, None),
        Embeddings::Values(v) => (Some(v.to_vec()), None),
        Embeddings::Node(n) => (Some(n.value().into_data()), Some(n)),
    };
    if let Some(zv) = &zvals {
        check_z(c, e.rows(), zv)?;
    }
    let cache = forward::forward(
        &c.st,
        logits.data(),
        leaf.data(),
        Inputs {
            data: e,
            z: zvals.as_deref(),
        },
        Semiring::LogSum,
    )?;
    let value = Array::from_vec(cache.root_values().to_vec());
    let mut parents = vec![vars.sum_logits, vars.leaf];
    parents.extend(z_node);
    let op = MarginalOp {
        st: Arc::clone(&c.st),
        data: e.clone(),
        has_z_node: z_node.is_some(),
        z: zvals,
        cache,
    };
    Ok(tape.custom(&parents, value, Box::new(op)))
}

/// Differentiable encoding of a batch: `[rows, num_embedding]` nodes for the
/// sampled values and the selected leaves' means and log-stds.
pub struct Encoding<'t, T: Scalar> {
    pub z: Var<'t, T>,
    pub mean: Var<'t, T>,
    pub log_std: Var<'t, T>,
    pub trace: SampleTrace,
}

/// Non-differentiable encoding, row-major `[rows, num_embedding]`.
#[derive(Clone, Debug)]
pub struct EncodedValues<T> {
    pub z: Vec<T>,
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub trace: SampleTrace,
}

/// Samples `z ~ p(Z | observed data)` for every row. Data leaves are not
/// sampled; only embedding values are produced.
pub fn encode<'t, T: Scalar, R: Rng + ?Sized>(
    c: &Circuit<T>,
    vars: &CircuitVars<'t, T>,
    e: &Evidence<T>,
    rng: &mut R,
) -> Result<Encoding<'t, T>> {
    check_evidence(c, e)?;
    let tape = vars.sum_logits.tape();
    let logits = vars.sum_logits.value();
    let leaf = vars.leaf.value();
    let state = encode::encode_forward(&c.st, logits.data(), leaf.data(), e, rng)?;
    let out = state.output(&c.st);
    let trace = state.trace.clone();
    let op = encode::EncodeOp {
        st: Arc::clone(&c.st),
        data: e.clone(),
        state,
    };
    let all = tape.custom(&[vars.sum_logits, vars.leaf], out, Box::new(op));
    let (b, nz) = (e.rows(), c.num_embedding());
    let part = |k: usize| all.select(k).and_then(|v| v.reshape(&[b, nz]));
    Ok(Encoding {
        z: part(0)?,
        mean: part(1)?,
        log_std: part(2)?,
        trace,
    })
}

/// [`encode`] without a tape.
pub fn encode_values<T: Scalar, R: Rng + ?Sized>(
    c: &Circuit<T>,
    e: &Evidence<T>,
    rng: &mut R,
) -> Result<EncodedValues<T>> {
    check_evidence(c, e)?;
    let state = encode::encode_forward(&c.st, &c.params.sum_logits, &c.params.leaf, e, rng)?;
    let out = state.output(&c.st).into_data();
    let n = out.len() / 3;
    Ok(EncodedValues {
        z: out[..n].to_vec(),
        mean: out[n..2 * n].to_vec(),
        log_std: out[2 * n..].to_vec(),
        trace: state.trace,
    })
}

#[cfg(test)]
mod tests;
