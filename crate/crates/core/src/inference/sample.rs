use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::autodiff::{Array, Var};
use crate::circuit::{Circuit, LeafFamily, Unit};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

const GUMBEL_EPS: f64 = 1e-12;

/// One standard Gumbel draw.
#[inline]
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(GUMBEL_EPS..1.0 - GUMBEL_EPS);
    -(-u.ln()).ln()
}

/// Index maximizing `log_probs[k] + g_k` for independent Gumbel noise `g`.
/// Ties resolve to the lowest index. `-inf` entries are never chosen unless
/// every entry is `-inf`.
pub fn gumbel_argmax<T: Scalar, R: Rng + ?Sized>(log_probs: &[T], rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &lp) in log_probs.iter().enumerate() {
        let g = gumbel(rng);
        let v = lp.f64() + g;
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

/// Result of reweighting mixture weights by child likelihoods.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioned<T> {
    pub weights: Vec<T>,
    /// The evidence had zero likelihood under every child and `weights` are
    /// the unconditioned input weights.
    pub degenerate: bool,
}

/// Log-space conditioning: `softmax(log_theta + log_gamma)`, or
/// `softmax(log_theta)` when every sum is `-inf`.
pub fn condition_log_weights<T: Scalar>(log_theta: &[T], log_gamma: &[T]) -> Conditioned<T> {
    let joint: Vec<T> = log_theta.iter().zip(log_gamma).map(|(&a, &b)| a + b).collect();
    let lse = crate::scalar::logsumexp(&joint);
    if lse == T::neg_infinity() || lse.is_nan() {
        let lse = crate::scalar::logsumexp(log_theta);
        return Conditioned {
            weights: log_theta.iter().map(|&l| (l - lse).exp()).collect(),
            degenerate: true,
        };
    }
    Conditioned {
        weights: joint.iter().map(|&l| (l - lse).exp()).collect(),
        degenerate: false,
    }
}

/// `theta_i * gamma_i / sum_j theta_j * gamma_j`, computed in log space.
pub fn condition_weights<T: Scalar>(theta: &[T], gamma: &[T]) -> Result<Conditioned<T>> {
    if theta.len() != gamma.len() {
        return Err(Error::ShapeMismatch {
            op: "condition_weights",
            lhs: vec![theta.len()],
            rhs: vec![gamma.len()],
        });
    }
    if gamma.iter().any(|&g| g < T::zero()) || theta.iter().any(|&t| t < T::zero()) {
        return Err(Error::invalid("weights and likelihoods must be non-negative"));
    }
    let lt: Vec<T> = theta.iter().map(|t| t.ln()).collect();
    let lg: Vec<T> = gamma.iter().map(|g| g.ln()).collect();
    Ok(condition_log_weights(&lt, &lg))
}

/// Differentiable one-hot sample from the categorical distribution(s)
/// `theta` (shape `[D]`, or `[B, D]` for one draw per row). The forward value
/// is an exact one-hot vector at the Gumbel-perturbed argmax; the gradient
/// with respect to `theta` is the identity.
pub fn simple_sample<'t, T: Scalar, R: Rng + ?Sized>(theta: Var<'t, T>, rng: &mut R) -> Result<Var<'t, T>> {
    let value = theta.value();
    let shape = value.shape().to_vec();
    let d = match shape.as_slice() {
        [d] | [_, d] if *d > 0 => *d,
        _ => {
            return Err(Error::invalid(format!(
                "simple_sample expects [D] or [B, D], got {shape:?}"
            )))
        }
    };
    let mut onehot = vec![T::zero(); value.len()];
    for (row, out) in value.data().chunks(d).zip(onehot.chunks_mut(d)) {
        if row.iter().all(|&p| p <= T::zero()) {
            return Err(Error::invalid("simple_sample on an all-zero distribution"));
        }
        let logs: Vec<T> = row
            .iter()
            .map(|&p| if p > T::zero() { p.ln() } else { T::neg_infinity() })
            .collect();
        out[gumbel_argmax(&logs, rng)] = T::one();
    }
    theta.straight_through(Array::new(shape, onehot)?)
}

/// Draws `n` joint samples by ancestral sampling, returned row-major as
/// `([n, num_data], [n, num_embedding])`.
pub fn sample_joint<T: Scalar, R: Rng + ?Sized>(c: &Circuit<T>, rng: &mut R, n: usize) -> (Vec<T>, Vec<T>) {
    let (nd, nz) = (c.num_data(), c.num_embedding());
    let mut x = vec![T::zero(); n * nd];
    let mut z = vec![T::zero(); n * nz];
    let weights: Vec<Vec<T>> = (0..c.num_units())
        .map(|u| match c.units()[u] {
            Unit::Sum { .. } => c.sum_weights(u),
            _ => Vec::new(),
        })
        .collect();
    let mut stack = Vec::new();
    for i in 0..n {
        stack.push(c.root());
        while let Some(u) = stack.pop() {
            match &c.units()[u] {
                Unit::Sum { children } => {
                    let k = categorical(&weights[u], rng);
                    stack.push(children[k]);
                }
                Unit::Product { children } => stack.extend(children.iter().rev()),
                Unit::Input { var, family } => {
                    let v = sample_leaf(*family, c.leaf_params(u), rng);
                    let p = c.role_position(*var);
                    match c.variable(*var).role {
                        crate::circuit::VarRole::Data => x[i * nd + p] = v,
                        crate::circuit::VarRole::Embedding => z[i * nz + p] = v,
                    }
                }
            }
        }
    }
    (x, z)
}

pub(crate) fn categorical<T: Scalar, R: Rng + ?Sized>(w: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in w.iter().enumerate() {
        acc += p.f64();
        if u < acc {
            return k;
        }
    }
    w.iter().rposition(|p| *p > T::zero()).unwrap_or(w.len() - 1)
}

pub(crate) fn sample_leaf<T: Scalar, R: Rng + ?Sized>(family: LeafFamily, p: &[T], rng: &mut R) -> T {
    match family {
        LeafFamily::Bernoulli => {
            let u: f64 = rng.random();
            if u < sigmoid(p[0]).f64() {
                T::one()
            } else {
                T::zero()
            }
        }
        LeafFamily::Binomial { n } => {
            let prob = sigmoid(p[0]).f64().clamp(0.0, 1.0);
            let k = Binomial::new(n as u64, prob).expect("valid probability").sample(rng);
            T::c(k as f64)
        }
        LeafFamily::Gaussian => {
            let e: f64 = StandardNormal.sample(rng);
            p[0] + p[1].exp() * T::c(e)
        }
    }
}
