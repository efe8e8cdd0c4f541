//! Bottom-up evaluation of a circuit in the log domain and its adjoint pass.

use crate::circuit::{LeafFamily, Structure, Unit, VarRole};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

use super::Evidence;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// How a unit aggregates its children.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Semiring {
    /// Sum units take a log-sum-exp, missing leaves contribute `0`.
    LogSum,
    /// Sum units take a max, missing leaves contribute their maximum density.
    Max,
}

/// Values of the variables seen by the leaves of one batch.
#[derive(Clone, Copy)]
pub(crate) struct Inputs<'a, T> {
    pub data: &'a Evidence<T>,
    /// Row-major `[rows, num_embedding]`, `None` when every embedding
    /// variable is missing.
    pub z: Option<&'a [T]>,
}

impl<T: Scalar> Inputs<'_, T> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn get(&self, st: &Structure, var: usize, row: usize) -> Option<T> {
        let p = st.role_pos[var];
        match st.roles[var] {
            VarRole::Data => self.data.get(row, p),
            VarRole::Embedding => {
                let nz = st.embedding_vars.len();
                self.z.map(|z| z[row * nz + p])
            }
        }
    }
}

/// Per-unit log values for a batch, laid out `[unit][row]`.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub(crate) rows: usize,
    pub(crate) log_values: Vec<T>,
    pub(crate) log_weights: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Log value of `unit` for batch row `row`.
    pub fn log_value(&self, unit: usize, row: usize) -> T {
        self.log_values[unit * self.rows + row]
    }

    pub fn root_values(&self) -> &[T] {
        let n = self.log_values.len();
        &self.log_values[n - self.rows..]
    }
}

/// Log-softmax of every sum unit's logits, laid out like the logits.
pub(crate) fn log_weights<T: Scalar>(st: &Structure, logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (u, unit) in st.units.iter().enumerate() {
        if let Unit::Sum { children } = unit {
            let off = st.offsets[u];
            let r = off..off + children.len();
            let lse = crate::scalar::logsumexp(&logits[r.clone()]);
            for k in r {
                out[k] = logits[k] - lse;
            }
        }
    }
    out
}

pub(crate) fn check_support<T: Scalar>(family: LeafFamily, var: usize, x: T) -> Result<()> {
    let ok = match family {
        LeafFamily::Bernoulli => x == T::zero() || x == T::one(),
        LeafFamily::Binomial { n } => x >= T::zero() && x <= T::c(n as f64) && x.fract() == T::zero(),
        LeafFamily::Gaussian => x.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::OutsideSupport { var, value: x.f64() })
    }
}

#[inline]
fn ln_choose<T: Scalar>(lf: &[f64], n: u32, x: T) -> T {
    let k = x.to_usize().unwrap_or(0);
    let n = n as usize;
    T::c(lf[n] - lf[k] - lf[n - k])
}

/// Log density of a supported value.
#[inline]
pub(crate) fn leaf_log_density<T: Scalar>(family: LeafFamily, p: &[T], x: T, lf: &[f64]) -> T {
    match family {
        LeafFamily::Bernoulli => x * p[0] - softplus(p[0]),
        LeafFamily::Binomial { n } => ln_choose(lf, n, x) + x * p[0] - T::c(n as f64) * softplus(p[0]),
        LeafFamily::Gaussian => {
            let d = (x - p[0]) * (-p[1]).exp();
            -T::c(HALF_LN_2PI) - p[1] - T::c(0.5) * d * d
        }
    }
}

/// Gradient of the log density with respect to the leaf parameters
/// (written into `dp`, scaled by `a`) and returned with respect to `x`.
#[inline]
pub(crate) fn leaf_log_density_grad<T: Scalar>(family: LeafFamily, p: &[T], x: T, a: T, dp: &mut [T]) -> T {
    match family {
        LeafFamily::Bernoulli => {
            dp[0] += a * (x - sigmoid(p[0]));
            T::zero()
        }
        LeafFamily::Binomial { n } => {
            dp[0] += a * (x - T::c(n as f64) * sigmoid(p[0]));
            T::zero()
        }
        LeafFamily::Gaussian => {
            let inv_var = (-(p[1] + p[1])).exp();
            let d = x - p[0];
            dp[0] += a * d * inv_var;
            dp[1] += a * (d * d * inv_var - T::one());
            -a * d * inv_var
        }
    }
}

/// Most probable value of a leaf and its log density; ties go to the
/// smallest value.
pub(crate) fn leaf_mode<T: Scalar>(family: LeafFamily, p: &[T], lf: &[f64]) -> (T, T) {
    match family {
        LeafFamily::Bernoulli => {
            let x = if p[0] > T::zero() { T::one() } else { T::zero() };
            (x, -softplus(-p[0].abs()))
        }
        LeafFamily::Binomial { n } => {
            let prob = sigmoid(p[0]).f64();
            let guess = ((n as f64 + 1.0) * prob).floor().min(n as f64);
            let mut best = (T::zero(), T::neg_infinity());
            for k in [guess - 1.0, guess] {
                if k < 0.0 {
                    continue;
                }
                let x = T::c(k);
                let v = leaf_log_density(family, p, x, lf);
                if v > best.1 {
                    best = (x, v);
                }
            }
            best
        }
        LeafFamily::Gaussian => (p[0], -T::c(HALF_LN_2PI) - p[1]),
    }
}

/// Evaluates every unit for every row.
pub(crate) fn forward<T: Scalar>(
    st: &Structure,
    logits: &[T],
    leaf: &[T],
    inputs: Inputs<'_, T>,
    semiring: Semiring,
) -> Result<ForwardCache<T>> {
    let b = inputs.rows();
    let lw = log_weights(st, logits);
    let mut v = vec![T::zero(); st.units.len() * b];
    let lf = &st.ln_factorial;
    let mut scratch = Vec::new();
    for (u, unit) in st.units.iter().enumerate() {
        let (done, rest) = v.split_at_mut(u * b);
        let out = &mut rest[..b];
        match unit {
            Unit::Input { var, family } => {
                let p = &leaf[st.offsets[u]..st.offsets[u] + family.num_params()];
                let mode = (semiring == Semiring::Max).then(|| leaf_mode(*family, p, lf).1);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = match inputs.get(st, *var, i) {
                        Some(x) => {
                            check_support(*family, *var, x)?;
                            leaf_log_density(*family, p, x, lf)
                        }
                        None => mode.unwrap_or(T::zero()),
                    };
                }
            }
            Unit::Product { children } => {
                out.fill(T::zero());
                for &c in children {
                    for (o, &x) in out.iter_mut().zip(&done[c * b..(c + 1) * b]) {
                        *o += x;
                    }
                }
            }
            Unit::Sum { children } => {
                let w = &lw[st.offsets[u]..st.offsets[u] + children.len()];
                for (i, o) in out.iter_mut().enumerate() {
                    scratch.clear();
                    scratch.extend(children.iter().zip(w).map(|(&c, &wk)| wk + done[c * b + i]));
                    *o = match semiring {
                        Semiring::LogSum => crate::scalar::logsumexp(&scratch),
                        Semiring::Max => scratch.iter().copied().fold(T::neg_infinity(), T::max),
                    };
                }
            }
        }
    }
    Ok(ForwardCache {
        rows: b,
        log_values: v,
        log_weights: lw,
    })
}

/// Gradient accumulators for one backward pass.
pub(crate) struct Grads<'a, T> {
    pub logits: &'a mut [T],
    pub leaf: &'a mut [T],
    /// Row-major `[rows, num_embedding]`, only when embedding values were observed.
    pub z: Option<&'a mut [T]>,
}

/// Propagates per-unit adjoints `adj` (laid out like the cache) of the
/// log-sum forward values down to the parameters and observed embeddings.
/// `adj` is consumed as scratch.
pub(crate) fn backward<T: Scalar>(
    st: &Structure,
    leaf: &[T],
    inputs: Inputs<'_, T>,
    cache: &ForwardCache<T>,
    adj: &mut [T],
    grads: &mut Grads<'_, T>,
) {
    let b = cache.rows;
    let v = &cache.log_values;
    let lw = &cache.log_weights;
    let nz = st.embedding_vars.len();
    for (u, unit) in st.units.iter().enumerate().rev() {
        let (below, rest) = adj.split_at_mut(u * b);
        let a_u = &rest[..b];
        if a_u.iter().all(|a| *a == T::zero()) {
            continue;
        }
        match unit {
            Unit::Input { var, family } => {
                let off = st.offsets[u];
                let np = family.num_params();
                let p = &leaf[off..off + np];
                for (i, &a) in a_u.iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    if let Some(x) = inputs.get(st, *var, i) {
                        let dx = leaf_log_density_grad(*family, p, x, a, &mut grads.leaf[off..off + np]);
                        if st.roles[*var] == VarRole::Embedding {
                            if let Some(gz) = grads.z.as_deref_mut() {
                                gz[i * nz + st.role_pos[*var]] += dx;
                            }
                        }
                    }
                }
            }
            Unit::Product { children } => {
                for (i, &a) in a_u.iter().enumerate() {
                    if a == T::zero() || v[u * b + i] == T::neg_infinity() {
                        continue;
                    }
                    for &c in children {
                        below[c * b + i] += a;
                    }
                }
            }
            Unit::Sum { children } => {
                let off = st.offsets[u];
                for (i, &a) in a_u.iter().enumerate() {
                    let vu = v[u * b + i];
                    if a == T::zero() || vu == T::neg_infinity() {
                        continue;
                    }
                    for (k, &c) in children.iter().enumerate() {
                        let r = (lw[off + k] + v[c * b + i] - vu).exp();
                        below[c * b + i] += a * r;
                        grads.logits[off + k] += a * (r - lw[off + k].exp());
                    }
                }
            }
        }
    }
}
