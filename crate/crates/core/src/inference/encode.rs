//! Conditional sampling of the embedding variables given data evidence.
//!
//! The sampling pass runs bottom-up over every unit whose scope contains
//! embedding variables. Each such unit carries, per batch row, a triple
//! `(z, mean, log_std)` for each embedding variable in its scope: embedding
//! leaves draw `z = mean + exp(log_std) * eps`, products concatenate their
//! children's triples, and sum units return `sum_k s_k * child_k` where `s`
//! is a one-hot draw from the evidence-conditioned mixture weights whose
//! gradient is routed to those weights unchanged. The root's triples are the
//! encoding; the chosen children form the sampling-induced tree.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Array, CustomOp};
use crate::circuit::{Structure, Unit};
use crate::error::Result;
use crate::scalar::Scalar;

use super::forward::{backward as marginal_backward, forward, ForwardCache, Grads, Inputs, Semiring};
use super::sample::{condition_log_weights, gumbel_argmax};
use super::Evidence;

const NONE: usize = usize::MAX;

/// Which children were chosen and which embedding leaves were reached.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTrace {
    /// Per row: `(sum unit, chosen child position)` for every sum unit on the
    /// sampling-induced tree, in visiting order.
    pub chosen: Vec<Vec<(usize, usize)>>,
    /// Per row: the input unit visited for each embedding variable.
    pub leaves: Vec<Vec<usize>>,
    /// Per row: the child drawn at every sum unit over embedding variables,
    /// including units off the induced tree, in unit order.
    pub draws: Vec<Vec<(usize, usize)>>,
    /// Per row: the standard-normal draw of every embedding leaf, in unit order.
    pub noise: Vec<Vec<(usize, f64)>>,
    /// Sum-unit evaluations whose evidence had zero likelihood under every
    /// child and that fell back to the unconditioned weights.
    pub fallbacks: usize,
}

pub(crate) struct EncodeState<T> {
    pub cache: ForwardCache<T>,
    pub(crate) rows: usize,
    /// Per unit: first entry index of its triples, `NONE` without embeddings.
    pub(crate) entry_off: Vec<usize>,
    /// `[entry][row][z, mean, log_std]`.
    pub(crate) samples: Vec<T>,
    /// `[entry][row]`, set for embedding leaves.
    pub(crate) eps: Vec<T>,
    /// Per unit: offset into `theta`, `NONE` for units that do not sample.
    theta_off: Vec<usize>,
    /// Conditioned weights, `[row][child]` within each sum unit's block.
    theta: Vec<T>,
    /// Per unit: index of its block in `chosen` / `degenerate`.
    pub(crate) sum_idx: Vec<usize>,
    pub(crate) chosen: Vec<u32>,
    degenerate: Vec<bool>,
    pub trace: SampleTrace,
}

impl<T: Scalar> EncodeState<T> {
    /// Output laid out `[3, rows, num_embedding]`.
    pub fn output(&self, st: &Structure) -> Array<T> {
        let nz = st.embedding_vars.len();
        let b = self.rows;
        let root = st.units.len() - 1;
        let mut out = vec![T::zero(); 3 * b * nz];
        if nz > 0 {
            let e0 = self.entry_off[root];
            for j in 0..nz {
                for i in 0..b {
                    for comp in 0..3 {
                        out[(comp * b + i) * nz + j] = self.samples[((e0 + j) * b + i) * 3 + comp];
                    }
                }
            }
        }
        Array::new(vec![3, b, nz], out).expect("consistent shape")
    }
}

/// Position of each of `child`'s embedding variables within `parent`'s.
fn child_positions(parent: &[usize], child: &[usize]) -> Vec<usize> {
    child
        .iter()
        .map(|z| parent.binary_search(z).expect("child scope within parent scope"))
        .collect()
}

pub(crate) fn encode_forward<T: Scalar, R: Rng + ?Sized>(
    st: &Structure,
    logits: &[T],
    leaf: &[T],
    data: &Evidence<T>,
    rng: &mut R,
) -> Result<EncodeState<T>> {
    let b = data.rows();
    let inputs = Inputs { data, z: None };
    let cache = forward(st, logits, leaf, inputs, Semiring::LogSum)?;
    let n = st.units.len();
    let mut entry_off = vec![NONE; n];
    let mut theta_off = vec![NONE; n];
    let mut sum_idx = vec![NONE; n];
    let (mut n_entries, mut n_theta, mut n_sums) = (0, 0, 0);
    for (u, unit) in st.units.iter().enumerate() {
        let k = st.zvars[u].len();
        if k == 0 {
            continue;
        }
        entry_off[u] = n_entries;
        n_entries += k;
        if let Unit::Sum { children } = unit {
            theta_off[u] = n_theta;
            n_theta += children.len() * b;
            sum_idx[u] = n_sums;
            n_sums += 1;
        }
    }
    let mut samples = vec![T::zero(); n_entries * b * 3];
    let mut eps = vec![T::zero(); n_entries * b];
    let mut theta = vec![T::zero(); n_theta];
    let mut chosen = vec![0u32; n_sums * b];
    let mut degenerate = vec![false; n_sums * b];
    let mut fallbacks = 0;
    let lw = &cache.log_weights;
    let lv = &cache.log_values;
    let mut log_gamma = Vec::new();
    for (u, unit) in st.units.iter().enumerate() {
        let e0 = entry_off[u];
        if e0 == NONE {
            continue;
        }
        match unit {
            Unit::Input { .. } => {
                let off = st.offsets[u];
                let (mu, ls) = (leaf[off], leaf[off + 1]);
                let sigma = ls.exp();
                for i in 0..b {
                    let e = T::c(StandardNormal.sample(rng));
                    eps[e0 * b + i] = e;
                    let s = &mut samples[(e0 * b + i) * 3..(e0 * b + i) * 3 + 3];
                    s[0] = mu + sigma * e;
                    s[1] = mu;
                    s[2] = ls;
                }
            }
            Unit::Product { children } => {
                for &c in children {
                    if entry_off[c] == NONE {
                        continue;
                    }
                    let pos = child_positions(&st.zvars[u], &st.zvars[c]);
                    let c0 = entry_off[c];
                    for (j, &p) in pos.iter().enumerate() {
                        let src = (c0 + j) * b * 3;
                        let dst = (e0 + p) * b * 3;
                        samples.copy_within(src..src + b * 3, dst);
                    }
                }
            }
            Unit::Sum { children } => {
                let off = st.offsets[u];
                let nk = children.len();
                let t0 = theta_off[u];
                let si = sum_idx[u];
                let kz = st.zvars[u].len();
                for i in 0..b {
                    log_gamma.clear();
                    log_gamma.extend(children.iter().map(|&c| lv[c * b + i]));
                    let cond = condition_log_weights(&lw[off..off + nk], &log_gamma);
                    if cond.degenerate {
                        fallbacks += 1;
                        degenerate[si * b + i] = true;
                    }
                    let logs: Vec<T> = cond
                        .weights
                        .iter()
                        .map(|&w| if w > T::zero() { w.ln() } else { T::neg_infinity() })
                        .collect();
                    let k = gumbel_argmax(&logs, rng);
                    theta[t0 + i * nk..t0 + (i + 1) * nk].copy_from_slice(&cond.weights);
                    chosen[si * b + i] = k as u32;
                    let c0 = entry_off[children[k]];
                    for j in 0..kz {
                        let src = ((c0 + j) * b + i) * 3;
                        let dst = ((e0 + j) * b + i) * 3;
                        samples.copy_within(src..src + 3, dst);
                    }
                }
            }
        }
    }
    let mut state = EncodeState {
        cache,
        rows: b,
        entry_off,
        samples,
        eps,
        theta_off,
        theta,
        sum_idx,
        chosen,
        degenerate,
        trace: SampleTrace {
            fallbacks,
            ..SampleTrace::default()
        },
    };
    state.trace = build_trace(st, &state, fallbacks);
    Ok(state)
}

fn build_trace<T: Scalar>(st: &Structure, s: &EncodeState<T>, fallbacks: usize) -> SampleTrace {
    let b = s.rows;
    let nz = st.embedding_vars.len();
    let mut chosen = Vec::with_capacity(b);
    let mut leaves = Vec::with_capacity(b);
    let mut draws = Vec::with_capacity(b);
    let mut noise = Vec::with_capacity(b);
    let root = st.units.len() - 1;
    let mut stack = Vec::new();
    for i in 0..b {
        let mut path = Vec::new();
        let mut reached = vec![NONE; nz];
        if s.entry_off[root] != NONE {
            stack.push(root);
        }
        while let Some(u) = stack.pop() {
            match &st.units[u] {
                Unit::Input { .. } => reached[st.zvars[u][0]] = u,
                Unit::Product { children } => {
                    stack.extend(children.iter().rev().filter(|&&c| s.entry_off[c] != NONE));
                }
                Unit::Sum { children } => {
                    let k = s.chosen[s.sum_idx[u] * b + i] as usize;
                    path.push((u, k));
                    stack.push(children[k]);
                }
            }
        }
        chosen.push(path);
        leaves.push(reached);
        let mut d = Vec::new();
        let mut e = Vec::new();
        for (u, unit) in st.units.iter().enumerate() {
            if s.entry_off[u] == NONE {
                continue;
            }
            match unit {
                Unit::Sum { .. } => d.push((u, s.chosen[s.sum_idx[u] * b + i] as usize)),
                Unit::Input { .. } => e.push((u, s.eps[s.entry_off[u] * b + i].f64())),
                Unit::Product { .. } => {}
            }
        }
        draws.push(d);
        noise.push(e);
    }
    SampleTrace {
        chosen,
        leaves,
        draws,
        noise,
        fallbacks,
    }
}

/// Vector-Jacobian product of the encoding with respect to the sum logits
/// and leaf parameters. `g` is laid out like [`EncodeState::output`].
pub(crate) fn encode_backward<T: Scalar>(
    st: &Structure,
    leaf: &[T],
    data: &Evidence<T>,
    s: &EncodeState<T>,
    g: &[T],
    grad_logits: &mut [T],
    grad_leaf: &mut [T],
) {
    let b = s.rows;
    let nz = st.embedding_vars.len();
    let root = st.units.len() - 1;
    let mut adj = vec![T::zero(); s.samples.len()];
    if nz > 0 {
        let e0 = s.entry_off[root];
        for j in 0..nz {
            for i in 0..b {
                for comp in 0..3 {
                    adj[((e0 + j) * b + i) * 3 + comp] = g[(comp * b + i) * nz + j];
                }
            }
        }
    }
    let lw = &s.cache.log_weights;
    let mut marg_adj = vec![T::zero(); s.cache.log_values.len()];
    let mut any_marg = false;
    let mut ds = Vec::new();
    let mut local = Vec::new();
    for (u, unit) in st.units.iter().enumerate().rev() {
        let e0 = s.entry_off[u];
        if e0 == NONE {
            continue;
        }
        let kz = st.zvars[u].len();
        match unit {
            Unit::Input { .. } => {
                let off = st.offsets[u];
                let sigma = leaf[off + 1].exp();
                for i in 0..b {
                    let a = &adj[(e0 * b + i) * 3..(e0 * b + i) * 3 + 3];
                    grad_leaf[off] += a[0] + a[1];
                    grad_leaf[off + 1] += a[0] * sigma * s.eps[e0 * b + i] + a[2];
                }
            }
            Unit::Product { children } => {
                for &c in children {
                    if s.entry_off[c] == NONE {
                        continue;
                    }
                    let pos = child_positions(&st.zvars[u], &st.zvars[c]);
                    let c0 = s.entry_off[c];
                    for (j, &p) in pos.iter().enumerate() {
                        for t in 0..b * 3 {
                            let v = adj[(e0 + p) * b * 3 + t];
                            adj[(c0 + j) * b * 3 + t] += v;
                        }
                    }
                }
            }
            Unit::Sum { children } => {
                let off = st.offsets[u];
                let nk = children.len();
                let t0 = s.theta_off[u];
                let si = s.sum_idx[u];
                for i in 0..b {
                    local.clear();
                    for j in 0..kz {
                        local.extend_from_slice(&adj[((e0 + j) * b + i) * 3..((e0 + j) * b + i) * 3 + 3]);
                    }
                    if local.iter().all(|&a| a == T::zero()) {
                        continue;
                    }
                    let au = |j: usize, comp: usize| local[j * 3 + comp];
                    ds.clear();
                    for &c in children {
                        let c0 = s.entry_off[c];
                        let mut acc = T::zero();
                        for j in 0..kz {
                            for comp in 0..3 {
                                acc += au(j, comp) * s.samples[((c0 + j) * b + i) * 3 + comp];
                            }
                        }
                        ds.push(acc);
                    }
                    let th = &s.theta[t0 + i * nk..t0 + (i + 1) * nk];
                    let dot: T = th.iter().zip(&ds).map(|(&t, &d)| t * d).sum();
                    let mut dl_sum = T::zero();
                    let degenerate = s.degenerate[si * b + i];
                    for k in 0..nk {
                        let dl = th[k] * (ds[k] - dot);
                        dl_sum += dl;
                        grad_logits[off + k] += dl;
                        if !degenerate && dl != T::zero() {
                            marg_adj[children[k] * b + i] += dl;
                            any_marg = true;
                        }
                    }
                    for k in 0..nk {
                        grad_logits[off + k] -= lw[off + k].exp() * dl_sum;
                    }
                    let k = s.chosen[si * b + i] as usize;
                    let c0 = s.entry_off[children[k]];
                    for j in 0..kz {
                        for comp in 0..3 {
                            let v = au(j, comp);
                            adj[((c0 + j) * b + i) * 3 + comp] += v;
                        }
                    }
                }
            }
        }
    }
    if any_marg {
        let inputs = Inputs { data, z: None };
        let mut grads = Grads {
            logits: grad_logits,
            leaf: grad_leaf,
            z: None,
        };
        marginal_backward(st, leaf, inputs, &s.cache, &mut marg_adj, &mut grads);
    }
}

pub(crate) struct EncodeOp<T> {
    pub st: Arc<Structure>,
    pub data: Evidence<T>,
    pub state: EncodeState<T>,
}

impl<T: Scalar> CustomOp<T> for EncodeOp<T> {
    fn name(&self) -> &'static str {
        "encode"
    }

    fn backward(&self, g: &Array<T>, parents: &[&Array<T>], _out: &Array<T>) -> Result<Vec<Option<Array<T>>>> {
        let mut gl = Array::zeros(parents[0].shape());
        let mut gp = Array::zeros(parents[1].shape());
        encode_backward(
            &self.st,
            parents[1].data(),
            &self.data,
            &self.state,
            g.data(),
            gl.data_mut(),
            gp.data_mut(),
        );
        Ok(vec![Some(gl), Some(gp)])
    }
}
