use crate::autodiff::Array;
use crate::circuit::{Circuit, Unit, VarRole};
use crate::error::Result;
use crate::scalar::Scalar;

use super::forward::{forward, leaf_mode, Inputs, Semiring};
use super::{check_evidence, Evidence};

/// Completion of each row under the max-product semiring.
#[derive(Clone, Debug, PartialEq)]
pub struct MpeState<T> {
    /// `[rows, num_data]`; observed entries are kept as given.
    pub x: Vec<T>,
    /// `[rows, num_embedding]`.
    pub z: Vec<T>,
    /// Log joint density of the completed row along the selected tree.
    pub log_value: Vec<T>,
}

/// Max-product evaluation followed by an argmax traversal from the root.
/// Sum units keep their highest-scoring child (lowest index on ties) and
/// unobserved leaves take their mode.
pub fn mpe<T: Scalar>(c: &Circuit<T>, e: &Evidence<T>) -> Result<MpeState<T>> {
    check_evidence(c, e)?;
    let st = &c.st;
    let f = forward(
        st,
        &c.params.sum_logits,
        &c.params.leaf,
        Inputs { data: e, z: None },
        Semiring::Max,
    )?;
    let b = e.rows();
    let (nd, nz) = (c.num_data(), c.num_embedding());
    let mut x = vec![T::zero(); b * nd];
    let mut z = vec![T::zero(); b * nz];
    let mut stack = Vec::new();
    for i in 0..b {
        stack.push(c.root());
        while let Some(u) = stack.pop() {
            match &st.units[u] {
                Unit::Sum { children } => {
                    let off = st.offsets[u];
                    let mut best = 0;
                    let mut best_v = T::neg_infinity();
                    for (k, &ch) in children.iter().enumerate() {
                        let v = f.log_weights[off + k] + f.log_value(ch, i);
                        if v > best_v {
                            best = k;
                            best_v = v;
                        }
                    }
                    stack.push(children[best]);
                }
                Unit::Product { children } => stack.extend(children.iter().rev()),
                Unit::Input { var, family } => {
                    let p = st.role_pos[*var];
                    match st.roles[*var] {
                        VarRole::Data => {
                            x[i * nd + p] = match e.get(i, p) {
                                Some(v) => v,
                                None => leaf_mode(*family, c.leaf_params(u), &st.ln_factorial).0,
                            }
                        }
                        VarRole::Embedding => z[i * nz + p] = leaf_mode(*family, c.leaf_params(u), &st.ln_factorial).0,
                    }
                }
            }
        }
    }
    Ok(MpeState {
        x,
        z,
        log_value: f.root_values().to_vec(),
    })
}

/// Deterministic encoding: the embedding part of [`mpe`], shape `[rows, num_embedding]`.
pub fn mpe_encode<T: Scalar>(c: &Circuit<T>, e: &Evidence<T>) -> Result<Array<T>> {
    let s = mpe(c, e)?;
    Array::new(vec![e.rows(), c.num_embedding()], s.z)
}
