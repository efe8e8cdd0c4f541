//! Probabilistic circuits over data variables `X` and embedding variables `Z`.
//!
//! A [`Circuit`] is a topologically ordered DAG of input, sum, and product
//! units whose root is the last unit. Structure is fixed after construction;
//! trainable parameters live in two flat tensors ([`CircuitParams`]) that the
//! optimizer updates between inference passes:
//!
//! * `sum_logits`: unconstrained reals, one per sum edge, normalized by a
//!   softmax per sum unit at evaluation time;
//! * `leaf`: the input-unit parameters (a logit for Bernoulli and Binomial
//!   units, `(mean, log_std)` for Gaussian units).

mod scope;
mod validate;

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use scope::Scope;
pub use validate::{validate_structure, ValidationReport, Violation};

/// Lower clamp applied to Gaussian log standard deviations after each step.
pub const LOG_STD_MIN: f64 = -7.0;
/// Upper clamp applied to Gaussian log standard deviations after each step.
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarRole {
    Data,
    Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariableId {
    pub index: usize,
    pub role: VarRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafFamily {
    Bernoulli,
    Binomial { n: u32 },
    Gaussian,
}

impl LeafFamily {
    pub fn num_params(&self) -> usize {
        match self {
            LeafFamily::Bernoulli | LeafFamily::Binomial { .. } => 1,
            LeafFamily::Gaussian => 2,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, LeafFamily::Gaussian)
    }

    /// Number of support points for discrete families.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            LeafFamily::Bernoulli => Some(2),
            LeafFamily::Binomial { n } => Some(*n as usize + 1),
            LeafFamily::Gaussian => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Unit {
    Input { var: usize, family: LeafFamily },
    Sum { children: Vec<usize> },
    Product { children: Vec<usize> },
}

impl Unit {
    pub fn children(&self) -> &[usize] {
        match self {
            Unit::Input { .. } => &[],
            Unit::Sum { children } | Unit::Product { children } => children,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CircuitParams<T> {
    pub sum_logits: Vec<T>,
    pub leaf: Vec<T>,
}

/// Which flat parameter tensor a [`ParamView`] indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamTensor {
    SumLogits,
    Leaf,
}

/// The trainable parameters owned by one unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamView {
    pub unit: usize,
    pub tensor: ParamTensor,
    pub range: Range<usize>,
}

/// Free-form provenance carried into checkpoints.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CircuitMeta {
    pub builder: String,
    pub embedding_dim: usize,
}

/// Incrementally assembles a unit list in topological order.
#[derive(Clone, Debug, Default)]
pub struct CircuitBuilder {
    roles: Vec<VarRole>,
    units: Vec<Unit>,
}

impl CircuitBuilder {
    pub fn new(roles: Vec<VarRole>) -> Self {
        Self {
            roles,
            units: Vec::new(),
        }
    }

    /// `num_data` data variables followed by `num_embedding` embedding variables.
    pub fn with_counts(num_data: usize, num_embedding: usize) -> Self {
        let mut roles = vec![VarRole::Data; num_data];
        roles.extend(std::iter::repeat_n(VarRole::Embedding, num_embedding));
        Self::new(roles)
    }

    pub fn input(&mut self, var: usize, family: LeafFamily) -> usize {
        self.units.push(Unit::Input { var, family });
        self.units.len() - 1
    }

    pub fn sum(&mut self, children: Vec<usize>) -> usize {
        self.units.push(Unit::Sum { children });
        self.units.len() - 1
    }

    pub fn product(&mut self, children: Vec<usize>) -> usize {
        self.units.push(Unit::Product { children });
        self.units.len() - 1
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn roles(&self) -> &[VarRole] {
        &self.roles
    }

    /// Validated circuit with zero-initialized parameters.
    pub fn build<T: Scalar>(self, meta: CircuitMeta) -> Result<Circuit<T>> {
        Circuit::new(self.units, self.roles, meta)
    }
}

/// Immutable structure shared between a circuit and the tape ops that
/// reference it.
#[derive(Debug)]
pub(crate) struct Structure {
    pub(crate) units: Vec<Unit>,
    pub(crate) roles: Vec<VarRole>,
    pub(crate) role_pos: Vec<usize>,
    pub(crate) data_vars: Vec<usize>,
    pub(crate) embedding_vars: Vec<usize>,
    pub(crate) scopes: Vec<Scope>,
    pub(crate) offsets: Vec<usize>,
    /// Embedding positions (within the embedding role) in each unit's scope, sorted.
    pub(crate) zvars: Vec<Vec<usize>>,
    /// `ln k!` for `k` up to the largest binomial count in the circuit.
    pub(crate) ln_factorial: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Circuit<T> {
    pub(crate) st: Arc<Structure>,
    pub params: CircuitParams<T>,
    pub meta: CircuitMeta,
}

impl<T: Scalar> Circuit<T> {
    /// Builds a circuit and rejects it unless it is smooth and decomposable.
    pub fn new(units: Vec<Unit>, roles: Vec<VarRole>, meta: CircuitMeta) -> Result<Self> {
        let report = validate_structure(&units, &roles)?;
        if !report.is_valid() {
            return Err(Error::InvalidStructure(report.to_string()));
        }
        Ok(Self::assemble(units, roles, meta))
    }

    fn assemble(units: Vec<Unit>, roles: Vec<VarRole>, meta: CircuitMeta) -> Self {
        let nv = roles.len();
        let mut role_pos = vec![0; nv];
        let mut data_vars = Vec::new();
        let mut embedding_vars = Vec::new();
        for (v, r) in roles.iter().enumerate() {
            match r {
                VarRole::Data => {
                    role_pos[v] = data_vars.len();
                    data_vars.push(v);
                }
                VarRole::Embedding => {
                    role_pos[v] = embedding_vars.len();
                    embedding_vars.push(v);
                }
            }
        }
        let scopes = validate::compute_scopes(&units, nv);
        let mut offsets = Vec::with_capacity(units.len());
        let (mut n_sum, mut n_leaf) = (0, 0);
        for u in &units {
            match u {
                Unit::Input { family, .. } => {
                    offsets.push(n_leaf);
                    n_leaf += family.num_params();
                }
                Unit::Sum { children } => {
                    offsets.push(n_sum);
                    n_sum += children.len();
                }
                Unit::Product { .. } => offsets.push(0),
            }
        }
        let zvars = scopes
            .iter()
            .map(|s| {
                s.iter()
                    .filter(|&v| roles[v] == VarRole::Embedding)
                    .map(|v| role_pos[v])
                    .collect()
            })
            .collect();
        let max_n = units
            .iter()
            .filter_map(|u| match u {
                Unit::Input {
                    family: LeafFamily::Binomial { n },
                    ..
                } => Some(*n as usize),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut ln_factorial = vec![0.0; max_n + 1];
        for k in 1..=max_n {
            ln_factorial[k] = ln_factorial[k - 1] + (k as f64).ln();
        }
        Self {
            st: Arc::new(Structure {
                units,
                roles,
                role_pos,
                data_vars,
                embedding_vars,
                scopes,
                offsets,
                zvars,
                ln_factorial,
            }),
            params: CircuitParams {
                sum_logits: vec![T::zero(); n_sum],
                leaf: vec![T::zero(); n_leaf],
            },
            meta,
        }
    }

    pub fn units(&self) -> &[Unit] {
        &self.st.units
    }

    pub fn num_units(&self) -> usize {
        self.st.units.len()
    }

    pub fn root(&self) -> usize {
        self.st.units.len() - 1
    }

    pub fn roles(&self) -> &[VarRole] {
        &self.st.roles
    }

    pub fn num_vars(&self) -> usize {
        self.st.roles.len()
    }

    pub fn num_data(&self) -> usize {
        self.st.data_vars.len()
    }

    pub fn num_embedding(&self) -> usize {
        self.st.embedding_vars.len()
    }

    /// Global variable indices of the data variables, in data order.
    pub fn data_vars(&self) -> &[usize] {
        &self.st.data_vars
    }

    pub fn embedding_vars(&self) -> &[usize] {
        &self.st.embedding_vars
    }

    pub fn variable(&self, var: usize) -> VariableId {
        VariableId {
            index: var,
            role: self.st.roles[var],
        }
    }

    /// Position of a global variable within its role.
    pub fn role_position(&self, var: usize) -> usize {
        self.st.role_pos[var]
    }

    pub fn scope_of(&self, unit: usize) -> &Scope {
        &self.st.scopes[unit]
    }

    /// Positions (within the embedding role) of the embedding variables in
    /// a unit's scope, ascending.
    pub fn embedding_positions(&self, unit: usize) -> &[usize] {
        &self.st.zvars[unit]
    }

    pub fn validate(&self) -> ValidationReport {
        validate_structure(&self.st.units, &self.st.roles).expect("constructed circuits are acyclic")
    }

    pub fn num_params(&self) -> usize {
        self.params.sum_logits.len() + self.params.leaf.len()
    }

    /// Every trainable parameter block, once, in unit order.
    pub fn parameter_views(&self) -> Vec<ParamView> {
        self.st
            .units
            .iter()
            .enumerate()
            .filter_map(|(u, unit)| {
                let off = self.st.offsets[u];
                match unit {
                    Unit::Input { family, .. } => Some(ParamView {
                        unit: u,
                        tensor: ParamTensor::Leaf,
                        range: off..off + family.num_params(),
                    }),
                    Unit::Sum { children } => Some(ParamView {
                        unit: u,
                        tensor: ParamTensor::SumLogits,
                        range: off..off + children.len(),
                    }),
                    Unit::Product { .. } => None,
                }
            })
            .collect()
    }

    pub fn sum_logits(&self, unit: usize) -> &[T] {
        let n = self.st.units[unit].children().len();
        let off = self.st.offsets[unit];
        &self.params.sum_logits[off..off + n]
    }

    /// Normalized mixture weights of a sum unit.
    pub fn sum_weights(&self, unit: usize) -> Vec<T> {
        let logits = self.sum_logits(unit);
        let lse = crate::scalar::logsumexp(logits);
        logits.iter().map(|&l| (l - lse).exp()).collect()
    }

    /// Sets a sum unit's logits to `ln(probs)`.
    pub fn set_sum_weights(&mut self, unit: usize, probs: &[f64]) -> Result<()> {
        let n = self.st.units[unit].children().len();
        if !matches!(self.st.units[unit], Unit::Sum { .. }) || probs.len() != n {
            return Err(Error::invalid(format!(
                "unit {unit} is not a sum unit with {} children",
                probs.len()
            )));
        }
        let off = self.st.offsets[unit];
        for (dst, &p) in self.params.sum_logits[off..off + n].iter_mut().zip(probs) {
            *dst = T::c(p.ln());
        }
        Ok(())
    }

    pub fn leaf_params(&self, unit: usize) -> &[T] {
        match &self.st.units[unit] {
            Unit::Input { family, .. } => {
                let off = self.st.offsets[unit];
                &self.params.leaf[off..off + family.num_params()]
            }
            _ => &[],
        }
    }

    /// Sets raw leaf parameters (logit, or mean and log-std).
    pub fn set_leaf_params(&mut self, unit: usize, values: &[f64]) -> Result<()> {
        let Unit::Input { family, .. } = &self.st.units[unit] else {
            return Err(Error::invalid(format!("unit {unit} is not an input unit")));
        };
        if values.len() != family.num_params() {
            return Err(Error::invalid("wrong number of leaf parameters"));
        }
        let off = self.st.offsets[unit];
        for (dst, &v) in self.params.leaf[off..off + values.len()].iter_mut().zip(values) {
            *dst = T::c(v);
        }
        Ok(())
    }

    /// Draws parameters: sum logits ~ U(-0.01, 0.01), Bernoulli/Binomial
    /// logits ~ U(-0.1, 0.1), Gaussian means ~ N(0, 0.5^2), log-std = 0.
    pub fn init_params(&mut self, rng: &mut impl Rng) {
        let sum_init = Uniform::new(-0.01, 0.01).expect("valid range");
        let logit_init = Uniform::new(-0.1, 0.1).expect("valid range");
        let mean_init = Normal::new(0.0, 0.5).expect("valid sigma");
        for l in self.params.sum_logits.iter_mut() {
            *l = T::c(sum_init.sample(rng));
        }
        for (u, unit) in self.st.units.iter().enumerate() {
            if let Unit::Input { family, .. } = unit {
                let off = self.st.offsets[u];
                match family {
                    LeafFamily::Bernoulli | LeafFamily::Binomial { .. } => {
                        self.params.leaf[off] = T::c(logit_init.sample(rng));
                    }
                    LeafFamily::Gaussian => {
                        self.params.leaf[off] = T::c(mean_init.sample(rng));
                        self.params.leaf[off + 1] = T::zero();
                    }
                }
            }
        }
    }

    /// Clamps every Gaussian log-std into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
        for (u, unit) in self.st.units.iter().enumerate() {
            if let Unit::Input {
                family: LeafFamily::Gaussian,
                ..
            } = unit
            {
                let p = &mut self.params.leaf[self.st.offsets[u] + 1];
                *p = p.max(lo).min(hi);
            }
        }
    }

    /// Input units whose variable is an embedding variable.
    pub fn embedding_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.st.units.iter().enumerate().filter_map(|(u, unit)| match unit {
            Unit::Input { var, .. } if self.st.roles[*var] == VarRole::Embedding => Some(u),
            _ => None,
        })
    }

    /// Same structure with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Circuit<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::c(x.f64())).collect();
        Circuit {
            st: Arc::clone(&self.st),
            params: CircuitParams {
                sum_logits: conv(&self.params.sum_logits),
                leaf: conv(&self.params.leaf),
            },
            meta: self.meta.clone(),
        }
    }
}
