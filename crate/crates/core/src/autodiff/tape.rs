use std::cell::{Ref, RefCell};
use std::fmt;

use super::array::{split_axis, Array};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An operation with a hand-written vector-Jacobian product, recorded on the
/// tape like any built-in op.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each parent, in the order the parents were
    /// passed to [`Tape::custom`]. `None` means no contribution.
    fn backward(&self, grad_out: &Array<T>, parents: &[&Array<T>], out: &Array<T>) -> Result<Vec<Option<Array<T>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    LogSumExp,
    Max,
}

enum Op<T: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, T),
    Exp(usize),
    Log(usize),
    Neg(usize),
    MaxConst(usize, T),
    Sigmoid(usize),
    LeakyRelu(usize, T),
    Square(usize),
    Reduce {
        src: usize,
        kind: ReduceKind,
        axis: Option<usize>,
        argmax: Vec<usize>,
    },
    MatMul(usize, usize),
    ConvTranspose2d {
        x: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Reshape(usize),
    BroadcastTo(usize),
    Narrow {
        src: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    StraightThrough(usize),
    Custom {
        parents: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-forward-pass recording of array operations for reverse-mode
/// differentiation. A tape is built for one step and dropped afterwards.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Array<T>>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn binary_shape(op: &'static str, a: &[usize], an: usize, b: &[usize], bn: usize) -> Result<Vec<usize>> {
    if a == b || bn == 1 {
        Ok(a.to_vec())
    } else if an == 1 {
        Ok(b.to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Applies `f` elementwise with scalar broadcasting on either side.
fn broadcast_zip<T: Scalar>(a: &Array<T>, b: &Array<T>, shape: Vec<usize>, f: impl Fn(T, T) -> T) -> Array<T> {
    let n: usize = shape.iter().product();
    let data = if a.len() == b.len() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let x = a.data()[0];
        b.data().iter().map(|&y| f(x, y)).collect()
    };
    debug_assert_eq!(n, a.len().max(b.len()));
    Array::new(shape, data).expect("broadcast shape")
}

/// Reduces an output-shaped gradient to a parent's shape (sums when the parent
/// was a broadcast scalar).
fn unbroadcast<T: Scalar>(g: Array<T>, parent: &Array<T>) -> Array<T> {
    if g.len() == parent.len() {
        g.reshape(parent.shape()).expect("same size")
    } else {
        Array::full(parent.shape(), g.sum())
    }
}

pub(crate) fn reduce_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => vec![],
        Some(ax) => {
            let mut s = shape.to_vec();
            s.remove(ax);
            s
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Constant input, never receives gradient.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Array::scalar(v))
    }

    /// Trainable input whose gradient is retained after [`Tape::backward`].
    pub fn param(&self, value: Array<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a custom op. `requires_grad` follows the parents.
    pub fn custom(&self, parents: &[Var<'_, T>], value: Array<T>, op: Box<dyn CustomOp<T>>) -> Var<'_, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let rg = ids.iter().any(|&i| self.rg(i));
        self.push(value, Op::Custom { parents: ids, op }, rg)
    }

    pub fn value(&self, v: Var<'_, T>) -> Ref<'_, Array<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Accumulated gradient of `v`; zeros when nothing flowed into it.
    pub fn grad(&self, v: Var<'_, T>) -> Array<T> {
        let grads = self.grads.borrow();
        match grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array::zeros(self.nodes.borrow()[v.id].value.shape()),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Reverse pass from a scalar root. Gradients accumulate across calls.
    pub fn backward(&self, root: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut local: Vec<Option<Array<T>>> = (0..=root.id).map(|_| None).collect();
        local[root.id] = Some(Array::ones(&root_shape));
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize_with(nodes.len(), || None);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (pid, pg) in backward_op(&nodes, id, &g)? {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut local[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn backward_op<T: Scalar>(nodes: &[Node<T>], id: usize, g: &Array<T>) -> Result<Vec<(usize, Array<T>)>> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let out = &node.value;
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, unbroadcast(g.clone(), val(*a))),
            (*b, unbroadcast(g.clone(), val(*b))),
        ],
        Op::Sub(a, b) => vec![
            (*a, unbroadcast(g.clone(), val(*a))),
            (*b, unbroadcast(g.map(|x| -x), val(*b))),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = broadcast_zip(g, vb, g.shape().to_vec(), |gg, y| gg * y);
            let gb = broadcast_zip(g, va, g.shape().to_vec(), |gg, x| gg * x);
            vec![(*a, unbroadcast(ga, va)), (*b, unbroadcast(gb, vb))]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = broadcast_zip(g, vb, g.shape().to_vec(), |gg, y| gg / y);
            // d(a/b)/db = -out / b
            let tmp = broadcast_zip(out, vb, g.shape().to_vec(), |o, y| -o / y);
            let gb = g.zip_map(&tmp, |gg, t| gg * t);
            vec![(*a, unbroadcast(ga, va)), (*b, unbroadcast(gb, vb))]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, c) => vec![(*a, g.map(|x| x * *c))],
        Op::Exp(a) => vec![(*a, g.zip_map(out, |gg, o| gg * o))],
        Op::Log(a) => vec![(*a, g.zip_map(val(*a), |gg, x| gg / x))],
        Op::Neg(a) => vec![(*a, g.map(|x| -x))],
        Op::MaxConst(a, c) => vec![(*a, g.zip_map(val(*a), |gg, x| if x > *c { gg } else { T::zero() }))],
        Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |gg, o| gg * o * (T::one() - o)))],
        Op::LeakyRelu(a, alpha) => vec![(
            *a,
            g.zip_map(val(*a), |gg, x| if x > T::zero() { gg } else { gg * *alpha }),
        )],
        Op::Square(a) => vec![(*a, g.zip_map(val(*a), |gg, x| T::c(2.0) * x * gg))],
        Op::Reduce {
            src,
            kind,
            axis,
            argmax,
        } => {
            let x = val(*src);
            let (outer, n, inner) = match axis {
                None => (1, x.len(), 1),
                Some(ax) => split_axis(x.shape(), *ax),
            };
            let mut gx = Array::zeros(x.shape());
            let xd = x.data();
            let gd = gx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let gi = g.data()[o * inner + i];
                    let oi = out.data()[o * inner + i];
                    match kind {
                        ReduceKind::Sum => {
                            for k in 0..n {
                                gd[(o * n + k) * inner + i] = gi;
                            }
                        }
                        ReduceKind::Mean => {
                            let s = gi / T::from_usize_lossy(n);
                            for k in 0..n {
                                gd[(o * n + k) * inner + i] = s;
                            }
                        }
                        ReduceKind::LogSumExp => {
                            if oi.is_finite() {
                                for k in 0..n {
                                    let f = (o * n + k) * inner + i;
                                    gd[f] = gi * (xd[f] - oi).exp();
                                }
                            }
                        }
                        ReduceKind::Max => {
                            let k = argmax[o * inner + i];
                            gd[(o * n + k) * inner + i] = gi;
                        }
                    }
                }
            }
            vec![(*src, gx)]
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            let mut ga = vec![T::zero(); m * k];
            let mut gb = vec![T::zero(); k * n];
            let (ad, bd, gd) = (va.data(), vb.data(), g.data());
            for i in 0..m {
                for j in 0..n {
                    let gij = gd[i * n + j];
                    if gij == T::zero() {
                        continue;
                    }
                    for p in 0..k {
                        ga[i * k + p] += gij * bd[p * n + j];
                        gb[p * n + j] += ad[i * k + p] * gij;
                    }
                }
            }
            vec![
                (*a, Array::new(va.shape().to_vec(), ga)?),
                (*b, Array::new(vb.shape().to_vec(), gb)?),
            ]
        }
        Op::ConvTranspose2d { x, k, stride, pad } => {
            let (gx, gk) = super::conv::conv_transpose2d_backward(val(*x), val(*k), g, *stride, *pad);
            vec![(*x, gx), (*k, gk)]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
        Op::BroadcastTo(a) => {
            let src = val(*a);
            let map = broadcast_index_map(src.shape(), out.shape());
            let mut gs = Array::zeros(src.shape());
            for (f, &si) in map.iter().enumerate() {
                gs.data_mut()[si] += g.data()[f];
            }
            vec![(*a, gs)]
        }
        Op::Narrow { src, axis, start } => {
            let x = val(*src);
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let len = out.shape()[*axis];
            let mut gx = Array::zeros(x.shape());
            for o in 0..outer {
                for k in 0..len {
                    let dst = (o * n + start + k) * inner;
                    let srcoff = (o * len + k) * inner;
                    gx.data_mut()[dst..dst + inner].copy_from_slice(&g.data()[srcoff..srcoff + inner]);
                }
            }
            vec![(*src, gx)]
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut res = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let len = pv.shape()[*axis];
                let mut gp = Array::zeros(pv.shape());
                for o in 0..outer {
                    let src = (o * total + offset) * inner;
                    let dst = o * len * inner;
                    gp.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                offset += len;
                res.push((p, gp));
            }
            res
        }
        Op::StraightThrough(theta) => vec![(*theta, g.clone())],
        Op::Custom { parents, op } => {
            let pv: Vec<&Array<T>> = parents.iter().map(|&p| val(p)).collect();
            let gs = op.backward(g, &pv, out)?;
            parents
                .iter()
                .zip(gs)
                .filter_map(|(&p, gp)| gp.map(|gp| (p, gp)))
                .collect()
        }
    })
}

/// For each flat output index, the flat source index under right-aligned
/// broadcasting.
fn broadcast_index_map(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let rank = dst.len();
    let pad = rank - src.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..src.len()).rev() {
        src_strides[d + pad] = if src[d] == 1 { 0 } else { stride };
        stride *= src[d];
    }
    let n: usize = dst.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < dst[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Array<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a one-element node.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    pub fn grad(&self) -> Array<T> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let v = self.tape.nodes.borrow()[self.id].value.map(f);
        self.tape.push(v, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let shape = binary_shape(name, a.shape(), a.len(), b.shape(), b.len())?;
            broadcast_zip(a, b, shape, f)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, o: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(o, "add", |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(&self, o: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(o, "sub", |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(&self, o: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(o, "mul", |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(&self, o: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(o, "div", |a, b| a / b, Op::Div(self.id, o.id))
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn mul_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(Op::MulScalar(self.id, c), |x| x * c)
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    /// Natural log; errors on any non-positive entry.
    pub fn log(&self) -> Result<Var<'t, T>> {
        {
            let nodes = self.tape.nodes.borrow();
            if let Some((i, &x)) = nodes[self.id]
                .value
                .data()
                .iter()
                .enumerate()
                .find(|(_, &x)| !(x > T::zero()))
            {
                return Err(Error::NonPositiveLog {
                    index: i,
                    value: x.f64(),
                });
            }
        }
        Ok(self.unary(Op::Log(self.id), |x| x.ln()))
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    /// `max(x, c)` elementwise.
    pub fn max_const(&self, c: T) -> Var<'t, T> {
        self.unary(Op::MaxConst(self.id, c), |x| x.max(c))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.max_const(T::zero())
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), crate::scalar::sigmoid)
    }

    pub fn leaky_relu(&self, alpha: T) -> Var<'t, T> {
        self.unary(
            Op::LeakyRelu(self.id, alpha),
            |x| if x > T::zero() { x } else { alpha * x },
        )
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    fn reduce(&self, kind: ReduceKind, axis: Option<usize>) -> Result<Var<'t, T>> {
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if let Some(ax) = axis {
                if ax >= x.rank() {
                    return Err(Error::InvalidAxis {
                        axis: ax,
                        rank: x.rank(),
                    });
                }
            }
            let (outer, n, inner) = match axis {
                None => (1, x.len(), 1),
                Some(ax) => split_axis(x.shape(), ax),
            };
            if n == 0 {
                return Err(Error::EmptyReduction);
            }
            let mut out = Vec::with_capacity(outer * inner);
            let mut am = Vec::new();
            let mut buf = vec![T::zero(); n];
            for o in 0..outer {
                for i in 0..inner {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = x.data()[(o * n + k) * inner + i];
                    }
                    out.push(match kind {
                        ReduceKind::Sum => buf.iter().copied().sum(),
                        ReduceKind::Mean => buf.iter().copied().sum::<T>() / T::from_usize_lossy(n),
                        ReduceKind::LogSumExp => crate::scalar::logsumexp(&buf),
                        ReduceKind::Max => {
                            let k = crate::scalar::argmax(&buf);
                            am.push(k);
                            buf[k]
                        }
                    });
                }
            }
            (Array::new(reduce_shape(x.shape(), axis), out)?, am)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Reduce {
                src: self.id,
                kind,
                axis,
                argmax,
            },
            rg,
        ))
    }

    /// Sum over one axis (removed from the shape) or all elements.
    pub fn sum(&self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Sum, axis)
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::Mean, axis)
    }

    pub fn logsumexp(&self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.reduce(ReduceKind::LogSumExp, axis)
    }

    /// Max and its argmax (lowest index on ties). The argmax is not
    /// differentiable.
    pub fn max(&self, axis: Option<usize>) -> Result<(Var<'t, T>, Vec<usize>)> {
        let v = self.reduce(ReduceKind::Max, axis)?;
        let am = match &self.tape.nodes.borrow()[v.id].op {
            Op::Reduce { argmax, .. } => argmax.clone(),
            _ => unreachable!(),
        };
        Ok((v, am))
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        self.sum(None).expect("non-empty")
    }

    pub fn matmul(&self, o: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[o.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![T::zero(); m * n];
            let (ad, bd) = (a.data(), b.data());
            for i in 0..m {
                for p in 0..k {
                    let x = ad[i * k + p];
                    if x == T::zero() {
                        continue;
                    }
                    let row = &bd[p * n..(p + 1) * n];
                    for (o, &y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
            }
            Array::new(vec![m, n], out)?
        };
        let rg = self.requires_grad() || o.requires_grad();
        Ok(self.tape.push(value, Op::MatMul(self.id, o.id), rg))
    }

    /// Transposed 2-D convolution. `self`: `[B, Cin, H, W]`, `kernel`:
    /// `[Cin, Cout, kh, kw]`; output `[B, Cout, (H-1)s - 2p + kh, (W-1)s - 2p + kw]`.
    pub fn conv_transpose2d(&self, kernel: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            super::conv::conv_transpose2d_forward(&nodes[self.id].value, &nodes[kernel.id].value, stride, pad)?
        };
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.tape.push(
            value,
            Op::ConvTranspose2d {
                x: self.id,
                k: kernel.id,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Explicit right-aligned broadcast (size-1 or missing leading dims are
    /// repeated).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let src = &nodes[self.id].value;
            let ok = src.rank() <= shape.len()
                && src
                    .shape()
                    .iter()
                    .rev()
                    .zip(shape.iter().rev())
                    .all(|(&s, &d)| s == d || s == 1);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: src.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            let map = broadcast_index_map(src.shape(), shape);
            Array::new(shape.to_vec(), map.iter().map(|&i| src.data()[i]).collect())?
        };
        Ok(self.tape.push(value, Op::BroadcastTo(self.id), self.requires_grad()))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if axis >= x.rank() {
                return Err(Error::InvalidAxis { axis, rank: x.rank() });
            }
            if start + len > x.shape()[axis] {
                return Err(Error::invalid(format!(
                    "narrow [{start}, {}) exceeds axis length {}",
                    start + len,
                    x.shape()[axis]
                )));
            }
            let (outer, n, inner) = split_axis(x.shape(), axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * n + start) * inner;
                out.extend_from_slice(&x.data()[s..s + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Array::new(shape, out)?
        };
        Ok(self.tape.push(
            value,
            Op::Narrow {
                src: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        ))
    }

    /// Index `i` along axis 0, dropping that axis.
    pub fn select(&self, i: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        self.narrow(0, i, 1)?.reshape(&shape[1..])
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        let v = self.value();
        self.tape.constant(v)
    }

    /// Node whose forward value is `sample` while the gradient flows to `self`
    /// unchanged; equivalent to `(sample - self).detach() + self` but with an
    /// exact forward value.
    pub fn straight_through(&self, sample: Array<T>) -> Result<Var<'t, T>> {
        if sample.shape() != self.shape().as_slice() {
            return Err(Error::ShapeMismatch {
                op: "straight_through",
                lhs: self.shape(),
                rhs: sample.shape().to_vec(),
            });
        }
        Ok(self
            .tape
            .push(sample, Op::StraightThrough(self.id), self.requires_grad()))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Scalar>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero parts"))?
        .tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let first = &nodes[parts[0].id].value;
        if axis >= first.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: first.rank(),
            });
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let s = nodes[p.id].value.shape();
            let mut a = s.to_vec();
            a[axis] = 0;
            let mut b = first.shape().to_vec();
            b[axis] = 0;
            if a != b {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = &nodes[p.id].value;
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        Array::new(shape, out)?
    };
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(tape.push(
        value,
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            axis,
        },
        rg,
    ))
}
