//! Reverse-mode differentiation on a recorded tape.
//!
//! Every operation on a [`Var`] appends a node holding its value and the ids
//! of its inputs. Node ids increase in creation order, so the tape is
//! topologically sorted by construction.
//!
//! Backward rules are themselves written as tape operations. With
//! `create_graph` set, [`Tape::grad`] records the gradient computation and the
//! returned gradients can be differentiated again (gradient penalties need
//! this). Without it, gradient nodes are stored as constants.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::sparse::SparseMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op<T: Element> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    ClampMin(usize, T),
    Reshape(usize),
    /// View input as `[outer, mid, inner]`, sum to `[mid]`.
    SumAxis {
        x: usize,
        outer: usize,
        inner: usize,
    },
    /// Broadcast a `[mid]` input to `[outer, mid, inner]`.
    Expand {
        x: usize,
        outer: usize,
        inner: usize,
    },
    Conv {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvInputGrad {
        g: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        g: usize,
        stride: usize,
        pad: usize,
    },
    Concat(Vec<usize>),
    SliceChannels {
        x: usize,
        start: usize,
    },
    PadChannels {
        x: usize,
        start: usize,
    },
    Sparse(usize, Rc<SparseMap<T>>),
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Reshape(..) => "reshape",
            Op::SumAxis { .. } => "sum",
            Op::Expand { .. } => "expand",
            Op::Conv { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv_transpose2d",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
            Op::Concat(..) => "concat",
            Op::SliceChannels { .. } => "slice_channels",
            Op::PadChannels { .. } => "pad_channels",
            Op::Sparse(..) => "sparse_map",
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::ClampMin(a, _)
            | Op::Reshape(a)
            | Op::Sparse(a, _) => vec![*a],
            Op::SumAxis { x, .. } | Op::Expand { x, .. } => vec![*x],
            Op::SliceChannels { x, .. } | Op::PadChannels { x, .. } => vec![*x],
            Op::Conv { x, w, .. } => vec![*x, *w],
            Op::ConvInputGrad { g, w, .. } => vec![*g, *w],
            Op::ConvWeightGrad { x, g, .. } => vec![*x, *g],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-owner recording of a differentiable computation.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    no_grad: Cell<bool>,
    non_finite: Cell<Option<&'static str>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

struct RestoreNoGrad<'a>(&'a Cell<bool>, bool);

impl Drop for RestoreNoGrad<'_> {
    fn drop(&mut self) {
        self.0.set(self.1);
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            no_grad: Cell::new(false),
            non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every recorded node. Requires that no [`Var`] is alive.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.non_finite.set(None);
        self.no_grad.set(false);
    }

    /// Input that gradients can be taken with respect to.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Input that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.note_finite(&value, "leaf");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Run `f` with recording disabled: every op result is a constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let _restore = RestoreNoGrad(&self.no_grad, self.no_grad.get());
        self.no_grad.set(true);
        f()
    }

    /// Whether new operations are being recorded for differentiation.
    pub fn recording(&self) -> bool {
        !self.no_grad.get()
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite.get() {
            Some(op) => Err(TensorError::NonFinite { op }),
            None => Ok(()),
        }
    }

    fn note_finite(&self, value: &Tensor<T>, op: &'static str) {
        if self.non_finite.get().is_none() && !value.is_finite() {
            self.non_finite.set(Some(op));
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        self.note_finite(&value, op.name());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            !self.no_grad.get() && op.parents().iter().any(|&p| nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
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

    fn value_of(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    /// Gradients of a scalar `loss` with respect to each of `wrt`.
    ///
    /// Inputs unreachable from the loss get a zero gradient. With
    /// `create_graph`, the returned gradients are recorded and differentiable.
    pub fn grad<'t>(
        &'t self,
        loss: Var<'t, T>,
        wrt: &[Var<'t, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t, T>>> {
        let loss_shape = loss.shape();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.check_finite()?;

        let end = loss.id + 1;
        let mut needed = vec![false; end];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id < end && nodes[w.id].requires_grad {
                    needed[w.id] = true;
                }
            }
            for id in 0..end {
                if !needed[id] && nodes[id].requires_grad {
                    needed[id] = nodes[id].op.parents().iter().any(|&p| needed[p]);
                }
            }
        }

        let _restore = RestoreNoGrad(&self.no_grad, self.no_grad.get());
        if !create_graph {
            self.no_grad.set(true);
        }

        let mut is_target = vec![false; end];
        for w in wrt {
            if w.id < end {
                is_target[w.id] = true;
            }
        }

        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; end];
        if needed[loss.id] {
            grads[loss.id] = Some(self.constant(Tensor::ones(&loss_shape)));
        }
        for id in (0..end).rev() {
            if !needed[id] {
                continue;
            }
            let g = if is_target[id] { grads[id] } else { grads[id].take() };
            let Some(g) = g else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            for (p, pg) in self.vjp(id, &op, g, &needed)? {
                grads[p] = Some(match grads[p] {
                    Some(acc) => acc.add(pg)?,
                    None => pg,
                });
            }
        }

        wrt.iter()
            .map(|w| {
                Ok(match grads.get(w.id).copied().flatten() {
                    Some(g) => g,
                    None => self.constant(Tensor::zeros(&w.shape())),
                })
            })
            .collect()
    }

    /// First-order gradients as plain tensors.
    pub fn backward(&self, loss: Var<'_, T>, wrt: &[Var<'_, T>]) -> Result<Vec<Tensor<T>>> {
        Ok(self
            .grad(loss, wrt, false)?
            .into_iter()
            .map(|g| g.value())
            .collect())
    }

    fn vjp<'t>(
        &'t self,
        id: usize,
        op: &Op<T>,
        g: Var<'t, T>,
        needed: &[bool],
    ) -> Result<Vec<(usize, Var<'t, T>)>> {
        let out = self.var(id);
        let mut res = Vec::with_capacity(2);
        let want = |p: usize| needed[p];
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    res.push((a, g));
                }
                if want(b) {
                    res.push((b, g.neg()));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    res.push((a, g.mul(self.var(b))?));
                }
                if want(b) {
                    res.push((b, g.mul(self.var(a))?));
                }
            }
            Op::Div(a, b) => {
                let ga = g.div(self.var(b))?;
                if want(b) {
                    res.push((b, ga.mul(out)?.neg()));
                }
                if want(a) {
                    res.push((a, ga));
                }
            }
            Op::Neg(a) => res.push((a, g.neg())),
            Op::Scale(a, s) => res.push((a, g.scale_by(s))),
            Op::AddScalar(a) => res.push((a, g)),
            Op::Relu(a) => {
                let mask = self.value_of(a).map(|v| if v > T::zero() { T::one() } else { T::zero() });
                res.push((a, g.mul_const(&mask)?));
            }
            Op::LeakyRelu(a, s) => {
                let mask = self.value_of(a).map(|v| if v >= T::zero() { T::one() } else { s });
                res.push((a, g.mul_const(&mask)?));
            }
            Op::Abs(a) => {
                let mask = self.value_of(a).map(|v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                res.push((a, g.mul_const(&mask)?));
            }
            Op::ClampMin(a, lo) => {
                let mask = self.value_of(a).map(|v| if v >= lo { T::one() } else { T::zero() });
                res.push((a, g.mul_const(&mask)?));
            }
            Op::Tanh(a) => {
                // 1 - y^2
                let d = out.mul(out)?.neg().add_scalar(1.0);
                res.push((a, g.mul(d)?));
            }
            Op::Sigmoid(a) => {
                // y (1 - y)
                let d = out.mul(out.neg().add_scalar(1.0))?;
                res.push((a, g.mul(d)?));
            }
            Op::Log(a) => res.push((a, g.div(self.var(a))?)),
            Op::Sqrt(a) => res.push((a, g.div(out)?.scale(0.5))),
            Op::Reshape(a) => {
                let shape = self.value_of(a).shape().to_vec();
                res.push((a, g.reshape(&shape)?));
            }
            Op::SumAxis { x, outer, inner } => {
                let shape = self.value_of(x).shape().to_vec();
                res.push((x, g.expand_raw(outer, inner, &shape)?));
            }
            Op::Expand { x, outer, inner } => {
                let shape = self.value_of(x).shape().to_vec();
                res.push((x, g.sum_raw(outer, inner, &shape)?));
            }
            Op::Conv { x, w, stride, pad } => {
                let xs = self.value_of(x).shape().to_vec();
                if want(x) {
                    res.push((x, g.conv_input_grad(self.var(w), stride, pad, xs[2], xs[3])?));
                }
                if want(w) {
                    let k = self.value_of(w).shape()[2];
                    res.push((w, self.var(x).conv_weight_grad(g, stride, pad, k)?));
                }
            }
            Op::ConvInputGrad { g: gi, w, stride, pad } => {
                if want(gi) {
                    res.push((gi, g.conv2d(self.var(w), stride, pad)?));
                }
                if want(w) {
                    let k = self.value_of(w).shape()[2];
                    res.push((w, g.conv_weight_grad(self.var(gi), stride, pad, k)?));
                }
            }
            Op::ConvWeightGrad { x, g: gi, stride, pad, .. } => {
                if want(x) {
                    let xs = self.value_of(x).shape().to_vec();
                    res.push((x, self.var(gi).conv_input_grad(g, stride, pad, xs[2], xs[3])?));
                }
                if want(gi) {
                    res.push((gi, self.var(x).conv2d(g, stride, pad)?));
                }
            }
            Op::Concat(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value_of(p).shape()[1];
                    if want(p) {
                        res.push((p, g.slice_channels(start, c)?));
                    }
                    start += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let total = self.value_of(x).shape()[1];
                res.push((x, g.pad_channels(start, total)?));
            }
            Op::PadChannels { x, start } => {
                let c = self.value_of(x).shape()[1];
                res.push((x, g.slice_channels(start, c)?));
            }
            Op::Sparse(x, ref map) => res.push((x, g.sparse(map.transpose())?)),
        }
        Ok(res)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(&self, other: Var<'t, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'t, T>> {
        let name = op.name();
        let v = self.value().zip_map(&other.value(), name, f)?;
        Ok(self.tape.push(v, op))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Multiply by a constant tensor of the same shape.
    pub fn mul_const(&self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        let c = self.tape.constant(c.clone());
        self.mul(c)
    }

    /// Add a constant tensor of the same shape.
    pub fn add_const(&self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        let c = self.tape.constant(c.clone());
        self.add(c)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.unary(Op::Neg(self.id), |a| -a)
    }

    pub fn scale(&self, s: f64) -> Var<'t, T> {
        self.scale_by(T::from_f64(s))
    }

    fn scale_by(&self, s: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, s), |a| a * s)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t, T> {
        let s = T::from_f64(s);
        self.unary(Op::AddScalar(self.id), |a| a + s)
    }

    pub fn square(&self) -> Var<'t, T> {
        self.mul(*self).expect("same shape")
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Op::Relu(self.id), |a| if a > T::zero() { a } else { T::zero() })
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Var<'t, T> {
        let s = T::from_f64(slope);
        self.unary(Op::LeakyRelu(self.id, s), |a| if a >= T::zero() { a } else { s * a })
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |a| a.tanh())
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), |a| {
            if a >= T::zero() {
                T::one() / (T::one() + (-a).exp())
            } else {
                let e = a.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn log(&self) -> Var<'t, T> {
        self.unary(Op::Log(self.id), |a| a.ln())
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        self.unary(Op::Sqrt(self.id), |a| a.sqrt())
    }

    pub fn abs(&self) -> Var<'t, T> {
        self.unary(Op::Abs(self.id), |a| a.abs())
    }

    /// `max(x, lo)`; the gradient passes where `x >= lo`.
    pub fn clamp_min(&self, lo: f64) -> Var<'t, T> {
        let lo = T::from_f64(lo);
        self.unary(Op::ClampMin(self.id, lo), |a| a.max(lo))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    /// Sum of all elements as a zero-dimensional tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum_raw(1, n, &[]).expect("total sum is always valid")
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum over every axis except `axis`; result has shape `[shape[axis]]`.
    pub fn sum_to_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::invalid("sum_to_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, mid, inner) = axis_split(&shape, axis);
        self.sum_raw(outer, inner, &[mid])
    }

    /// Broadcast a vector along `axis` of `shape`.
    pub fn expand_axis(&self, axis: usize, shape: &[usize]) -> Result<Var<'t, T>> {
        if axis >= shape.len() || self.shape() != [shape[axis]] {
            return Err(TensorError::shape(
                "expand_axis",
                format!("[{}]", shape.get(axis).copied().unwrap_or(0)),
                &self.shape(),
            ));
        }
        let (outer, _, inner) = axis_split(shape, axis);
        self.expand_raw(outer, inner, shape)
    }

    fn sum_raw(&self, outer: usize, inner: usize, out_shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        let mid: usize = out_shape.iter().product();
        if outer * mid * inner != v.numel() {
            return Err(TensorError::shape("sum", format!("{outer}x{mid}x{inner}"), v.shape()));
        }
        let d = v.data();
        let mut acc = vec![0f64; mid];
        for o in 0..outer {
            for (m, a) in acc.iter_mut().enumerate() {
                let base = (o * mid + m) * inner;
                *a += d[base..base + inner].iter().map(|x| x.as_f64()).sum::<f64>();
            }
        }
        let t = Tensor::new(out_shape, acc.into_iter().map(T::from_f64).collect())?;
        Ok(self.tape.push(t, Op::SumAxis { x: self.id, outer, inner }))
    }

    fn expand_raw(&self, outer: usize, inner: usize, out_shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        let mid = v.numel();
        if outer * mid * inner != out_shape.iter().product::<usize>() {
            return Err(TensorError::shape("expand", format!("{out_shape:?}"), v.shape()));
        }
        let d = v.data();
        let mut out = Vec::with_capacity(outer * mid * inner);
        for _ in 0..outer {
            for &x in d {
                out.extend(std::iter::repeat_n(x, inner));
            }
        }
        let t = Tensor::new(out_shape, out)?;
        Ok(self.tape.push(t, Op::Expand { x: self.id, outer, inner }))
    }

    pub fn conv2d(&self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv2d(&self.value(), &w.value(), stride, pad)?;
        Ok(self.tape.push(
            v,
            Op::Conv {
                x: self.id,
                w: w.id,
                stride,
                pad,
            },
        ))
    }

    /// Transposed convolution; `w` is `[in_channels, out_channels, k, k]`.
    pub fn conv_transpose2d(&self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv_transpose2d(&self.value(), &w.value(), stride, pad)?;
        Ok(self.tape.push(
            v,
            Op::ConvInputGrad {
                g: self.id,
                w: w.id,
                stride,
                pad,
            },
        ))
    }

    fn conv_input_grad(&self, w: Var<'t, T>, stride: usize, pad: usize, h: usize, wd: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv2d_input_grad(&self.value(), &w.value(), stride, pad, h, wd)?;
        Ok(self.tape.push(
            v,
            Op::ConvInputGrad {
                g: self.id,
                w: w.id,
                stride,
                pad,
            },
        ))
    }

    fn conv_weight_grad(&self, g: Var<'t, T>, stride: usize, pad: usize, k: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv2d_weight_grad(&self.value(), &g.value(), stride, pad, k)?;
        Ok(self.tape.push(
            v,
            Op::ConvWeightGrad {
                x: self.id,
                g: g.id,
                stride,
                pad,
            },
        ))
    }

    /// Concatenate rank-4 variables along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let v = Tensor::concat_channels(&refs)?;
        Ok(first.tape.push(v, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value().slice_channels(start, len)?;
        Ok(self.tape.push(v, Op::SliceChannels { x: self.id, start }))
    }

    fn pad_channels(&self, start: usize, total: usize) -> Result<Var<'t, T>> {
        let v = self.value().pad_channels(start, total)?;
        Ok(self.tape.push(v, Op::PadChannels { x: self.id, start }))
    }

    /// Apply a fixed sparse linear map.
    pub fn sparse(&self, map: Rc<SparseMap<T>>) -> Result<Var<'t, T>> {
        let v = map.apply(&self.value())?;
        Ok(self.tape.push(v, Op::Sparse(self.id, map)))
    }
}
