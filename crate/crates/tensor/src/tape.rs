//! Tape-based reverse-mode differentiation.
//!
//! Every operation applied to a [`Var`] appends a node to its [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because a node can only reference earlier nodes.
//! Gradients of leaves are accumulated on the tape until [`Tape::zero_grad`].

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{axis_extents, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// The differentiable operations understood by [`Tape::apply`].
///
/// Binary elementwise ops broadcast numpy-style. Axis reductions keep the
/// reduced axis with size 1.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m×k] · [k×n]`
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    LogSumExp { axis: usize },
    /// Sum of all entries, rank 0 output.
    Sum,
    /// Mean of all entries, rank 0 output.
    Mean,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Selects rows (first axis) of a rank-1 or rank-2 tensor; repeats allowed.
    Gather { indices: Vec<usize> },
    Transpose,
    Reshape { shape: Vec<usize> },
    /// `Σ wᵢ·xᵢ` over same-shaped inputs with constant weights.
    WeightedSum { weights: Vec<f64> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LogSoftmax { .. } => "log_softmax",
            OpKind::LogSumExp { .. } => "logsumexp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Gather { .. } => "gather",
            OpKind::Transpose => "transpose",
            OpKind::Reshape { .. } => "reshape",
            OpKind::WeightedSum { .. } => "weighted_sum",
        }
    }
}

/// An operation whose forward value is computed by the caller and whose
/// gradient is supplied by this trait.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one entry per input; `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

enum NodeOp {
    Leaf,
    Apply(OpKind),
    Custom(Rc<dyn CustomOp>),
}

struct Node {
    value: Rc<Tensor>,
    op: NodeOp,
    inputs: Vec<usize>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bindings: RefCell<Vec<(String, usize)>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push(Node {
            value: Rc::new(value),
            op: NodeOp::Leaf,
            inputs: Vec::new(),
            requires_grad,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// A leaf that receives gradients.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub(crate) fn bind(&self, name: &str, var: Var<'_>) {
        self.bindings.borrow_mut().push((name.to_owned(), var.id));
    }

    pub(crate) fn bindings(&self) -> Vec<(String, usize)> {
        self.bindings.borrow().clone()
    }

    pub(crate) fn grad_by_id(&self, id: usize) -> Option<Tensor> {
        self.nodes.borrow()[id].grad.clone()
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn check(&self, var: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self, var.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    /// Applies `kind` to `inputs`, recording it when any input requires grad.
    pub fn apply<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        for v in inputs {
            self.check(v)?;
        }
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor> = inputs.iter().map(|v| &*nodes[v.id].value).collect();
            let value = forward(&kind, &values)?;
            let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (value, rg)
        };
        let id = self.push(Node {
            value: Rc::new(value),
            op: if requires_grad {
                NodeOp::Apply(kind)
            } else {
                NodeOp::Leaf
            },
            inputs: if requires_grad {
                inputs.iter().map(|v| v.id).collect()
            } else {
                Vec::new()
            },
            requires_grad,
            grad: None,
        });
        Ok(Var { tape: self, id })
    }

    /// Records a node whose value was computed outside the tape.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        op: Rc<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        for v in inputs {
            self.check(v)?;
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let id = self.push(Node {
            value: Rc::new(value),
            op: if requires_grad {
                NodeOp::Custom(op)
            } else {
                NodeOp::Leaf
            },
            inputs: if requires_grad {
                inputs.iter().map(|v| v.id).collect()
            } else {
                Vec::new()
            },
            requires_grad,
            grad: None,
        });
        Ok(Var { tape: self, id })
    }

    pub fn concat<'t>(&'t self, inputs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        self.apply(OpKind::Concat { axis }, inputs)
    }

    pub fn weighted_sum<'t>(&'t self, inputs: &[Var<'t>], weights: &[f64]) -> Result<Var<'t>> {
        self.apply(
            OpKind::WeightedSum {
                weights: weights.to_vec(),
            },
            inputs,
        )
    }

    /// Back-propagates from a single-element `loss`, accumulating into the
    /// gradients of every reachable leaf that requires grad.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check(&loss)?;
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(TensorError::NotScalar(root.value.shape().to_vec()));
            }
            if !root.requires_grad {
                return Ok(());
            }
            let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(Tensor::ones(root.value.shape()));
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                let input_grads = match &node.op {
                    NodeOp::Leaf => {
                        if node.requires_grad {
                            leaf_grads.push((id, g));
                        }
                        continue;
                    }
                    NodeOp::Apply(kind) => {
                        let inputs: Vec<&Tensor> =
                            node.inputs.iter().map(|&i| &*nodes[i].value).collect();
                        let needs: Vec<bool> =
                            node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                        backward(kind, &inputs, &node.value, &g, &needs)?
                    }
                    NodeOp::Custom(op) => {
                        let inputs: Vec<&Tensor> =
                            node.inputs.iter().map(|&i| &*nodes[i].value).collect();
                        let needs: Vec<bool> =
                            node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                        op.backward(&inputs, &node.value, &g, &needs)?
                    }
                };
                for (&input, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    match &mut grads[input] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` before any backward reaches it.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad_by_id(self.id)
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn unary(self, kind: OpKind) -> Result<Var<'t>> {
        self.tape.apply(kind, &[self])
    }

    fn binary(self, kind: OpKind, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.apply(kind, &[self, other])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::MatMul, other)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Add, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Sub, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(OpKind::Mul, other)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(OpKind::Scale(c))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(OpKind::Scale(-1.0))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(OpKind::AddScalar(c))
    }

    /// `1 - self`
    pub fn one_minus(self) -> Result<Var<'t>> {
        self.scale(-1.0)?.add_scalar(1.0)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(OpKind::Tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(OpKind::Sigmoid)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(OpKind::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(OpKind::Ln)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        self.unary(OpKind::Softmax { axis })
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        self.unary(OpKind::LogSoftmax { axis })
    }

    pub fn logsumexp(self, axis: usize) -> Result<Var<'t>> {
        self.unary(OpKind::LogSumExp { axis })
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(OpKind::Sum)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(OpKind::Mean)
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(OpKind::Slice { axis, start, end })
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.slice(1, start, end)
    }

    pub fn gather(self, indices: Vec<usize>) -> Result<Var<'t>> {
        self.unary(OpKind::Gather { indices })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(OpKind::Transpose)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        self.unary(OpKind::Reshape { shape })
    }
}

// ---------------------------------------------------------------------------
// broadcasting

struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn padded_strides(shape: &[usize], rank: usize, out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; rank];
    let offset = rank - shape.len();
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d + offset] = if shape[d] == 1 && out[d + offset] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[d];
    }
    strides
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let mut out_shape = vec![0; rank];
        for d in 0..rank {
            let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
            let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
            out_shape[d] = if da == db {
                da
            } else if da == 1 {
                db
            } else if db == 1 {
                da
            } else {
                return Err(TensorError::Shape {
                    op,
                    shapes: vec![a.to_vec(), b.to_vec()],
                });
            };
        }
        let a_strides = padded_strides(a, rank, &out_shape);
        let b_strides = padded_strides(b, rank, &out_shape);
        Ok(Self {
            out_shape,
            a_strides,
            b_strides,
        })
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let numel: usize = self.out_shape.iter().product();
        if numel == 0 {
            return;
        }
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let last = self.out_shape[rank - 1];
        let (sa, sb) = (self.a_strides[rank - 1], self.b_strides[rank - 1]);
        let mut counter = vec![0usize; rank - 1];
        let mut out = 0;
        loop {
            let mut ia = 0;
            let mut ib = 0;
            for (d, &c) in counter.iter().enumerate() {
                ia += c * self.a_strides[d];
                ib += c * self.b_strides[d];
            }
            for j in 0..last {
                f(out, ia + j * sa, ib + j * sb);
                out += 1;
            }
            // advance the outer counter
            let mut d = rank - 1;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                counter[d] += 1;
                if counter[d] < self.out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
    }
}

fn binary_forward(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let bc = Broadcast::new(op, a.shape(), b.shape())?;
    let numel: usize = bc.out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let (ad, bd) = (a.data(), b.data());
    bc.for_each(|o, i, j| data[o] = f(ad[i], bd[j]));
    Tensor::new(bc.out_shape, data)
}

/// Gradients of a broadcasting binary op given per-element partials.
fn binary_backward(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    needs: &[bool],
    da: impl Fn(f64, f64) -> f64,
    db: impl Fn(f64, f64) -> f64,
) -> Result<Vec<Option<Tensor>>> {
    let mut ga = needs[0].then(|| Tensor::zeros(a.shape()));
    let mut gb = needs[1].then(|| Tensor::zeros(b.shape()));
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    if a.shape() == b.shape() {
        if let Some(ga) = ga.as_mut() {
            for (k, out) in ga.data_mut().iter_mut().enumerate() {
                *out = gd[k] * da(ad[k], bd[k]);
            }
        }
        if let Some(gb) = gb.as_mut() {
            for (k, out) in gb.data_mut().iter_mut().enumerate() {
                *out = gd[k] * db(ad[k], bd[k]);
            }
        }
        return Ok(vec![ga, gb]);
    }
    let bc = Broadcast::new("broadcast", a.shape(), b.shape())?;
    {
        let mut ga_data = ga.as_mut().map(|t| t.data_mut());
        let mut gb_data = gb.as_mut().map(|t| t.data_mut());
        bc.for_each(|o, i, j| {
            if let Some(ga) = ga_data.as_deref_mut() {
                ga[i] += gd[o] * da(ad[i], bd[j]);
            }
            if let Some(gb) = gb_data.as_deref_mut() {
                gb[j] += gd[o] * db(ad[i], bd[j]);
            }
        });
    }
    Ok(vec![ga, gb])
}

// ---------------------------------------------------------------------------
// forward

fn arity(op: &OpKind, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(TensorError::Arity {
            op: op.name(),
            expected: n,
            got: inputs.len(),
        })
    }
}

fn check_axis(op: &OpKind, t: &Tensor, axis: usize) -> Result<()> {
    if axis < t.rank() {
        Ok(())
    } else {
        Err(TensorError::Axis {
            op: op.name(),
            axis,
            shape: t.shape().to_vec(),
        })
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

fn logsumexp_lane(x: &[f64], stride: usize, base: usize, len: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..len {
        max = max.max(x[base + k * stride]);
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut s = 0.0;
    for k in 0..len {
        s += (x[base + k * stride] - max).exp();
    }
    max + s.ln()
}

fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    match kind {
        OpKind::MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(TensorError::Shape {
                    op: "matmul",
                    shapes: vec![a.shape().to_vec(), b.shape().to_vec()],
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            gemm_acc(a.data(), b.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)
        }
        OpKind::Add => {
            arity(kind, inputs, 2)?;
            binary_forward("add", inputs[0], inputs[1], |x, y| x + y)
        }
        OpKind::Sub => {
            arity(kind, inputs, 2)?;
            binary_forward("sub", inputs[0], inputs[1], |x, y| x - y)
        }
        OpKind::Mul => {
            arity(kind, inputs, 2)?;
            binary_forward("mul", inputs[0], inputs[1], |x, y| x * y)
        }
        OpKind::Scale(c) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(|x| x * c))
        }
        OpKind::AddScalar(c) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(|x| x + c))
        }
        OpKind::Tanh => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(f64::tanh))
        }
        OpKind::Sigmoid => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(sigmoid))
        }
        OpKind::Exp => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(f64::exp))
        }
        OpKind::Ln => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(f64::ln))
        }
        OpKind::Softmax { axis } | OpKind::LogSoftmax { axis } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            check_axis(kind, x, *axis)?;
            let log = matches!(kind, OpKind::LogSoftmax { .. });
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let xd = x.data();
            let mut out = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let lse = logsumexp_lane(xd, inner, base, len);
                    for k in 0..len {
                        let idx = base + k * inner;
                        out[idx] = if log {
                            xd[idx] - lse
                        } else {
                            (xd[idx] - lse).exp()
                        };
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        OpKind::LogSumExp { axis } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            check_axis(kind, x, *axis)?;
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    out[o * inner + i] = logsumexp_lane(x.data(), inner, o * len * inner + i, len);
                }
            }
            Tensor::new(reduced_shape(x.shape(), *axis), out)
        }
        OpKind::Sum => {
            arity(kind, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].sum()))
        }
        OpKind::Mean => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.numel() == 0 {
                return Err(TensorError::Shape {
                    op: "mean",
                    shapes: vec![x.shape().to_vec()],
                });
            }
            Ok(Tensor::scalar(x.sum() / x.numel() as f64))
        }
        OpKind::Concat { axis } => {
            if inputs.is_empty() {
                return Err(TensorError::Arity {
                    op: "concat",
                    expected: 1,
                    got: 0,
                });
            }
            let first = inputs[0];
            check_axis(kind, first, *axis)?;
            let mut total = 0;
            for t in inputs {
                let ok = t.rank() == first.rank()
                    && t
                        .shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (x, y))| d == *axis || x == y);
                if !ok {
                    return Err(TensorError::Shape {
                        op: "concat",
                        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
                    });
                }
                total += t.shape()[*axis];
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            let (outer, _, inner) = axis_extents(&shape, *axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(shape, out)
        }
        OpKind::Slice { axis, start, end } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            check_axis(kind, x, *axis)?;
            if start > end || *end > x.shape()[*axis] {
                return Err(TensorError::Shape {
                    op: "slice",
                    shapes: vec![x.shape().to_vec(), vec![*start, *end]],
                });
            }
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let width = (end - start) * inner;
            let mut out = Vec::with_capacity(outer * width);
            for o in 0..outer {
                let base = o * len * inner + start * inner;
                out.extend_from_slice(&x.data()[base..base + width]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = end - start;
            Tensor::new(shape, out)
        }
        OpKind::Gather { indices } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.rank() == 0 || x.rank() > 2 {
                return Err(TensorError::Shape {
                    op: "gather",
                    shapes: vec![x.shape().to_vec()],
                });
            }
            let rows = x.shape()[0];
            let cols = if x.rank() == 2 { x.shape()[1] } else { 1 };
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                if i >= rows {
                    return Err(TensorError::Index {
                        index: i,
                        len: rows,
                    });
                }
                out.extend_from_slice(&x.data()[i * cols..(i + 1) * cols]);
            }
            let shape = if x.rank() == 2 {
                vec![indices.len(), cols]
            } else {
                vec![indices.len()]
            };
            Tensor::new(shape, out)
        }
        OpKind::Transpose => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.rank() != 2 {
                return Err(TensorError::Shape {
                    op: "transpose",
                    shapes: vec![x.shape().to_vec()],
                });
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, out)
        }
        OpKind::Reshape { shape } => {
            arity(kind, inputs, 1)?;
            inputs[0].clone().reshape(shape.clone())
        }
        OpKind::WeightedSum { weights } => {
            arity(kind, inputs, weights.len())?;
            let Some(first) = inputs.first() else {
                return Err(TensorError::Arity {
                    op: "weighted_sum",
                    expected: 1,
                    got: 0,
                });
            };
            if inputs.iter().any(|t| t.shape() != first.shape()) {
                return Err(TensorError::Shape {
                    op: "weighted_sum",
                    shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
                });
            }
            let mut out = Tensor::zeros(first.shape());
            for (t, &w) in inputs.iter().zip(weights) {
                for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                    *o += w * x;
                }
            }
            Ok(out)
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// backward

fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let unary = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Tensor>> {
        let mut t = Tensor::zeros(inputs[0].shape());
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            *v = g.data()[k] * f(k);
        }
        vec![Some(t)]
    };
    let x = inputs[0];
    let y = out.data();
    Ok(match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm_nt_acc(g.data(), b.data(), &mut d, m, k, n);
                Tensor::matrix(m, k, d).expect("shape")
            });
            let gb = needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm_tn_acc(a.data(), g.data(), &mut d, m, k, n);
                Tensor::matrix(k, n, d).expect("shape")
            });
            vec![ga, gb]
        }
        OpKind::Add => binary_backward(inputs[0], inputs[1], g, needs, |_, _| 1.0, |_, _| 1.0)?,
        OpKind::Sub => binary_backward(inputs[0], inputs[1], g, needs, |_, _| 1.0, |_, _| -1.0)?,
        OpKind::Mul => binary_backward(inputs[0], inputs[1], g, needs, |_, b| b, |a, _| a)?,
        OpKind::Scale(c) => unary(&|_| *c),
        OpKind::AddScalar(_) => unary(&|_| 1.0),
        OpKind::Tanh => unary(&|k| 1.0 - y[k] * y[k]),
        OpKind::Sigmoid => unary(&|k| y[k] * (1.0 - y[k])),
        OpKind::Exp => unary(&|k| y[k]),
        OpKind::Ln => unary(&|k| 1.0 / x.data()[k]),
        OpKind::Softmax { axis } => {
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let gd = g.data();
            let mut gx = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len)
                        .map(|k| gd[base + k * inner] * y[base + k * inner])
                        .sum();
                    for k in 0..len {
                        let idx = base + k * inner;
                        gx[idx] = y[idx] * (gd[idx] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), gx)?)]
        }
        OpKind::LogSoftmax { axis } => {
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let gd = g.data();
            let mut gx = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let total: f64 = (0..len).map(|k| gd[base + k * inner]).sum();
                    for k in 0..len {
                        let idx = base + k * inner;
                        gx[idx] = gd[idx] - y[idx].exp() * total;
                    }
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), gx)?)]
        }
        OpKind::LogSumExp { axis } => {
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let xd = x.data();
            let mut gx = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let r = o * inner + i;
                    let base = o * len * inner + i;
                    if y[r] == f64::NEG_INFINITY {
                        continue;
                    }
                    for k in 0..len {
                        let idx = base + k * inner;
                        gx[idx] = g.data()[r] * (xd[idx] - y[r]).exp();
                    }
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), gx)?)]
        }
        OpKind::Sum => {
            let gv = g.data()[0];
            vec![Some(Tensor::full(x.shape(), gv))]
        }
        OpKind::Mean => {
            let gv = g.data()[0] / x.numel() as f64;
            vec![Some(Tensor::full(x.shape(), gv))]
        }
        OpKind::Concat { axis } => {
            let (outer, total, inner) = axis_extents(out.shape(), *axis);
            let mut offset = 0;
            let mut grads = Vec::with_capacity(inputs.len());
            for (t, &need) in inputs.iter().zip(needs) {
                let len = t.shape()[*axis];
                if need {
                    let mut d = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    grads.push(Some(Tensor::new(t.shape().to_vec(), d)?));
                } else {
                    grads.push(None);
                }
                offset += len;
            }
            grads
        }
        OpKind::Slice { axis, start, end } => {
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let width = (end - start) * inner;
            let mut gx = Tensor::zeros(x.shape());
            for o in 0..outer {
                let base = o * len * inner + start * inner;
                gx.data_mut()[base..base + width]
                    .copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            vec![Some(gx)]
        }
        OpKind::Gather { indices } => {
            let cols = if x.rank() == 2 { x.shape()[1] } else { 1 };
            let mut gx = Tensor::zeros(x.shape());
            let gxd = gx.data_mut();
            for (r, &i) in indices.iter().enumerate() {
                let src = &g.data()[r * cols..(r + 1) * cols];
                for (d, s) in gxd[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![Some(gx)]
        }
        OpKind::Transpose => {
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g.data()[j * r + i];
                }
            }
            vec![Some(Tensor::matrix(r, c, gx)?)]
        }
        OpKind::Reshape { .. } => vec![Some(g.clone().reshape(x.shape().to_vec())?)],
        OpKind::WeightedSum { weights } => weights
            .iter()
            .zip(needs)
            .map(|(&w, &need)| need.then(|| g.map(|v| v * w)))
            .collect(),
    })
}
