//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built once from placeholders, constants and primitive ops;
//! every node's shape is checked at construction. [`Graph::grad`] appends the
//! adjoint computation to the same graph, so a gradient is an ordinary node
//! that can be differentiated again. This is what lets a gradient penalty,
//! a function of `∂D/∂x`, be minimized over the critic's parameters.
//!
//! Evaluation takes one tensor per declared input and only computes the
//! nodes the requested outputs depend on. The graph itself is immutable
//! during evaluation, so one graph can serve many threads.

mod tensor;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

pub use tensor::Tensor;
pub(crate) use tensor::{matmul, pow_abs, sigmoid, sign_pow, softplus, transpose};

use crate::error::{Error, Result};
use crate::spaces::SpectralMultiplier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    /// Indicator of `x > 0`; the derivative of ReLU. Its own derivative is 0.
    Step,
    Sqrt,
    Recip,
}

#[derive(Clone)]
enum Op {
    Input(String),
    Constant(Arc<Tensor>),
    Zeros,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: f64, shift: f64 },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    BroadcastRows(NodeId),
    BroadcastCols(NodeId),
    BroadcastScalar(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Unary(Unary, NodeId),
    PowAbs(NodeId, f64),
    SignPow(NodeId, f64),
    SliceCols { x: NodeId, start: usize },
    PadCols { x: NodeId, start: usize },
    Spectral(NodeId, Arc<SpectralMultiplier>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Zeros => "zeros",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::Unary(u, _) => match u {
                Unary::Tanh => "tanh",
                Unary::Sigmoid => "sigmoid",
                Unary::Softplus => "softplus",
                Unary::Relu => "relu",
                Unary::Step => "step",
                Unary::Sqrt => "sqrt",
                Unary::Recip => "recip",
            },
            Op::PowAbs(..) => "pow_abs",
            Op::SignPow(..) => "sign_pow",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::Spectral(..) => "spectral",
        }
    }

    fn parents(&self) -> Parents {
        use Op::*;
        match *self {
            Input(_) | Constant(_) | Zeros => Parents::None,
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddBias(a, b) => Parents::Two(a, b),
            Affine { x, .. }
            | Transpose(x)
            | BroadcastRows(x)
            | BroadcastCols(x)
            | BroadcastScalar(x)
            | Sum(x)
            | SumRows(x)
            | SumCols(x)
            | Unary(_, x)
            | PowAbs(x, _)
            | SignPow(x, _)
            | SliceCols { x, .. }
            | PadCols { x, .. }
            | Spectral(x, _) => Parents::One(x),
        }
    }
}

#[derive(Clone, Copy)]
enum Parents {
    None,
    One(NodeId),
    Two(NodeId, NodeId),
}

impl Parents {
    fn for_each(self, mut f: impl FnMut(NodeId)) {
        match self {
            Parents::None => {}
            Parents::One(a) => f(a),
            Parents::Two(a, b) => {
                f(a);
                f(b);
            }
        }
    }
}

#[derive(Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Computation graph in topological (construction) order.
#[derive(Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("inputs", &self.inputs.len())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Declared inputs, in the order [`Graph::eval`] expects their values.
    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Human-readable node name used in diagnostics.
    pub fn describe(&self, id: NodeId) -> String {
        match &self.nodes[id.0].op {
            Op::Input(name) => format!("input '{name}' (#{})", id.0),
            op => format!("node #{} ({})", id.0, op.name()),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape });
        id
    }

    fn mismatch(&self, id: NodeId, detail: String) -> Error {
        Error::shape(format!("node #{} ({})", id.0, self.nodes[id.0].op.name()), detail)
    }

    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        let id = self.push(Op::Input(name.into()), shape.to_vec());
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(Arc::new(value)), shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Zeros, shape.to_vec())
    }

    /// Error for a node that failed validation before being added.
    fn rejected(&self, op: &Op, detail: String) -> Error {
        Error::shape(format!("node #{} ({})", self.nodes.len(), op.name()), detail)
    }

    fn same_shape(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(self.rejected(&op, format!("operands have shapes {sa:?} and {sb:?}")));
        }
        Ok(self.push(op, sa))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(Op::Add(a, b), a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(Op::Sub(a, b), a, b)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(Op::Mul(a, b), a, b)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        if scale == 1.0 && shift == 0.0 {
            return x;
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::Affine { x, scale, shift }, shape)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.affine(x, factor, 0.0)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 0.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.rejected(&Op::MatMul(a, b), format!("cannot multiply {sa:?} by {sb:?}")));
        }
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(self.mismatch(x, format!("transpose needs a matrix, got {s:?}")));
        }
        Ok(self.push(Op::Transpose(x), vec![s[1], s[0]]))
    }

    /// Adds a `[n]` bias to every row of a `[b, n]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(self.mismatch(x, format!("bias {sb:?} does not fit rows of {sx:?}")));
        }
        Ok(self.push(Op::AddBias(x, bias), sx))
    }

    /// `x · w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine_layer(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Repeats a `[n]` vector as `rows` rows.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(self.mismatch(x, format!("broadcast_rows needs a vector, got {s:?}")));
        }
        Ok(self.push(Op::BroadcastRows(x), vec![rows, s[0]]))
    }

    /// Repeats each entry of a `[b]` vector across `cols` columns.
    pub fn broadcast_cols(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(self.mismatch(x, format!("broadcast_cols needs a vector, got {s:?}")));
        }
        Ok(self.push(Op::BroadcastCols(x), vec![s[0], cols]))
    }

    pub fn broadcast_scalar(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if !self.shape(x).is_empty() {
            let s = self.shape(x).to_vec();
            return Err(self.mismatch(x, format!("broadcast_scalar needs a scalar, got {s:?}")));
        }
        Ok(self.push(Op::BroadcastScalar(x), shape.to_vec()))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), Vec::new())
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.shape(x).iter().product::<usize>().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums of a `[b, n]` matrix, giving `[n]`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(self.mismatch(x, format!("sum_rows needs a matrix, got {s:?}")));
        }
        Ok(self.push(Op::SumRows(x), vec![s[1]]))
    }

    /// Per-row sums of a `[b, n]` matrix, giving `[b]`.
    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(self.mismatch(x, format!("sum_cols needs a matrix, got {s:?}")));
        }
        Ok(self.push(Op::SumCols(x), vec![s[0]]))
    }

    pub fn unary(&mut self, op: Unary, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Unary(op, x), shape)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Softplus, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Relu, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Sqrt, x)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(Unary::Recip, x)
    }

    /// `|x|^a` elementwise. Differentiable at 0 only for `a > 1`.
    pub fn pow_abs(&mut self, x: NodeId, a: f64) -> NodeId {
        if a == 1.0 && matches!(self.nodes[x.0].op, Op::PowAbs(..)) {
            return x;
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::PowAbs(x, a), shape)
    }

    /// `sign(x) |x|^a` elementwise.
    pub fn sign_pow(&mut self, x: NodeId, a: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::SignPow(x, a), shape)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.pow_abs(x, 2.0)
    }

    /// Columns `start..start + len` of a `[b, n]` matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(self.mismatch(x, format!("columns {start}..{} out of {s:?}", start + len)));
        }
        Ok(self.push(Op::SliceCols { x, start }, vec![s[0], len]))
    }

    /// Embeds a `[b, len]` matrix at column `start` of a zero `[b, total]` matrix.
    pub fn pad_cols(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + s[1] > total {
            return Err(self.mismatch(x, format!("cannot place {s:?} at column {start} of {total}")));
        }
        Ok(self.push(Op::PadCols { x, start }, vec![s[0], total]))
    }

    /// Applies a Fourier multiplier to every row (or to a single vector).
    pub fn spectral(&mut self, x: NodeId, multiplier: Arc<SpectralMultiplier>) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let cols = match s.len() {
            1 => s[0],
            2 => s[1],
            _ => 0,
        };
        if cols != multiplier.len() {
            return Err(self.mismatch(
                x,
                format!("multiplier acts on {} entries, got shape {s:?}", multiplier.len()),
            ));
        }
        Ok(self.push(Op::Spectral(x, multiplier), s))
    }

    /// Evaluates `outputs` given one tensor per declared input.
    pub fn eval(&self, feeds: &[&Tensor], outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        let values = self.evaluate(feeds, outputs)?;
        Ok(outputs
            .iter()
            .map(|id| values[id.0].as_deref().expect("requested node evaluated").clone())
            .collect())
    }

    /// Evaluates a scalar output.
    pub fn forward(&self, feeds: &[&Tensor], output: NodeId) -> Result<f64> {
        if !self.shape(output).is_empty() {
            return Err(Error::NonScalarOutput {
                node: self.describe(output),
                shape: self.shape(output).to_vec(),
            });
        }
        let values = self.evaluate(feeds, &[output])?;
        Ok(values[output.0]
            .as_deref()
            .and_then(Tensor::item)
            .expect("scalar output"))
    }

    fn evaluate<'a>(&self, feeds: &[&'a Tensor], outputs: &[NodeId]) -> Result<Vec<Option<Cow<'a, Tensor>>>> {
        if feeds.len() != self.inputs.len() {
            return Err(Error::shape(
                "graph inputs",
                format!("expected {} input tensors, got {}", self.inputs.len(), feeds.len()),
            ));
        }
        let last = match outputs.iter().max() {
            Some(id) => id.0,
            None => return Ok(Vec::new()),
        };
        let mut needed = vec![false; last + 1];
        for id in outputs {
            needed[id.0] = true;
        }
        for i in (0..=last).rev() {
            if needed[i] {
                self.nodes[i].op.parents().for_each(|p| needed[p.0] = true);
            }
        }

        let mut values: Vec<Option<Cow<'a, Tensor>>> = vec![None; last + 1];
        let mut feed_of = vec![usize::MAX; last + 1];
        for (k, id) in self.inputs.iter().enumerate() {
            if id.0 <= last {
                feed_of[id.0] = k;
            }
        }
        for i in 0..=last {
            if !needed[i] {
                continue;
            }
            let node = &self.nodes[i];
            let value = if let Op::Input(_) = node.op {
                let t = feeds[feed_of[i]];
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::shape(
                        self.describe(NodeId(i)),
                        format!("declared {:?}, fed {:?}", node.shape, t.shape()),
                    ));
                }
                Cow::Borrowed(t)
            } else {
                Cow::Owned(self.compute(node, &values))
            };
            values[i] = Some(value);
        }
        Ok(values)
    }

    fn compute(&self, node: &Node, values: &[Option<Cow<'_, Tensor>>]) -> Tensor {
        let v = |id: NodeId| -> &Tensor { values[id.0].as_deref().expect("parent evaluated") };
        let shape = node.shape.clone();
        let build = |data: Vec<f64>| Tensor::new(shape.clone(), data).expect("inferred shape");
        match &node.op {
            Op::Input(_) => unreachable!("inputs are fed"),
            Op::Constant(t) => (**t).clone(),
            Op::Zeros => Tensor::zeros(&node.shape),
            Op::Add(a, b) => v(*a).zip(v(*b), |x, y| x + y),
            Op::Sub(a, b) => v(*a).zip(v(*b), |x, y| x - y),
            Op::Mul(a, b) => v(*a).zip(v(*b), |x, y| x * y),
            Op::Affine { x, scale, shift } => v(*x).map(|t| scale * t + shift),
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(*a), v(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                build(matmul(ta.data(), tb.data(), m, k, n))
            }
            Op::Transpose(x) => {
                let t = v(*x);
                build(transpose(t.data(), t.shape()[0], t.shape()[1]))
            }
            Op::AddBias(x, b) => {
                let (tx, tb) = (v(*x), v(*b));
                let n = tb.len();
                let mut data = tx.data().to_vec();
                for row in data.chunks_mut(n.max(1)) {
                    for (r, &bias) in row.iter_mut().zip(tb.data()) {
                        *r += bias;
                    }
                }
                build(data)
            }
            Op::BroadcastRows(x) => {
                let t = v(*x);
                build(t.data().repeat(node.shape[0]))
            }
            Op::BroadcastCols(x) => {
                let cols = node.shape[1];
                build(
                    v(*x)
                        .data()
                        .iter()
                        .flat_map(|&e| std::iter::repeat_n(e, cols))
                        .collect(),
                )
            }
            Op::BroadcastScalar(x) => Tensor::filled(&node.shape, v(*x).data()[0]),
            Op::Sum(x) => Tensor::scalar(v(*x).data().iter().sum()),
            Op::SumRows(x) => {
                let t = v(*x);
                let n = t.shape()[1];
                let mut out = vec![0.0; n];
                for row in t.data().chunks(n.max(1)) {
                    for (o, &e) in out.iter_mut().zip(row) {
                        *o += e;
                    }
                }
                build(out)
            }
            Op::SumCols(x) => {
                let t = v(*x);
                let n = t.shape()[1];
                if n == 0 {
                    return build(vec![0.0; t.shape()[0]]);
                }
                build(t.data().chunks(n).map(|row| row.iter().sum()).collect())
            }
            Op::Unary(u, x) => {
                let t = v(*x);
                match u {
                    Unary::Tanh => t.map(f64::tanh),
                    Unary::Sigmoid => t.map(sigmoid),
                    Unary::Softplus => t.map(softplus),
                    Unary::Relu => t.map(|e| if e > 0.0 { e } else { 0.0 }),
                    Unary::Step => t.map(|e| if e > 0.0 { 1.0 } else { 0.0 }),
                    Unary::Sqrt => t.map(f64::sqrt),
                    Unary::Recip => t.map(|e| 1.0 / e),
                }
            }
            Op::PowAbs(x, a) => v(*x).map(|e| pow_abs(e, *a)),
            Op::SignPow(x, a) => v(*x).map(|e| sign_pow(e, *a)),
            Op::SliceCols { x, start } => {
                let t = v(*x);
                let (n, len) = (t.shape()[1], node.shape[1]);
                let mut out = Vec::with_capacity(node.shape[0] * len);
                for i in 0..node.shape[0] {
                    out.extend_from_slice(&t.data()[i * n + start..i * n + start + len]);
                }
                build(out)
            }
            Op::PadCols { x, start } => {
                let t = v(*x);
                let (len, total) = (t.shape()[1], node.shape[1]);
                let mut out = vec![0.0; node.shape[0] * total];
                for i in 0..node.shape[0] {
                    out[i * total + start..i * total + start + len].copy_from_slice(&t.data()[i * len..(i + 1) * len]);
                }
                build(out)
            }
            Op::Spectral(x, m) => {
                let t = v(*x);
                let mut out = vec![0.0; t.len()];
                for (src, dst) in t.data().chunks(m.len()).zip(out.chunks_mut(m.len())) {
                    m.apply_into(src, dst);
                }
                build(out)
            }
        }
    }

    /// Appends the gradient of the scalar `output` with respect to each of
    /// `wrt` and returns the gradient nodes (same shapes as `wrt`).
    ///
    /// The returned nodes are built from the same primitive ops, so they can be
    /// fed into further computation and differentiated again.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.shape(output).is_empty() {
            return Err(Error::NonScalarOutput {
                node: self.describe(output),
                shape: self.shape(output).to_vec(),
            });
        }
        let last = output.0;
        let mut depends = vec![false; last + 1];
        for w in wrt {
            if w.0 <= last {
                depends[w.0] = true;
            }
        }
        for i in 0..=last {
            if !depends[i] {
                let mut any = false;
                self.nodes[i].op.parents().for_each(|p| any |= depends[p.0]);
                depends[i] = any;
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; last + 1];
        if depends[last] {
            adjoint[last] = Some(self.scalar(1.0));
        }
        for i in (0..=last).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let contributions = self.vjp(NodeId(i), &op, g, &depends)?;
            for (parent, contribution) in contributions {
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    None => contribution,
                    Some(acc) => self.add(acc, contribution)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.zeros(&shape))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of node `id` for each parent that lies on a
    /// path to the differentiation targets.
    fn vjp(&mut self, id: NodeId, op: &Op, g: NodeId, depends: &[bool]) -> Result<Vec<(NodeId, NodeId)>> {
        let dep = |n: NodeId| depends[n.0];
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Input(_) | Op::Constant(_) | Op::Zeros => {}
            Op::Add(a, b) => {
                if dep(a) {
                    out.push((a, g));
                }
                if dep(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if dep(a) {
                    out.push((a, g));
                }
                if dep(b) {
                    let ng = self.neg(g);
                    out.push((b, ng));
                }
            }
            Op::Mul(a, b) => {
                if dep(a) {
                    let d = self.mul(g, b)?;
                    out.push((a, d));
                }
                if dep(b) {
                    let d = self.mul(g, a)?;
                    out.push((b, d));
                }
            }
            Op::Affine { x, scale, .. } => {
                if scale != 0.0 {
                    let d = self.scale(g, scale);
                    out.push((x, d));
                }
            }
            Op::MatMul(a, b) => {
                if dep(a) {
                    let bt = self.transpose(b)?;
                    let d = self.matmul(g, bt)?;
                    out.push((a, d));
                }
                if dep(b) {
                    let at = self.transpose(a)?;
                    let d = self.matmul(at, g)?;
                    out.push((b, d));
                }
            }
            Op::Transpose(x) => {
                let d = self.transpose(g)?;
                out.push((x, d));
            }
            Op::AddBias(x, b) => {
                if dep(x) {
                    out.push((x, g));
                }
                if dep(b) {
                    let d = self.sum_rows(g)?;
                    out.push((b, d));
                }
            }
            Op::BroadcastRows(x) => {
                let d = self.sum_rows(g)?;
                out.push((x, d));
            }
            Op::BroadcastCols(x) => {
                let d = self.sum_cols(g)?;
                out.push((x, d));
            }
            Op::BroadcastScalar(x) => {
                let d = self.sum(g);
                out.push((x, d));
            }
            Op::Sum(x) => {
                let shape = self.shape(x).to_vec();
                let d = self.broadcast_scalar(g, &shape)?;
                out.push((x, d));
            }
            Op::SumRows(x) => {
                let rows = self.shape(x)[0];
                let d = self.broadcast_rows(g, rows)?;
                out.push((x, d));
            }
            Op::SumCols(x) => {
                let cols = self.shape(x)[1];
                let d = self.broadcast_cols(g, cols)?;
                out.push((x, d));
            }
            Op::Unary(u, x) => {
                let local = match u {
                    // 1 - y²
                    Unary::Tanh => {
                        let y2 = self.square(id);
                        Some(self.affine(y2, -1.0, 1.0))
                    }
                    // y (1 - y)
                    Unary::Sigmoid => {
                        let one_minus = self.affine(id, -1.0, 1.0);
                        Some(self.mul(id, one_minus)?)
                    }
                    Unary::Softplus => Some(self.sigmoid(x)),
                    Unary::Relu => Some(self.unary(Unary::Step, x)),
                    Unary::Step => None,
                    // 1 / (2y)
                    Unary::Sqrt => {
                        let r = self.recip(id);
                        Some(self.scale(r, 0.5))
                    }
                    // -y²
                    Unary::Recip => {
                        let y2 = self.square(id);
                        Some(self.neg(y2))
                    }
                };
                if let Some(local) = local {
                    let d = self.mul(g, local)?;
                    out.push((x, d));
                }
            }
            Op::PowAbs(x, a) => {
                if a != 0.0 {
                    let sp = self.sign_pow(x, a - 1.0);
                    let local = self.scale(sp, a);
                    let d = self.mul(g, local)?;
                    out.push((x, d));
                }
            }
            Op::SignPow(x, a) => {
                if a != 0.0 {
                    let pa = self.pow_abs(x, a - 1.0);
                    let local = self.scale(pa, a);
                    let d = self.mul(g, local)?;
                    out.push((x, d));
                }
            }
            Op::SliceCols { x, start } => {
                let total = self.shape(x)[1];
                let d = self.pad_cols(g, start, total)?;
                out.push((x, d));
            }
            Op::PadCols { x, start } => {
                let len = self.shape(x)[1];
                let d = self.slice_cols(g, start, len)?;
                out.push((x, d));
            }
            // The multiplier is real, even in frequency and sandwiched between
            // unitary transforms, hence self-adjoint.
            Op::Spectral(x, ref m) => {
                let d = self.spectral(g, Arc::clone(m))?;
                out.push((x, d));
            }
        }
        Ok(out)
    }
}

/// Gradient of a scalar functional of `∂output/∂x` with respect to `params`.
///
/// Builds `∇ₓ output`, hands it to `functional` (which must return a scalar
/// node), then differentiates that scalar with respect to `params`.
pub fn gradient_of_gradient_functional<F>(
    graph: &mut Graph,
    output: NodeId,
    x: NodeId,
    params: &[NodeId],
    functional: F,
) -> Result<Vec<NodeId>>
where
    F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    let gx = graph.grad(output, &[x])?[0];
    let h = functional(graph, gx)?;
    graph.grad(h, params)
}
