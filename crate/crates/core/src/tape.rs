//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a [`DMatrix`]; scalars are `1 x 1`. Nodes are appended in
//! construction order, which is therefore a topological order, and
//! [`Tape::backward`] sweeps it once in reverse.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

/// Handle to a node on a specific [`Tape`]; stale after [`Tape::reset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    index: u32,
    generation: u32,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Differentiable leaf.
    Input,
    /// Leaf whose gradient is never requested.
    Constant,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Multiplication by a fixed real.
    Scale(NodeId, f64),
    /// `u v^T` of two column vectors.
    Outer(NodeId, NodeId),
    Activation(NodeId, Nonlinearity),
    /// Matrix divided by a `1 x 1` node.
    ScalarDivide(NodeId, NodeId),
    /// `u^T v` of two column vectors.
    Dot(NodeId, NodeId),
    /// Sum of squared entries.
    SquaredNorm(NodeId),
    Relu(NodeId),
    /// Sum of all entries.
    Sum(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Scale(..) => "scale",
            Op::Outer(..) => "outer-product",
            Op::Activation(..) => "elementwise-g",
            Op::ScalarDivide(..) => "scalar-divide",
            Op::Dot(..) => "dot",
            Op::SquaredNorm(_) => "squared-norm",
            Op::Relu(_) => "relu",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    parents: [usize; 2],
    value: DMatrix<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<DMatrix<f64>>>,
    generation: u32,
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn is_column(m: &DMatrix<f64>) -> bool {
    m.ncols() == 1
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.generation != self.generation || id.index() >= self.nodes.len() {
            return Err(Error::invalid(format!(
                "node {} does not belong to this tape",
                id.index
            )));
        }
        Ok(id.index())
    }

    pub fn value(&self, id: NodeId) -> Result<&DMatrix<f64>> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id)?;
        if v.shape() != (1, 1) {
            return Err(Error::invalid(format!("node {} is not scalar", id.index)));
        }
        Ok(v[(0, 0)])
    }

    pub fn op(&self, id: NodeId) -> Result<&Op> {
        Ok(&self.nodes[self.resolve(id)?].op)
    }

    fn push(&mut self, op: Op, parents: [usize; 2], value: DMatrix<f64>) -> NodeId {
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { op, parents, value });
        NodeId {
            index,
            generation: self.generation,
        }
    }

    pub fn input(&mut self, value: DMatrix<f64>) -> NodeId {
        self.push(Op::Input, [usize::MAX; 2], value)
    }

    pub fn constant(&mut self, value: DMatrix<f64>) -> NodeId {
        self.push(Op::Constant, [usize::MAX; 2], value)
    }

    /// Computes the forward value of `op` and appends it.
    pub fn record(&mut self, op: Op) -> Result<NodeId> {
        let shape_err = |op: &Op, detail: String| Error::invalid(format!("{}: {detail}", op.name()));
        let (parents, value) = match op {
            Op::Input | Op::Constant => {
                return Err(Error::invalid("leaves are created with input() or constant()"));
            }
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Outer(a, b)
            | Op::Dot(a, b)
            | Op::ScalarDivide(a, b) => {
                let (ia, ib) = (self.resolve(a)?, self.resolve(b)?);
                let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
                let value = match op {
                    Op::MatMul(..) => {
                        if va.ncols() != vb.nrows() {
                            return Err(shape_err(&op, format!("{:?} x {:?}", va.shape(), vb.shape())));
                        }
                        va * vb
                    }
                    Op::Add(..) | Op::Sub(..) => {
                        if va.shape() != vb.shape() {
                            return Err(shape_err(&op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
                        }
                        if matches!(op, Op::Add(..)) {
                            va + vb
                        } else {
                            va - vb
                        }
                    }
                    Op::Outer(..) => {
                        if !is_column(va) || !is_column(vb) {
                            return Err(shape_err(&op, "operands must be column vectors".into()));
                        }
                        va * vb.transpose()
                    }
                    Op::Dot(..) => {
                        if !is_column(va) || va.shape() != vb.shape() {
                            return Err(shape_err(&op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
                        }
                        scalar(va.dot(vb))
                    }
                    Op::ScalarDivide(..) => {
                        if vb.shape() != (1, 1) {
                            return Err(shape_err(&op, "divisor must be 1 x 1".into()));
                        }
                        let d = vb[(0, 0)];
                        if d == 0.0 || !d.is_finite() {
                            return Err(Error::numeric(self.nodes.len(), format!("scalar-divide by {d}")));
                        }
                        va / d
                    }
                    _ => unreachable!(),
                };
                ([ia, ib], value)
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Activation(a, _)
            | Op::SquaredNorm(a)
            | Op::Relu(a)
            | Op::Sum(a) => {
                let ia = self.resolve(a)?;
                let va = &self.nodes[ia].value;
                let value = match op {
                    Op::Transpose(_) => va.transpose(),
                    Op::Scale(_, c) => va * c,
                    Op::Activation(_, g) => va.map(|v| g.apply(v)),
                    Op::SquaredNorm(_) => scalar(va.norm_squared()),
                    Op::Relu(_) => va.map(|v| v.max(0.0)),
                    Op::Sum(_) => scalar(va.sum()),
                    _ => unreachable!(),
                };
                ([ia, usize::MAX], value)
            }
        };
        Ok(self.push(op, parents, value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::Scale(a, c))
    }

    pub fn outer(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        self.record(Op::Outer(u, v))
    }

    pub fn activation(&mut self, a: NodeId, g: Nonlinearity) -> Result<NodeId> {
        self.record(Op::Activation(a, g))
    }

    pub fn scalar_divide(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.record(Op::ScalarDivide(a, s))
    }

    pub fn dot(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        self.record(Op::Dot(u, v))
    }

    pub fn squared_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SquaredNorm(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a))
    }

    /// Reverse sweep from the scalar `loss`. Gradients are recomputed from
    /// scratch on every call; inputs the loss does not reach get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let root = self.resolve(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::invalid("backward requires a scalar loss node"));
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(scalar(1.0));

        fn accumulate(slot: &mut Option<DMatrix<f64>>, g: DMatrix<f64>) {
            match slot {
                Some(acc) => *acc += g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let [pa, pb] = node.parents;
            match node.op {
                Op::Input | Op::Constant => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(..) => {
                    let (va, vb) = (&self.nodes[pa].value, &self.nodes[pb].value);
                    let ga = &g * vb.transpose();
                    let gb = va.tr_mul(&g);
                    accumulate(&mut grads[pa], ga);
                    accumulate(&mut grads[pb], gb);
                }
                Op::Transpose(_) => accumulate(&mut grads[pa], g.transpose()),
                Op::Add(..) => {
                    accumulate(&mut grads[pb], g.clone());
                    accumulate(&mut grads[pa], g.clone());
                }
                Op::Sub(..) => {
                    accumulate(&mut grads[pb], -&g);
                    accumulate(&mut grads[pa], g.clone());
                }
                Op::Scale(_, c) => accumulate(&mut grads[pa], &g * c),
                Op::Outer(..) => {
                    let (vu, vv) = (&self.nodes[pa].value, &self.nodes[pb].value);
                    let gu = &g * vv;
                    let gv = g.tr_mul(vu);
                    accumulate(&mut grads[pa], gu);
                    accumulate(&mut grads[pb], gv);
                }
                Op::Activation(_, act) => {
                    let out = &node.value;
                    let ga = g.zip_map(out, |gi, yi| gi * act.derivative_from_output(yi));
                    accumulate(&mut grads[pa], ga);
                }
                Op::ScalarDivide(..) => {
                    let d = self.nodes[pb].value[(0, 0)];
                    // d(A/s)/ds = -A/s^2 = -(A/s)/s
                    let gs = -g.dot(&node.value) / d;
                    accumulate(&mut grads[pa], &g / d);
                    accumulate(&mut grads[pb], scalar(gs));
                }
                Op::Dot(..) => {
                    let s = g[(0, 0)];
                    let (vu, vv) = (&self.nodes[pa].value, &self.nodes[pb].value);
                    let gu = vv * s;
                    let gv = vu * s;
                    accumulate(&mut grads[pa], gu);
                    accumulate(&mut grads[pb], gv);
                }
                Op::SquaredNorm(_) => {
                    let ga = &self.nodes[pa].value * (2.0 * g[(0, 0)]);
                    accumulate(&mut grads[pa], ga);
                }
                Op::Relu(_) => {
                    let ga = g.zip_map(&self.nodes[pa].value, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads[pa], ga);
                }
                Op::Sum(_) => {
                    let va = &self.nodes[pa].value;
                    accumulate(&mut grads[pa], DMatrix::from_element(va.nrows(), va.ncols(), g[(0, 0)]));
                }
            }
        }

        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if matches!(node.op, Op::Input) && slot.is_none() {
                *slot = Some(DMatrix::zeros(node.value.nrows(), node.value.ncols()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward loss with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&DMatrix<f64>> {
        let i = self.resolve(id).ok()?;
        self.grads.get(i)?.as_ref()
    }

    /// Clears gradient slots but keeps the recorded graph.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Drops every node and invalidates all outstanding [`NodeId`]s.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.generation = self.generation.wrapping_add(1);
    }
}
