//! Reverse-mode tape over dense row-major matrices.
//!
//! Every node holds a `rows x cols` matrix. By convention rows index samples in
//! a minibatch and columns index features, so a batch of `m` points in `R^d` is
//! an `m x d` node and per-sample scalars are `m x 1` nodes. The graph is
//! append-only: a node's parents always have smaller ids, which makes the
//! backward sweep a single reverse pass over the node list.
//!
//! Binary elementwise ops broadcast a `1 x c` row, an `r x 1` column or a
//! `1 x 1` scalar against the other operand; the backward pass sums the
//! adjoint over the broadcast axes.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A multi-input operation with a hand-written vector-Jacobian product.
///
/// Used for blocks that are awkward to express with the elementwise
/// primitives (e.g. a Gaussian log-likelihood parameterized by a covariance).
pub trait FusedOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Adjoint of every input given the adjoint of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Tanh,
    Sinh,
    Cosh,
    Asinh,
    LogCosh,
    Softplus,
    LogSigmoid,
    LeakyRelu(f64),
    Square,
    Sqrt,
    Recip,
}

#[derive(Debug)]
enum Partial {
    Const(f64),
    Elementwise(Tensor),
    None,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Unary {
        input: NodeId,
        partial: Partial,
    },
    /// Stable log(exp(a) + exp(b)); caches the softmax weight of `a`.
    LogAddExp {
        a: NodeId,
        b: NodeId,
        weight_a: Option<Tensor>,
    },
    SumRows(NodeId),
    SumAll(NodeId),
    SelectCols(NodeId, Vec<usize>),
    SelectRows(NodeId, Vec<usize>),
    /// Output column `cols[j]` of part `i` receives column `j` of that part;
    /// columns not covered by any part are zero.
    Assemble(Vec<(NodeId, Vec<usize>)>),
    Fused {
        op: Arc<dyn FusedOp>,
        inputs: Vec<NodeId>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// An append-only computation record.
///
/// A tape is single-writer. Build a fresh one per minibatch; independent tapes
/// can be evaluated on different threads.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    /// Param leaves per store uid, indexed by `ParamId`.
    params: Vec<(u64, Vec<Option<NodeId>>)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn bshape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sum `g` over the axes along which a tensor of `shape` was broadcast.
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl Tape {
    /// A tape that records local partials for a backward pass.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            record: true,
            params: Vec::new(),
        }
    }

    /// A value-only tape: forward results are identical, but `backward` fails.
    pub fn no_grad() -> Self {
        Tape {
            record: false,
            ..Self::new()
        }
    }

    pub fn records_gradients(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Input leaf. Gradients with respect to leaves are available after
    /// `backward`, so a leaf doubles as a differentiable input variable.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.leaf(Tensor::from_elem((1, 1), x))
    }

    /// Single-row leaf from a slice.
    pub fn row(&mut self, xs: &[f64]) -> NodeId {
        self.leaf(Tensor::from_shape_vec((1, xs.len()), xs.to_vec()).expect("row shape"))
    }

    /// Leaf bound to parameter `id` of `store`. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let uid = store.uid();
        let slot = match self.params.iter().position(|(u, _)| *u == uid) {
            Some(i) => i,
            None => {
                self.params.push((uid, vec![None; store.len()]));
                self.params.len() - 1
            }
        };
        if self.params[slot].1.len() < store.len() {
            self.params[slot].1.resize(store.len(), None);
        }
        if let Some(node) = self.params[slot].1[id.index()] {
            return node;
        }
        let node = self.push(Op::Param, store.get(id).clone());
        self.params[slot].1[id.index()] = Some(node);
        node
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        ctx: &'static str,
        f: impl Fn(&Tensor, &Tensor) -> Tensor,
        op: Op,
    ) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if bshape(sa, sb).is_none() {
            panic!("{ctx}: incompatible shapes {sa:?} and {sb:?}");
        }
        let v = f(self.value(a), self.value(b));
        self.push(op, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::dim("matmul", format!("inner dim {}", sa.1), sb.0));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn unary(&mut self, kind: UnaryKind, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (value, partial) = match kind {
            UnaryKind::Neg => (xv.mapv(|v| -v), Partial::Const(-1.0)),
            UnaryKind::Scale(c) => (xv.mapv(|v| c * v), Partial::Const(c)),
            UnaryKind::AddScalar(c) => (xv.mapv(|v| v + c), Partial::Const(1.0)),
            UnaryKind::Exp => {
                let v = xv.mapv(f64::exp);
                let p = self.record.then(|| v.clone());
                (v, p.map_or(Partial::None, Partial::Elementwise))
            }
            UnaryKind::Log => (xv.mapv(f64::ln), self.partial(|| xv.mapv(|v| 1.0 / v))),
            UnaryKind::Tanh => {
                let v = xv.mapv(f64::tanh);
                let p = self.partial(|| v.mapv(|t| 1.0 - t * t));
                (v, p)
            }
            UnaryKind::Sinh => (xv.mapv(f64::sinh), self.partial(|| xv.mapv(f64::cosh))),
            UnaryKind::Cosh => (xv.mapv(f64::cosh), self.partial(|| xv.mapv(f64::sinh))),
            UnaryKind::Asinh => (
                xv.mapv(f64::asinh),
                self.partial(|| xv.mapv(|v| 1.0 / v.mul_add(v, 1.0).sqrt())),
            ),
            UnaryKind::LogCosh => (xv.mapv(log_cosh), self.partial(|| xv.mapv(f64::tanh))),
            UnaryKind::Softplus => (xv.mapv(softplus), self.partial(|| xv.mapv(sigmoid))),
            UnaryKind::LogSigmoid => (
                xv.mapv(|v| -softplus(-v)),
                self.partial(|| xv.mapv(|v| sigmoid(-v))),
            ),
            UnaryKind::LeakyRelu(slope) => (
                xv.mapv(|v| if v > 0.0 { v } else { slope * v }),
                self.partial(|| xv.mapv(|v| if v > 0.0 { 1.0 } else { slope })),
            ),
            UnaryKind::Square => (xv.mapv(|v| v * v), self.partial(|| xv.mapv(|v| 2.0 * v))),
            UnaryKind::Sqrt => {
                let v = xv.mapv(f64::sqrt);
                let p = self.partial(|| v.mapv(|s| 0.5 / s));
                (v, p)
            }
            UnaryKind::Recip => (
                xv.mapv(|v| 1.0 / v),
                self.partial(|| xv.mapv(|v| -1.0 / (v * v))),
            ),
        };
        self.push(
            Op::Unary {
                input: x,
                partial,
            },
            value,
        )
    }

    fn partial(&self, f: impl FnOnce() -> Tensor) -> Partial {
        if self.record {
            Partial::Elementwise(f())
        } else {
            Partial::None
        }
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(UnaryKind::Scale(c), x)
    }
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(UnaryKind::AddScalar(c), x)
    }
    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Log, x)
    }
    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Tanh, x)
    }
    pub fn sinh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Sinh, x)
    }
    pub fn cosh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Cosh, x)
    }
    pub fn asinh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Asinh, x)
    }
    /// `log(cosh(x))`, stable for large `|x|`.
    pub fn log_cosh(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::LogCosh, x)
    }
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Softplus, x)
    }
    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::LogSigmoid, x)
    }
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }
    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Square, x)
    }
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(UnaryKind::Recip, x)
    }

    /// Elementwise `log(exp(a) + exp(b))`.
    pub fn log_add_exp(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            bshape(sa, sb).is_some(),
            "log_add_exp: incompatible shapes {sa:?} and {sb:?}"
        );
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = av + bv;
        let mut weight = value.clone();
        ndarray::Zip::from(&mut value)
            .and(&mut weight)
            .and_broadcast(av)
            .and_broadcast(bv)
            .for_each(|out, w, &x, &y| {
                let m = x.max(y);
                if m == f64::NEG_INFINITY {
                    *out = m;
                    *w = 0.5;
                } else {
                    let (ex, ey) = ((x - m).exp(), (y - m).exp());
                    *out = m + (ex + ey).ln();
                    *w = ex / (ex + ey);
                }
            });
        let weight_a = self.record.then_some(weight);
        self.push(Op::LogAddExp { a, b, weight_a }, value)
    }

    /// Per-row sum: `r x c -> r x 1`.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumRows(x), v)
    }

    /// Sum of all entries: `r x c -> 1 x 1`.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        // row-major sequential order keeps the reduction deterministic
        let s: f64 = self.value(x).iter().sum();
        self.push(Op::SumAll(x), Tensor::from_elem((1, 1), s))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn select_cols(&mut self, x: NodeId, cols: &[usize]) -> NodeId {
        let v = self.value(x).select(Axis(1), cols);
        self.push(Op::SelectCols(x, cols.to_vec()), v)
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(x).select(Axis(0), rows);
        self.push(Op::SelectRows(x, rows.to_vec()), v)
    }

    /// Scatter column blocks into a `rows x ncols` node (uncovered columns are zero).
    pub fn assemble_cols(&mut self, parts: &[(NodeId, Vec<usize>)], ncols: usize) -> Result<NodeId> {
        let rows = parts
            .iter()
            .map(|(n, _)| self.shape(*n).0)
            .max()
            .ok_or_else(|| Error::Contract("assemble_cols needs at least one part".into()))?;
        let mut v = Tensor::zeros((rows, ncols));
        for (node, cols) in parts {
            let pv = self.value(*node);
            if pv.ncols() != cols.len() || pv.nrows() != rows {
                return Err(Error::dim(
                    "assemble_cols",
                    format!("{rows}x{}", cols.len()),
                    format!("{}x{}", pv.nrows(), pv.ncols()),
                ));
            }
            for (j, &c) in cols.iter().enumerate() {
                if c >= ncols {
                    return Err(Error::dim("assemble_cols", format!("column < {ncols}"), c));
                }
                v.column_mut(c).assign(&pv.column(j));
            }
        }
        Ok(self.push(Op::Assemble(parts.to_vec()), v))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(xs.len());
        let mut offset = 0;
        for &x in xs {
            let c = self.shape(x).1;
            parts.push((x, (offset..offset + c).collect()));
            offset += c;
        }
        self.assemble_cols(&parts, offset)
    }

    /// Record a fused op whose forward value has already been computed.
    pub fn fused(&mut self, op: Arc<dyn FusedOp>, inputs: &[NodeId], value: Tensor) -> NodeId {
        self.push(
            Op::Fused {
                op,
                inputs: inputs.to_vec(),
            },
            value,
        )
    }

    /// Reverse sweep from a `1 x 1` output node, seeded with adjoint 1.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if !self.record {
            return Err(Error::Contract(
                "backward called on a tape recorded without gradients".into(),
            ));
        }
        if self.shape(output) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, node has shape {:?}",
                self.shape(output)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::from_elem((1, 1), 1.0));

        fn acc(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut adj[id.0] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, reduce_to(g.clone(), self.shape(*a)));
                    acc(&mut adj, *b, reduce_to(g.clone(), self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, reduce_to(g.clone(), self.shape(*a)));
                    acc(&mut adj, *b, reduce_to(-&g, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, reduce_to(ga, self.shape(*a)));
                    acc(&mut adj, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = &g / bv;
                    let gb = -(&g * &node.value) / bv;
                    acc(&mut adj, *a, reduce_to(ga, self.shape(*a)));
                    acc(&mut adj, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Unary { input, partial, .. } => {
                    let gi = match partial {
                        Partial::Const(c) => g.mapv(|v| v * c),
                        Partial::Elementwise(p) => &g * p,
                        Partial::None => unreachable!("recording tape stores partials"),
                    };
                    acc(&mut adj, *input, gi);
                }
                Op::LogAddExp { a, b, weight_a } => {
                    let w = weight_a.as_ref().expect("recording tape stores weights");
                    let ga = &g * w;
                    let gb = &g * &w.mapv(|v| 1.0 - v);
                    acc(&mut adj, *a, reduce_to(ga, self.shape(*a)));
                    acc(&mut adj, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::SumRows(x) => {
                    let (r, c) = self.shape(*x);
                    let gx = g.broadcast((r, c)).expect("sum_rows broadcast").to_owned();
                    acc(&mut adj, *x, gx);
                }
                Op::SumAll(x) => {
                    let gx = Tensor::from_elem(self.shape(*x), g[[0, 0]]);
                    acc(&mut adj, *x, gx);
                }
                Op::SelectCols(x, cols) => {
                    let mut gx = Tensor::zeros(self.shape(*x));
                    for (j, &c) in cols.iter().enumerate() {
                        let mut col = gx.column_mut(c);
                        col += &g.column(j);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::SelectRows(x, rows) => {
                    let mut gx = Tensor::zeros(self.shape(*x));
                    for (j, &r) in rows.iter().enumerate() {
                        let mut row = gx.row_mut(r);
                        row += &g.row(j);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Assemble(parts) => {
                    for (part, cols) in parts {
                        let gp = g.select(Axis(1), cols);
                        acc(&mut adj, *part, gp);
                    }
                }
                Op::Fused { op, inputs } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|n| self.value(*n)).collect();
                    let grads = op.backward(&vals, &node.value, &g);
                    debug_assert_eq!(grads.len(), inputs.len(), "{} backward arity", op.name());
                    for (n, gn) in inputs.iter().zip(grads) {
                        acc(&mut adj, *n, gn);
                    }
                }
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            adjoints: adj,
            params: self.params.clone(),
        })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    params: Vec<(u64, Vec<Option<NodeId>>)>,
}

impl Gradients {
    /// Adjoint of any node, `None` if the output does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter of `store`, in `ParamId` order. Parameters
    /// that never reached the tape get a zero gradient.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let slots = self
            .params
            .iter()
            .find(|(u, _)| *u == store.uid())
            .map(|(_, s)| s.as_slice())
            .unwrap_or(&[]);
        store
            .ids()
            .map(|id| {
                slots
                    .get(id.index())
                    .copied()
                    .flatten()
                    .and_then(|n| self.wrt(n).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).dim()))
            })
            .collect()
    }

    /// Flattened parameter gradient in the same order as [`ParamStore::to_flat`].
    pub fn flat_for_store(&self, store: &ParamStore) -> Vec<f64> {
        self.for_store(store)
            .into_iter()
            .flat_map(|t| t.into_iter())
            .collect()
    }
}
