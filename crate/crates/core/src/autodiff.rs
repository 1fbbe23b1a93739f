//! Minimal reverse-mode automatic differentiation over dense buffers.
//!
//! A [`Graph`] records operations eagerly; [`DiffValue`]s are cheap handles
//! into it. One graph is built per training step, `backward` runs once, and
//! the graph is dropped. Buffers are shaped as H×W×C rasters (scalars are
//! 1×1×1, per-channel vectors 1×1×C, depth maps H×W×1) and binary operations
//! broadcast per dimension the usual way: sizes must match or be 1.
//!
//! Gradient conventions the losses rely on:
//! - `detach` passes values through and severs gradient flow to its parents.
//! - `max_with_const` / `min_with_const` use subgradient 0 on the constant
//!   branch, so an inactive hinge contributes nothing.
//! - `backward` accumulates: calling it twice without `zero_grads` doubles
//!   every gradient.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use crate::image::{RgbImage, ScalarMap};
use crate::math;
use crate::{Error, Result};

/// Buffer dimensions: height × width × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn scalar() -> Self {
        Self { h: 1, w: 1, c: 1 }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.h == 1 && self.w == 1 && self.c == 1
    }

    fn broadcast(self, other: Shape) -> Result<Shape> {
        fn dim(a: usize, b: usize) -> Option<usize> {
            if a == b {
                Some(a)
            } else if a == 1 {
                Some(b)
            } else if b == 1 {
                Some(a)
            } else {
                None
            }
        }
        let err = Error::ShapeMismatch {
            left: self,
            right: other,
        };
        Ok(Shape {
            h: dim(self.h, other.h).ok_or(err.clone())?,
            w: dim(self.w, other.w).ok_or(err.clone())?,
            c: dim(self.c, other.c).ok_or(err)?,
        })
    }

    /// Element strides of an operand of this shape when indexed by
    /// coordinates of the (possibly larger) broadcast output shape.
    fn strides_for(&self) -> (usize, usize, usize) {
        let sc = if self.c == 1 { 0 } else { 1 };
        let sw = if self.w == 1 { 0 } else { self.c };
        let sh = if self.h == 1 { 0 } else { self.w * self.c };
        (sh, sw, sc)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// A custom differentiable operation with hand-written backward rules (used
/// by the splat renderer, whose gradients do not decompose into elementwise
/// steps).
pub trait CustomOp {
    /// Human-readable name for diagnostics.
    fn name(&self) -> &'static str;

    /// Given the upstream gradient of output `out_index`, return one gradient
    /// buffer per parent (sized like the parent's values), or an empty vec
    /// for parents that receive no gradient.
    fn backward(
        &self,
        out_index: usize,
        out_grad: &[f64],
        parent_values: &[&[f64]],
    ) -> Vec<Vec<f64>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Sigmoid(usize),
    Softplus(usize),
    AddConst(usize, f64),
    MulConst(usize, f64),
    MaxConst(usize, f64),
    MinConst(usize, f64),
    Sum(usize),
    Mean(usize),
    MeanPerChannel(usize),
    Dx(usize),
    Dy(usize),
    Conv2dValid {
        parent: usize,
        kh: usize,
        kw: usize,
        kernel: Rc<Vec<f64>>,
    },
    Detach(usize),
    Custom {
        parents: Rc<Vec<usize>>,
        op: Rc<dyn CustomOp>,
        out_index: usize,
    },
}

struct Node {
    shape: Shape,
    values: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

struct GraphInner {
    nodes: Vec<Node>,
    /// Persistent accumulated gradients; empty vec = all zeros.
    grads: Vec<Vec<f64>>,
}

/// Handle to a computation graph. Cloning shares the same graph.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// A node in the graph: values plus a gradient slot filled by `backward`.
#[derive(Clone)]
pub struct DiffValue {
    graph: Graph,
    idx: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    fn push(&self, shape: Shape, values: Vec<f64>, op: Op, requires_grad: bool) -> DiffValue {
        debug_assert_eq!(shape.len(), values.len());
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            shape,
            values,
            op,
            requires_grad,
        });
        inner.grads.push(Vec::new());
        DiffValue {
            graph: self.clone(),
            idx: inner.nodes.len() - 1,
        }
    }

    /// A learnable leaf: participates in gradient accumulation.
    pub fn leaf(&self, shape: Shape, values: Vec<f64>) -> DiffValue {
        self.push(shape, values, Op::Leaf, true)
    }

    /// A constant leaf: never receives or propagates gradient.
    pub fn constant(&self, shape: Shape, values: Vec<f64>) -> DiffValue {
        self.push(shape, values, Op::Leaf, false)
    }

    pub fn scalar_const(&self, v: f64) -> DiffValue {
        self.constant(Shape::scalar(), vec![v])
    }

    /// Constant H×W×3 node from an image.
    pub fn input_image(&self, img: &RgbImage) -> DiffValue {
        self.constant(
            Shape::new(img.height(), img.width(), 3),
            img.data().to_vec(),
        )
    }

    /// Constant H×W×1 node from a scalar map.
    pub fn input_map(&self, map: &ScalarMap) -> DiffValue {
        let values = map.data().iter().map(|&v| v as f64).collect();
        self.constant(Shape::new(map.height(), map.width(), 1), values)
    }

    /// Multi-output custom operation. `outputs` carries the forward results;
    /// the returned handles index into `op::backward` by position.
    pub fn custom(
        &self,
        parents: &[&DiffValue],
        outputs: Vec<(Shape, Vec<f64>)>,
        op: Rc<dyn CustomOp>,
    ) -> Result<Vec<DiffValue>> {
        for p in parents {
            if !Rc::ptr_eq(&p.graph.inner, &self.inner) {
                return Err(Error::GraphMismatch);
            }
        }
        let requires = parents.iter().any(|p| p.requires_grad());
        let idxs = Rc::new(parents.iter().map(|p| p.idx).collect::<Vec<_>>());
        Ok(outputs
            .into_iter()
            .enumerate()
            .map(|(k, (shape, values))| {
                self.push(
                    shape,
                    values,
                    Op::Custom {
                        parents: idxs.clone(),
                        op: op.clone(),
                        out_index: k,
                    },
                    requires,
                )
            })
            .collect())
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Reset all accumulated gradients to zero.
    pub fn zero_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in &mut inner.grads {
            g.clear();
        }
    }
}

impl DiffValue {
    pub fn shape(&self) -> Shape {
        self.graph.inner.borrow().nodes[self.idx].shape
    }

    /// Handle to the graph this value belongs to.
    pub fn graph(&self) -> Graph {
        self.graph.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.idx].requires_grad
    }

    /// Copy of the forward values.
    pub fn values(&self) -> Vec<f64> {
        self.graph.inner.borrow().nodes[self.idx].values.clone()
    }

    /// Value of a scalar node.
    pub fn value_scalar(&self) -> f64 {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.idx];
        debug_assert!(node.shape.is_scalar());
        node.values[0]
    }

    /// Copy of the accumulated gradient (zeros if `backward` has not reached
    /// this node).
    pub fn grad(&self) -> Vec<f64> {
        let inner = self.graph.inner.borrow();
        let g = &inner.grads[self.idx];
        if g.is_empty() {
            vec![0.0; inner.nodes[self.idx].shape.len()]
        } else {
            g.clone()
        }
    }

    /// Convert an H×W×3 node's values to an image.
    pub fn to_rgb_image(&self) -> RgbImage {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.idx];
        debug_assert_eq!(node.shape.c, 3);
        RgbImage::from_vec(node.shape.w, node.shape.h, node.values.clone())
            .expect("shape consistent")
    }

    /// Convert an H×W×1 node's values to an f32 scalar map.
    pub fn to_scalar_map(&self) -> ScalarMap {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.idx];
        debug_assert_eq!(node.shape.c, 1);
        let data = node.values.iter().map(|&v| v as f32).collect();
        ScalarMap::from_vec(node.shape.w, node.shape.h, data).expect("shape consistent")
    }

    fn same_graph(&self, other: &DiffValue) -> Result<()> {
        if Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            Ok(())
        } else {
            Err(Error::GraphMismatch)
        }
    }

    fn binary(&self, other: &DiffValue, make: impl Fn(usize, usize) -> Op) -> Result<DiffValue> {
        self.same_graph(other)?;
        let (out_shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.idx];
            let b = &inner.nodes[other.idx];
            let out_shape = a.shape.broadcast(b.shape)?;
            let op = make(0, 0);
            let values = broadcast_apply(out_shape, a, b, |x, y| match op {
                Op::Add(..) => x + y,
                Op::Sub(..) => x - y,
                Op::Mul(..) => x * y,
                Op::Div(..) => x / y,
                _ => unreachable!(),
            });
            (out_shape, values, a.requires_grad || b.requires_grad)
        };
        Ok(self
            .graph
            .push(out_shape, values, make(self.idx, other.idx), requires))
    }

    pub fn add(&self, other: &DiffValue) -> Result<DiffValue> {
        self.binary(other, Op::Add)
    }

    pub fn sub(&self, other: &DiffValue) -> Result<DiffValue> {
        self.binary(other, Op::Sub)
    }

    pub fn mul(&self, other: &DiffValue) -> Result<DiffValue> {
        self.binary(other, Op::Mul)
    }

    pub fn div(&self, other: &DiffValue) -> Result<DiffValue> {
        self.binary(other, Op::Div)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> DiffValue {
        let (shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            (
                node.shape,
                node.values.iter().map(|&v| f(v)).collect(),
                node.requires_grad,
            )
        };
        self.graph.push(shape, values, op, requires)
    }

    pub fn neg(&self) -> DiffValue {
        self.unary(Op::Neg(self.idx), |v| -v)
    }

    pub fn exp(&self) -> DiffValue {
        self.unary(Op::Exp(self.idx), math::exp)
    }

    pub fn ln(&self) -> DiffValue {
        self.unary(Op::Ln(self.idx), math::ln)
    }

    pub fn abs(&self) -> DiffValue {
        self.unary(Op::Abs(self.idx), |v| v.abs())
    }

    pub fn sigmoid(&self) -> DiffValue {
        self.unary(Op::Sigmoid(self.idx), math::sigmoid)
    }

    pub fn softplus(&self) -> DiffValue {
        self.unary(Op::Softplus(self.idx), math::softplus)
    }

    pub fn add_const(&self, c: f64) -> DiffValue {
        self.unary(Op::AddConst(self.idx, c), |v| v + c)
    }

    pub fn mul_const(&self, c: f64) -> DiffValue {
        self.unary(Op::MulConst(self.idx, c), |v| v * c)
    }

    /// Elementwise `max(x, c)`; subgradient 0 where the constant branch wins.
    pub fn max_with_const(&self, c: f64) -> DiffValue {
        self.unary(Op::MaxConst(self.idx, c), |v| v.max(c))
    }

    /// Elementwise `min(x, c)`; subgradient 0 where the constant branch wins.
    pub fn min_with_const(&self, c: f64) -> DiffValue {
        self.unary(Op::MinConst(self.idx, c), |v| v.min(c))
    }

    /// Alias of [`max_with_const`]: clamps from below.
    pub fn clamp_min(&self, c: f64) -> DiffValue {
        self.max_with_const(c)
    }

    pub fn sum(&self) -> DiffValue {
        let (total, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            (node.values.iter().sum::<f64>(), node.requires_grad)
        };
        self.graph
            .push(Shape::scalar(), vec![total], Op::Sum(self.idx), requires)
    }

    pub fn mean(&self) -> DiffValue {
        let (total, n, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            (
                node.values.iter().sum::<f64>(),
                node.values.len() as f64,
                node.requires_grad,
            )
        };
        self.graph.push(
            Shape::scalar(),
            vec![total / n],
            Op::Mean(self.idx),
            requires,
        )
    }

    /// Mean over pixels per channel: H×W×C → 1×1×C.
    pub fn mean_per_channel(&self) -> DiffValue {
        let (shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            let s = node.shape;
            let n = (s.h * s.w) as f64;
            let mut sums = vec![0.0; s.c];
            for px in node.values.chunks_exact(s.c) {
                for (acc, v) in sums.iter_mut().zip(px) {
                    *acc += v;
                }
            }
            for v in &mut sums {
                *v /= n;
            }
            (Shape::new(1, 1, s.c), sums, node.requires_grad)
        };
        self.graph
            .push(shape, values, Op::MeanPerChannel(self.idx), requires)
    }

    /// Forward difference along x per channel; last column zero.
    pub fn dx(&self) -> DiffValue {
        let (shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            let s = node.shape;
            let mut out = vec![0.0; node.values.len()];
            for y in 0..s.h {
                for x in 0..s.w.saturating_sub(1) {
                    for c in 0..s.c {
                        let i = (y * s.w + x) * s.c + c;
                        out[i] = node.values[i + s.c] - node.values[i];
                    }
                }
            }
            (s, out, node.requires_grad)
        };
        self.graph.push(shape, values, Op::Dx(self.idx), requires)
    }

    /// Forward difference along y per channel; last row zero.
    pub fn dy(&self) -> DiffValue {
        let (shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            let s = node.shape;
            let mut out = vec![0.0; node.values.len()];
            let row = s.w * s.c;
            for y in 0..s.h.saturating_sub(1) {
                for x in 0..s.w {
                    for c in 0..s.c {
                        let i = (y * s.w + x) * s.c + c;
                        out[i] = node.values[i + row] - node.values[i];
                    }
                }
            }
            (s, out, node.requires_grad)
        };
        self.graph.push(shape, values, Op::Dy(self.idx), requires)
    }

    /// Per-channel valid-mode 2D convolution with a fixed (non-differentiable)
    /// kernel: H×W×C → (H−kh+1)×(W−kw+1)×C.
    pub fn conv2d_valid(&self, kernel: &[f64], kh: usize, kw: usize) -> Result<DiffValue> {
        assert_eq!(kernel.len(), kh * kw);
        let (shape, values, requires) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            let s = node.shape;
            if kh > s.h || kw > s.w {
                return Err(Error::KernelTooLarge {
                    kernel: (kw, kh),
                    image: (s.w, s.h),
                });
            }
            let oh = s.h - kh + 1;
            let ow = s.w - kw + 1;
            let mut out = vec![0.0; oh * ow * s.c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..s.c {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let i = ((oy + ky) * s.w + ox + kx) * s.c + c;
                                acc += kernel[ky * kw + kx] * node.values[i];
                            }
                        }
                        out[(oy * ow + ox) * s.c + c] = acc;
                    }
                }
            }
            (Shape::new(oh, ow, s.c), out, node.requires_grad)
        };
        Ok(self.graph.push(
            shape,
            values,
            Op::Conv2dValid {
                parent: self.idx,
                kh,
                kw,
                kernel: Rc::new(kernel.to_vec()),
            },
            requires,
        ))
    }

    /// Same values, gradient flow to ancestors severed.
    pub fn detach(&self) -> DiffValue {
        let (shape, values) = {
            let inner = self.graph.inner.borrow();
            let node = &inner.nodes[self.idx];
            (node.shape, node.values.clone())
        };
        self.graph.push(shape, values, Op::Detach(self.idx), false)
    }

    /// Run reverse-mode accumulation from this scalar node.
    pub fn backward(&self) -> Result<()> {
        backward_impl(&self.graph, self.idx)
    }
}

/// Apply a binary elementwise function under broadcasting.
fn broadcast_apply(out_shape: Shape, a: &Node, b: &Node, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.shape == b.shape {
        return a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| f(x, y))
            .collect();
    }
    let (ah, aw, ac) = a.shape.strides_for();
    let (bh, bw, bc) = b.shape.strides_for();
    let mut out = Vec::with_capacity(out_shape.len());
    for y in 0..out_shape.h {
        for x in 0..out_shape.w {
            for c in 0..out_shape.c {
                let av = a.values[y * ah + x * aw + c * ac];
                let bv = b.values[y * bh + x * bw + c * bc];
                out.push(f(av, bv));
            }
        }
    }
    out
}

/// Accumulate `g` (shaped `out_shape`) into a parent of shape `p_shape`,
/// summing over broadcast dimensions, weighting each element by `weight(i)`
/// where `i` indexes the output buffer.
fn accumulate_broadcast(
    out_shape: Shape,
    p_shape: Shape,
    g: &[f64],
    target: &mut [f64],
    weight: impl Fn(usize) -> f64,
) {
    if out_shape == p_shape {
        for (i, (t, &gv)) in target.iter_mut().zip(g).enumerate() {
            *t += gv * weight(i);
        }
        return;
    }
    let (ph, pw, pc) = p_shape.strides_for();
    let mut i = 0;
    for y in 0..out_shape.h {
        for x in 0..out_shape.w {
            for c in 0..out_shape.c {
                target[y * ph + x * pw + c * pc] += g[i] * weight(i);
                i += 1;
            }
        }
    }
}

/// Read a parent's value at the output-buffer position `i` under broadcasting.
struct BroadcastReader<'a> {
    values: &'a [f64],
    strides: (usize, usize, usize),
    out: Shape,
    same: bool,
}

impl<'a> BroadcastReader<'a> {
    fn new(out: Shape, node: &'a Node) -> Self {
        Self {
            values: &node.values,
            strides: node.shape.strides_for(),
            out,
            same: node.shape == out,
        }
    }

    fn get(&self, i: usize) -> f64 {
        if self.same {
            return self.values[i];
        }
        let c = i % self.out.c;
        let rest = i / self.out.c;
        let x = rest % self.out.w;
        let y = rest / self.out.w;
        self.values[y * self.strides.0 + x * self.strides.1 + c * self.strides.2]
    }
}

fn backward_impl(graph: &Graph, loss_idx: usize) -> Result<()> {
    let mut inner = graph.inner.borrow_mut();
    if !inner.nodes[loss_idx].shape.is_scalar() {
        return Err(Error::NonScalarLoss(inner.nodes[loss_idx].shape));
    }

    let n = loss_idx + 1;
    let mut temp: Vec<Option<Vec<f64>>> = vec![None; n];
    temp[loss_idx] = Some(vec![1.0]);

    let GraphInner { nodes, grads } = &mut *inner;

    for i in (0..n).rev() {
        let Some(g) = temp[i].take() else { continue };
        if !nodes[i].requires_grad && !matches!(nodes[i].op, Op::Leaf) {
            // Constant subgraph: nothing upstream wants a gradient.
            continue;
        }
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }

        // Helper to lazily materialize a parent's temp gradient buffer.
        macro_rules! tgrad {
            ($p:expr) => {{
                let len = nodes[$p].shape.len();
                temp[$p].get_or_insert_with(|| vec![0.0; len])
            }};
        }

        let out_shape = nodes[i].shape;
        match nodes[i].op.clone() {
            Op::Leaf | Op::Detach(_) => {}
            Op::Add(a, b) => {
                if nodes[a].requires_grad {
                    accumulate_broadcast(out_shape, nodes[a].shape, &g, tgrad!(a), |_| 1.0);
                }
                if nodes[b].requires_grad {
                    accumulate_broadcast(out_shape, nodes[b].shape, &g, tgrad!(b), |_| 1.0);
                }
            }
            Op::Sub(a, b) => {
                if nodes[a].requires_grad {
                    accumulate_broadcast(out_shape, nodes[a].shape, &g, tgrad!(a), |_| 1.0);
                }
                if nodes[b].requires_grad {
                    accumulate_broadcast(out_shape, nodes[b].shape, &g, tgrad!(b), |_| -1.0);
                }
            }
            Op::Mul(a, b) => {
                if nodes[a].requires_grad {
                    let rb = BroadcastReader::new(out_shape, &nodes[b]);
                    let w: Vec<f64> = (0..out_shape.len()).map(|i| rb.get(i)).collect();
                    accumulate_broadcast(out_shape, nodes[a].shape, &g, tgrad!(a), |i| w[i]);
                }
                if nodes[b].requires_grad {
                    let ra = BroadcastReader::new(out_shape, &nodes[a]);
                    let w: Vec<f64> = (0..out_shape.len()).map(|i| ra.get(i)).collect();
                    accumulate_broadcast(out_shape, nodes[b].shape, &g, tgrad!(b), |i| w[i]);
                }
            }
            Op::Div(a, b) => {
                if nodes[a].requires_grad {
                    let rb = BroadcastReader::new(out_shape, &nodes[b]);
                    let w: Vec<f64> = (0..out_shape.len()).map(|i| 1.0 / rb.get(i)).collect();
                    accumulate_broadcast(out_shape, nodes[a].shape, &g, tgrad!(a), |i| w[i]);
                }
                if nodes[b].requires_grad {
                    let ra = BroadcastReader::new(out_shape, &nodes[a]);
                    let rb = BroadcastReader::new(out_shape, &nodes[b]);
                    let w: Vec<f64> = (0..out_shape.len())
                        .map(|i| {
                            let bv = rb.get(i);
                            -ra.get(i) / (bv * bv)
                        })
                        .collect();
                    accumulate_broadcast(out_shape, nodes[b].shape, &g, tgrad!(b), |i| w[i]);
                }
            }
            Op::Neg(a) => {
                let t = tgrad!(a);
                for (tv, &gv) in t.iter_mut().zip(&g) {
                    *tv -= gv;
                }
            }
            Op::Exp(a) => {
                let out = nodes[i].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &ov) in t.iter_mut().zip(&g).zip(&out) {
                    *tv += gv * ov;
                }
            }
            Op::Ln(a) => {
                let av = nodes[a].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &v) in t.iter_mut().zip(&g).zip(&av) {
                    *tv += gv / v;
                }
            }
            Op::Abs(a) => {
                let av = nodes[a].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &v) in t.iter_mut().zip(&g).zip(&av) {
                    let s = if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *tv += gv * s;
                }
            }
            Op::Sigmoid(a) => {
                let out = nodes[i].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &s) in t.iter_mut().zip(&g).zip(&out) {
                    *tv += gv * s * (1.0 - s);
                }
            }
            Op::Softplus(a) => {
                let av = nodes[a].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &v) in t.iter_mut().zip(&g).zip(&av) {
                    *tv += gv * math::sigmoid(v);
                }
            }
            Op::AddConst(a, _) => {
                let t = tgrad!(a);
                for (tv, &gv) in t.iter_mut().zip(&g) {
                    *tv += gv;
                }
            }
            Op::MulConst(a, c) => {
                let t = tgrad!(a);
                for (tv, &gv) in t.iter_mut().zip(&g) {
                    *tv += gv * c;
                }
            }
            Op::MaxConst(a, c) => {
                let av = nodes[a].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &v) in t.iter_mut().zip(&g).zip(&av) {
                    if v > c {
                        *tv += gv;
                    }
                }
            }
            Op::MinConst(a, c) => {
                let av = nodes[a].values.clone();
                let t = tgrad!(a);
                for ((tv, &gv), &v) in t.iter_mut().zip(&g).zip(&av) {
                    if v < c {
                        *tv += gv;
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g[0];
                let t = tgrad!(a);
                for tv in t.iter_mut() {
                    *tv += gv;
                }
            }
            Op::Mean(a) => {
                let n = nodes[a].shape.len() as f64;
                let gv = g[0] / n;
                let t = tgrad!(a);
                for tv in t.iter_mut() {
                    *tv += gv;
                }
            }
            Op::MeanPerChannel(a) => {
                let s = nodes[a].shape;
                let n = (s.h * s.w) as f64;
                let t = tgrad!(a);
                for (i, tv) in t.iter_mut().enumerate() {
                    *tv += g[i % s.c] / n;
                }
            }
            Op::Dx(a) => {
                let s = nodes[a].shape;
                let t = tgrad!(a);
                for y in 0..s.h {
                    for x in 0..s.w.saturating_sub(1) {
                        for c in 0..s.c {
                            let i = (y * s.w + x) * s.c + c;
                            t[i + s.c] += g[i];
                            t[i] -= g[i];
                        }
                    }
                }
            }
            Op::Dy(a) => {
                let s = nodes[a].shape;
                let row = s.w * s.c;
                let t = tgrad!(a);
                for y in 0..s.h.saturating_sub(1) {
                    for x in 0..s.w {
                        for c in 0..s.c {
                            let i = (y * s.w + x) * s.c + c;
                            t[i + row] += g[i];
                            t[i] -= g[i];
                        }
                    }
                }
            }
            Op::Conv2dValid {
                parent,
                kh,
                kw,
                kernel,
            } => {
                let s = nodes[parent].shape;
                let ow = out_shape.w;
                let t = tgrad!(parent);
                for oy in 0..out_shape.h {
                    for ox in 0..ow {
                        for c in 0..out_shape.c {
                            let gv = g[(oy * ow + ox) * out_shape.c + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let i = ((oy + ky) * s.w + ox + kx) * s.c + c;
                                    t[i] += gv * kernel[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
            Op::Custom {
                parents,
                op,
                out_index,
            } => {
                let parent_values: Vec<&[f64]> =
                    parents.iter().map(|&p| nodes[p].values.as_slice()).collect();
                let contributions = op.backward(out_index, &g, &parent_values);
                debug_assert_eq!(contributions.len(), parents.len());
                for (&p, contrib) in parents.iter().zip(contributions) {
                    if contrib.is_empty() || !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(contrib.len(), nodes[p].shape.len());
                    let t = tgrad!(p);
                    for (tv, gv) in t.iter_mut().zip(contrib) {
                        *tv += gv;
                    }
                }
            }
        }

        // Fold this pass's gradient into the persistent accumulator so that a
        // second backward call accumulates on top.
        if nodes[i].requires_grad {
            if grads[i].is_empty() {
                grads[i] = g;
            } else {
                for (pg, gv) in grads[i].iter_mut().zip(&g) {
                    *pg += gv;
                }
            }
        }
    }
    Ok(())
}

/// A loss node together with the parameter leaf it should be checked against.
pub struct GradProbe {
    pub loss: DiffValue,
    pub param: DiffValue,
}

/// Compare the analytic gradient of `f`'s loss w.r.t. its parameter against
/// central finite differences, returning the maximum error. Coordinates where
/// `|analytic| < 1e-8` are compared absolutely, all others relatively.
///
/// `f` must rebuild a fresh graph from the supplied parameter buffer on every
/// call and be deterministic.
pub fn finite_diff_check<F: Fn(&[f64]) -> GradProbe>(f: F, at: &[f64], eps: f64) -> f64 {
    let probe = f(at);
    probe
        .loss
        .backward()
        .expect("finite_diff_check requires a scalar loss");
    let analytic = probe.param.grad();
    assert_eq!(analytic.len(), at.len());

    let mut max_err = 0.0f64;
    let mut buf = at.to_vec();
    for k in 0..at.len() {
        let orig = buf[k];
        buf[k] = orig + eps;
        let fp = f(&buf).loss.value_scalar();
        buf[k] = orig - eps;
        let fm = f(&buf).loss.value_scalar();
        buf[k] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic[k];
        let err = if a.abs() < 1e-8 {
            (a - fd).abs()
        } else {
            (a - fd).abs() / a.abs().max(fd.abs())
        };
        if err > max_err {
            max_err = err;
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exp_at_zero() {
        let g = Graph::new();
        let x = g.leaf(Shape::scalar(), vec![0.0]);
        let y = x.exp();
        assert_abs_diff_eq!(y.value_scalar(), 1.0);
        y.backward().unwrap();
        assert_abs_diff_eq!(x.grad()[0], 1.0);
    }

    #[test]
    fn square_gradient() {
        let g = Graph::new();
        let x = g.leaf(Shape::scalar(), vec![3.0]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_abs_diff_eq!(y.value_scalar(), 9.0);
        assert_abs_diff_eq!(x.grad()[0], 6.0);
    }

    #[test]
    fn max_const_inactive_branch() {
        let g = Graph::new();
        let x = g.leaf(Shape::scalar(), vec![-1.0]);
        let y = x.max_with_const(0.0);
        y.backward().unwrap();
        assert_eq!(y.value_scalar(), 0.0);
        assert_eq!(x.grad()[0], 0.0);
    }

    #[test]
    fn detach_severs_gradient() {
        // loss = sum(detach(z) * x) → grad(x) = z values, grad(z) = 0.
        let g = Graph::new();
        let z = g.leaf(Shape::new(1, 1, 3), vec![1.0, 2.0, 3.0]);
        let x = g.leaf(Shape::new(1, 1, 3), vec![4.0, 5.0, 6.0]);
        let loss = z.detach().mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad(), vec![1.0, 2.0, 3.0]);
        assert_eq!(z.grad(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn no_detach_contrast_case() {
        let g = Graph::new();
        let z = g.leaf(Shape::new(1, 1, 3), vec![1.0, 2.0, 3.0]);
        let x = g.leaf(Shape::new(1, 1, 3), vec![4.0, 5.0, 6.0]);
        let loss = z.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(z.grad(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn detach_is_idempotent() {
        let g = Graph::new();
        let z = g.leaf(Shape::scalar(), vec![2.0]);
        let d1 = z.detach();
        let d2 = d1.detach();
        let loss = d2.mul_const(3.0).sum();
        loss.backward().unwrap();
        assert_eq!(d2.values(), vec![2.0]);
        assert_eq!(z.grad()[0], 0.0);
    }

    #[test]
    fn backward_twice_accumulates() {
        let g = Graph::new();
        let x = g.leaf(Shape::scalar(), vec![3.0]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_abs_diff_eq!(x.grad()[0], 12.0);
        g.zero_grads();
        y.backward().unwrap();
        assert_abs_diff_eq!(x.grad()[0], 6.0);
    }

    #[test]
    fn non_scalar_loss_errors() {
        let g = Graph::new();
        let x = g.leaf(Shape::new(1, 2, 1), vec![1.0, 2.0]);
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_errors() {
        let g = Graph::new();
        let a = g.leaf(Shape::new(2, 2, 1), vec![0.0; 4]);
        let b = g.leaf(Shape::new(3, 1, 1), vec![0.0; 3]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn graph_mismatch_errors() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.scalar_const(1.0);
        let b = g2.scalar_const(2.0);
        assert!(matches!(a.add(&b), Err(Error::GraphMismatch)));
    }

    #[test]
    fn channel_broadcast_forward_and_backward() {
        // (1,1,3) vector times (2,1,1) map → (2,1,3).
        let g = Graph::new();
        let v = g.leaf(Shape::new(1, 1, 3), vec![1.0, 2.0, 3.0]);
        let m = g.leaf(Shape::new(2, 1, 1), vec![10.0, 20.0]);
        let out = v.mul(&m).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 1, 3));
        assert_eq!(out.values(), vec![10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
        let loss = out.sum();
        loss.backward().unwrap();
        assert_eq!(v.grad(), vec![30.0, 30.0, 30.0]);
        assert_eq!(m.grad(), vec![6.0, 6.0]);
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let at: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let err = finite_diff_check(
            |x| {
                let g = Graph::new();
                let p = g.leaf(Shape::new(1, 1, x.len()), x.to_vec());
                GradProbe {
                    loss: p.mul(&p).unwrap().sum(),
                    param: p,
                }
            },
            &at,
            1e-4,
        );
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn finite_diff_constant_function() {
        let err = finite_diff_check(
            |x| {
                let g = Graph::new();
                let p = g.leaf(Shape::new(1, 1, x.len()), x.to_vec());
                GradProbe {
                    loss: g.scalar_const(7.0).mul_const(1.0).sum(),
                    param: p,
                }
            },
            &[0.3, -0.4],
            1e-4,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn conv2d_valid_matches_hand_computation() {
        let g = Graph::new();
        // 2x2 image, single channel, kernel [[1,2],[3,4]].
        let img = g.leaf(Shape::new(2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]);
        let out = img.conv2d_valid(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1));
        assert_abs_diff_eq!(out.value_scalar(), 1.0 + 4.0 + 9.0 + 16.0);
        out.backward().unwrap();
        assert_eq!(img.grad(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dx_dy_forward_and_backward_are_linear_adjoints() {
        let g = Graph::new();
        let m = g.leaf(Shape::new(2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]);
        let gx = m.dx();
        assert_eq!(gx.values(), vec![1.0, 0.0, 1.0, 0.0]);
        let gy = m.dy();
        assert_eq!(gy.values(), vec![2.0, 2.0, 0.0, 0.0]);
        let loss = gx.sum().add(&gy.sum()).unwrap();
        loss.backward().unwrap();
        // loss = (m10-m00) + (m11-m01) + (m01-m00) + (m11-m10)
        //      = -2*m00 + 0*m01 + 0*m10 + 2*m11 (row-major order m00,m10,m01,m11).
        assert_eq!(m.grad(), vec![-2.0, 0.0, 0.0, 2.0]);
    }

    proptest! {
        #[test]
        fn sum_gradient_is_all_ones(h in 1usize..5, w in 1usize..5, c in 1usize..4) {
            let g = Graph::new();
            let n = h * w * c;
            let vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 1.0).collect();
            let x = g.leaf(Shape::new(h, w, c), vals);
            x.sum().backward().unwrap();
            prop_assert!(x.grad().iter().all(|&v| v == 1.0));
        }

        #[test]
        fn detached_subgraph_contributes_zero(vals in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
            let g = Graph::new();
            let n = vals.len();
            let z = g.leaf(Shape::new(1, 1, n), vals.clone());
            let x = g.leaf(Shape::new(1, 1, n), vals);
            // Mix detached and live paths; z must still get zero.
            let loss = z.detach().mul(&x).unwrap().sum()
                .add(&z.detach().exp().sum().mul_const(0.5)).unwrap();
            loss.backward().unwrap();
            prop_assert!(z.grad().iter().all(|&v| v == 0.0));
        }
    }
}
