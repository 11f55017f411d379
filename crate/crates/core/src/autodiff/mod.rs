//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the record in reverse. Every derivative rule is
//! itself written with graph primitives, so a backward pass run with
//! `create_graph = true` leaves its outputs as ordinary differentiable
//! nodes, and a second backward over an expression of those gradients gives
//! exact second-order derivatives (reverse-over-reverse).
//!
//! Graphs are single-threaded; build one per worker.

pub mod kernels;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add,
    Sub,
    Scale(S),
    /// tensor times a one-element node
    MulScalar,
    Dot,
    Sum,
    Expand(Vec<usize>),
    Norm,
    /// reciprocal of a one-element node
    Recip,
    Sqrt,
    Relu,
    /// upstream masked by `parent[1] > 0`
    ReluMask,
    MatMul,
    Transpose,
    BiasAdd,
    BiasReduce,
    BiasBroadcast(Vec<usize>),
    Reshape(Vec<usize>),
    Conv {
        pad: usize,
    },
    ConvInputGrad {
        pad: usize,
        in_hw: (usize, usize),
    },
    ConvWeightGrad {
        pad: usize,
        k: usize,
    },
    PoolGather,
    PoolScatter,
    SoftmaxXent(Rc<[usize]>),
    SoftmaxXentGrad(Rc<[usize]>),
    /// second-order rule of the fused cross-entropy; not differentiable again
    SoftmaxXentHvp,
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Scale(_) => "scale",
            Op::MulScalar => "mul_scalar",
            Op::Dot => "dot",
            Op::Sum => "sum",
            Op::Expand(_) => "expand",
            Op::Norm => "norm",
            Op::Recip => "recip",
            Op::Sqrt => "sqrt",
            Op::Relu => "relu",
            Op::ReluMask => "relu_mask",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::BiasAdd => "bias_add",
            Op::BiasReduce => "bias_reduce",
            Op::BiasBroadcast(_) => "bias_broadcast",
            Op::Reshape(_) => "reshape",
            Op::Conv { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv_input_grad",
            Op::ConvWeightGrad { .. } => "conv_weight_grad",
            Op::PoolGather => "maxpool2",
            Op::PoolScatter => "pool_scatter",
            Op::SoftmaxXent(_) => "softmax_xent",
            Op::SoftmaxXentGrad(_) => "softmax_xent_grad",
            Op::SoftmaxXentHvp => "softmax_xent_hvp",
        }
    }
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    parents: Vec<usize>,
    requires_grad: bool,
    /// set on nodes produced by a recorded backward pass
    from_backward: bool,
}

/// Recording of a differentiable computation.
pub struct Graph<S> {
    nodes: RefCell<Vec<Node<S>>>,
    recording: bool,
    /// true while a non-recorded backward pass runs
    suspended: Cell<bool>,
    in_backward: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    /// A graph that records parents so it can be differentiated.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            suspended: Cell::new(false),
            in_backward: Cell::new(false),
        }
    }

    /// Evaluation-only graph; `backward` on it fails with [`Error::NotRecorded`].
    pub fn inference() -> Self {
        Graph {
            recording: false,
            ..Graph::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording && !self.suspended.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input (parameter or data).
    pub fn input(&self, value: Tensor<S>) -> Var<'_, S> {
        let requires_grad = self.is_recording();
        self.push(Rc::new(value), Op::Leaf, Vec::new(), requires_grad)
    }

    /// Input that is never differentiated.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(Rc::new(value), Op::Leaf, Vec::new(), false)
    }

    fn push(&self, value: Rc<Tensor<S>>, op: Op<S>, parents: Vec<usize>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
            from_backward: self.in_backward.get() && requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Validates a freshly computed value and appends it as a node.
    fn apply(&self, op: Op<S>, parents: &[usize], value: Tensor<S>) -> Result<Var<'_, S>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        if !self.is_recording() {
            return Ok(self.push(Rc::new(value), op, Vec::new(), false));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let parents = if requires_grad { parents.to_vec() } else { Vec::new() };
        Ok(self.push(Rc::new(value), op, parents, requires_grad))
    }

    fn unary(&self, op: Op<S>, a: usize) -> Result<Var<'_, S>> {
        let av = self.value_of(a);
        let value = match &op {
            Op::Scale(c) => av.scale(*c),
            Op::Sum => Tensor::scalar(av.sum()),
            Op::Expand(shape) => {
                if !av.is_scalar() {
                    return Err(Error::ShapeMismatch {
                        op: "expand",
                        left: av.shape().to_vec(),
                        right: shape.clone(),
                    });
                }
                Tensor::full(shape, av.item())
            }
            Op::Norm => Tensor::scalar(av.norm()),
            Op::Recip => {
                if !av.is_scalar() {
                    return Err(Error::NotScalar(av.shape().to_vec()));
                }
                Tensor::scalar(S::one() / av.item())
            }
            Op::Sqrt => {
                if !av.is_scalar() {
                    return Err(Error::NotScalar(av.shape().to_vec()));
                }
                Tensor::scalar(av.item().sqrt())
            }
            Op::Relu => av.map(|v| if v > S::zero() { v } else { S::zero() }),
            Op::Transpose => kernels::transpose(&av)?,
            Op::BiasReduce => kernels::bias_reduce(&av)?,
            Op::BiasBroadcast(shape) => kernels::bias_broadcast(&av, shape)?,
            Op::Reshape(shape) => av.reshape(shape)?,
            Op::SoftmaxXent(labels) => kernels::softmax_xent(&av, labels)?,
            _ => unreachable!("{} is not unary", op.name()),
        };
        self.apply(op, &[a], value)
    }

    fn binary(&self, op: Op<S>, a: usize, b: usize) -> Result<Var<'_, S>> {
        let (av, bv) = (self.value_of(a), self.value_of(b));
        let value = match &op {
            Op::Add => av.add(&bv)?,
            Op::Sub => av.sub(&bv)?,
            Op::MulScalar => {
                if !bv.is_scalar() {
                    return Err(Error::ShapeMismatch {
                        op: "mul_scalar",
                        left: av.shape().to_vec(),
                        right: bv.shape().to_vec(),
                    });
                }
                av.scale(bv.item())
            }
            Op::Dot => Tensor::scalar(av.dot(&bv)?),
            Op::ReluMask => av.zip_map(&bv, "relu_mask", |g, x| if x > S::zero() { g } else { S::zero() })?,
            Op::MatMul => kernels::matmul(&av, &bv)?,
            Op::BiasAdd => kernels::bias_add(&av, &bv)?,
            Op::Conv { pad } => kernels::conv2d(&av, &bv, *pad)?,
            Op::ConvInputGrad { pad, in_hw } => kernels::conv_input_grad(&av, &bv, *pad, *in_hw)?,
            Op::ConvWeightGrad { pad, k } => kernels::conv_weight_grad(&av, &bv, *pad, *k)?,
            Op::PoolGather => kernels::pool_gather(&av, &bv)?,
            Op::PoolScatter => kernels::pool_scatter(&av, &bv)?,
            Op::SoftmaxXentGrad(labels) => {
                if !bv.is_scalar() {
                    return Err(Error::NotScalar(bv.shape().to_vec()));
                }
                kernels::softmax_xent_grad(&av, bv.item(), labels)?
            }
            _ => unreachable!("{} is not binary", op.name()),
        };
        self.apply(op, &[a, b], value)
    }

    fn softmax_xent_hvp(&self, z: usize, u: usize, g: usize) -> Result<Var<'_, S>> {
        let (zv, uv, gv) = (self.value_of(z), self.value_of(u), self.value_of(g));
        let value = kernels::softmax_xent_hvp(&zv, &uv, gv.item())?;
        self.apply(Op::SoftmaxXentHvp, &[z, u, g], value)
    }

    /// Gradients of the scalar `root` with respect to each of `wrt`.
    ///
    /// With `create_graph` the derivative computation is itself recorded and
    /// the returned vars can be differentiated again; otherwise they are
    /// constants. Inputs that `root` does not depend on get zeros.
    pub fn backward<'g>(&'g self, root: Var<'g, S>, wrt: &[Var<'g, S>], create_graph: bool) -> Result<Vec<Var<'g, S>>> {
        if !self.recording {
            return Err(Error::NotRecorded);
        }
        let root_value = self.value_of(root.id);
        if !root_value.is_scalar() {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let depends = {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if !nodes[w.id].requires_grad {
                    return Err(Error::NotAnInput(w.id));
                }
            }
            let mut depends = vec![false; root.id + 1];
            for w in wrt {
                if w.id <= root.id {
                    depends[w.id] = true;
                }
            }
            for id in 0..=root.id {
                if !depends[id] && nodes[id].parents.iter().any(|&p| depends[p]) {
                    depends[id] = true;
                }
            }
            depends
        };

        self.suspended.set(!create_graph);
        self.in_backward.set(create_graph);
        let result = self.backward_inner(root, &depends);
        self.suspended.set(false);
        self.in_backward.set(false);
        let grads = result?;

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(id) => Var { graph: self, id },
                None => self.constant(Tensor::zeros(self.value_of(w.id).shape())),
            })
            .collect())
    }

    fn backward_inner(&self, root: Var<'_, S>, depends: &[bool]) -> Result<Vec<Option<usize>>> {
        let mut grads: Vec<Option<usize>> = vec![None; root.id + 1];
        if !depends[root.id] {
            return Ok(grads);
        }
        let seed = self.constant(Tensor::full(self.value_of(root.id).shape(), S::one()));
        grads[root.id] = Some(seed.id);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, parents) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].parents.clone())
            };
            if parents.is_empty() {
                continue;
            }
            let contributions = self.rule(&op, id, &parents, g, depends)?;
            for (p, c) in parents.into_iter().zip(contributions) {
                let Some(c) = c else { continue };
                if !depends[p] {
                    continue;
                }
                grads[p] = Some(match grads[p] {
                    Some(prev) => self.binary(Op::Add, prev, c.id)?.id,
                    None => c.id,
                });
            }
        }
        Ok(grads)
    }

    /// Local derivative rule: upstream `g` for node `id` mapped onto its parents.
    fn rule(
        &self,
        op: &Op<S>,
        id: usize,
        parents: &[usize],
        g: usize,
        depends: &[bool],
    ) -> Result<Vec<Option<Var<'_, S>>>> {
        let v = |i: usize| Var { graph: self, id: i };
        let need = |k: usize| depends[parents[k]];
        let gv = v(g);
        let out = match op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![Some(gv), Some(gv)],
            Op::Sub => vec![Some(gv), if need(1) { Some(gv.scale(-S::one())?) } else { None }],
            Op::Scale(c) => vec![Some(gv.scale(*c)?)],
            Op::MulScalar => {
                let (a, s) = (v(parents[0]), v(parents[1]));
                vec![
                    if need(0) { Some(gv.mul_scalar(s)?) } else { None },
                    if need(1) { Some(gv.dot(a)?) } else { None },
                ]
            }
            Op::Dot => {
                let (a, b) = (v(parents[0]), v(parents[1]));
                vec![
                    if need(0) { Some(b.mul_scalar(gv)?) } else { None },
                    if need(1) { Some(a.mul_scalar(gv)?) } else { None },
                ]
            }
            Op::Sum => vec![Some(gv.expand(self.value_of(parents[0]).shape())?)],
            Op::Expand(_) => vec![Some(gv.sum()?)],
            Op::Norm => {
                if self.value_of(id).item() == S::zero() {
                    vec![None]
                } else {
                    // d||a|| = a / ||a||
                    let inv = v(id).recip()?;
                    vec![Some(v(parents[0]).mul_scalar(gv.mul_scalar(inv)?)?)]
                }
            }
            Op::Recip => {
                let r = v(id);
                vec![Some(gv.mul_scalar(r)?.mul_scalar(r)?.scale(-S::one())?)]
            }
            Op::Sqrt => {
                if self.value_of(id).item() == S::zero() {
                    vec![None]
                } else {
                    let half = S::from_f64_lossy(0.5);
                    vec![Some(gv.mul_scalar(v(id).recip()?)?.scale(half)?)]
                }
            }
            Op::Relu => vec![Some(gv.relu_mask(v(parents[0]))?)],
            Op::ReluMask => vec![Some(gv.relu_mask(v(parents[1]))?), None],
            Op::MatMul => {
                let (a, b) = (v(parents[0]), v(parents[1]));
                vec![
                    if need(0) {
                        Some(gv.matmul(b.transpose()?)?)
                    } else {
                        None
                    },
                    if need(1) {
                        Some(a.transpose()?.matmul(gv)?)
                    } else {
                        None
                    },
                ]
            }
            Op::Transpose => vec![Some(gv.transpose()?)],
            Op::BiasAdd => vec![Some(gv), if need(1) { Some(gv.bias_reduce()?) } else { None }],
            Op::BiasReduce => vec![Some(gv.bias_broadcast(self.value_of(parents[0]).shape())?)],
            Op::BiasBroadcast(_) => vec![Some(gv.bias_reduce()?)],
            Op::Reshape(_) => vec![Some(gv.reshape(self.value_of(parents[0]).shape())?)],
            Op::Conv { pad } => {
                let (x, w) = (v(parents[0]), v(parents[1]));
                let xs = self.value_of(parents[0]).shape().to_vec();
                let k = self.value_of(parents[1]).shape()[2];
                vec![
                    if need(0) {
                        Some(gv.conv_input_grad(w, *pad, (xs[2], xs[3]))?)
                    } else {
                        None
                    },
                    if need(1) {
                        Some(gv.conv_weight_grad(x, *pad, k)?)
                    } else {
                        None
                    },
                ]
            }
            Op::ConvInputGrad { pad, .. } => {
                // node = A(G, W); <H, A(G, W)> = <G, conv(H, W)>
                let (gin, w) = (v(parents[0]), v(parents[1]));
                let k = self.value_of(parents[1]).shape()[2];
                vec![
                    if need(0) { Some(gv.conv2d(w, *pad)?) } else { None },
                    if need(1) {
                        Some(gin.conv_weight_grad(gv, *pad, k)?)
                    } else {
                        None
                    },
                ]
            }
            Op::ConvWeightGrad { pad, .. } => {
                // node = B(G, X); <H, B(G, X)> = <G, conv(X, H)>
                let (gin, x) = (v(parents[0]), v(parents[1]));
                let xs = self.value_of(parents[1]).shape().to_vec();
                vec![
                    if need(0) { Some(x.conv2d(gv, *pad)?) } else { None },
                    if need(1) {
                        Some(gin.conv_input_grad(gv, *pad, (xs[2], xs[3]))?)
                    } else {
                        None
                    },
                ]
            }
            // argmax positions are piecewise constant in the source
            Op::PoolGather => vec![Some(gv.pool_scatter(v(parents[1]))?), None],
            Op::PoolScatter => vec![Some(gv.pool_gather(v(parents[1]))?), None],
            Op::SoftmaxXent(labels) => {
                vec![Some(
                    v(parents[0]).softmax_xent_grad(gv.reshape(&[])?, Rc::clone(labels))?,
                )]
            }
            Op::SoftmaxXentGrad(labels) => {
                let (z, s) = (v(parents[0]), v(parents[1]));
                vec![
                    if need(0) {
                        Some(self.softmax_xent_hvp(z.id, g, s.id)?)
                    } else {
                        None
                    },
                    if need(1) {
                        let one = self.constant(Tensor::scalar(S::one()));
                        Some(gv.dot(z.softmax_xent_grad(one, Rc::clone(labels))?)?)
                    } else {
                        None
                    },
                ]
            }
            Op::SoftmaxXentHvp => {
                return Err(Error::Unsupported(
                    "third-order derivative through softmax cross-entropy".into(),
                ))
            }
        };
        Ok(out)
    }

    /// Fails with [`Error::FirstPassNotRecorded`] unless `root` depends on
    /// the output of a recorded backward pass.
    pub fn grad_of_grad<'g>(&'g self, root: Var<'g, S>, wrt: Var<'g, S>) -> Result<Tensor<S>> {
        let reaches = {
            let nodes = self.nodes.borrow();
            let mut seen = vec![false; root.id + 1];
            let mut stack = vec![root.id];
            let mut found = false;
            while let Some(id) = stack.pop() {
                if seen[id] {
                    continue;
                }
                seen[id] = true;
                if nodes[id].from_backward {
                    found = true;
                    break;
                }
                stack.extend(nodes[id].parents.iter().copied());
            }
            found
        };
        if !reaches {
            return Err(Error::FirstPassNotRecorded);
        }
        let g = self.backward(root, &[wrt], false)?;
        Ok(g[0].value())
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    /// Snapshot of the node value.
    pub fn value(&self) -> Tensor<S> {
        (*self.graph.value_of(self.id)).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_of(self.id).shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> S {
        self.graph.value_of(self.id).item()
    }

    pub fn add(self, other: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::Add, self.id, other.id)
    }

    pub fn sub(self, other: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::Sub, self.id, other.id)
    }

    pub fn scale(self, c: S) -> Result<Self> {
        self.graph.unary(Op::Scale(c), self.id)
    }

    pub fn mul_scalar(self, s: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::MulScalar, self.id, s.id)
    }

    pub fn dot(self, other: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::Dot, self.id, other.id)
    }

    pub fn sum(self) -> Result<Self> {
        self.graph.unary(Op::Sum, self.id)
    }

    pub fn expand(self, shape: &[usize]) -> Result<Self> {
        self.graph.unary(Op::Expand(shape.to_vec()), self.id)
    }

    /// Euclidean norm over all entries.
    pub fn norm(self) -> Result<Self> {
        self.graph.unary(Op::Norm, self.id)
    }

    /// Reciprocal of a one-element node.
    pub fn recip(self) -> Result<Self> {
        self.graph.unary(Op::Recip, self.id)
    }

    /// Square root of a scalar.
    pub fn sqrt(self) -> Result<Self> {
        self.graph.unary(Op::Sqrt, self.id)
    }

    pub fn relu(self) -> Result<Self> {
        self.graph.unary(Op::Relu, self.id)
    }

    fn relu_mask(self, x: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::ReluMask, self.id, x.id)
    }

    pub fn matmul(self, other: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::MatMul, self.id, other.id)
    }

    pub fn transpose(self) -> Result<Self> {
        self.graph.unary(Op::Transpose, self.id)
    }

    /// Adds a bias vector along axis 1.
    pub fn bias_add(self, bias: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::BiasAdd, self.id, bias.id)
    }

    fn bias_reduce(self) -> Result<Self> {
        self.graph.unary(Op::BiasReduce, self.id)
    }

    fn bias_broadcast(self, shape: &[usize]) -> Result<Self> {
        self.graph.unary(Op::BiasBroadcast(shape.to_vec()), self.id)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != numel(&self.shape()) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape(),
                right: shape.to_vec(),
            });
        }
        self.graph.unary(Op::Reshape(shape.to_vec()), self.id)
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(self) -> Result<Self> {
        let s = self.shape();
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest])
    }

    /// Stride-1 2-D convolution of `[N, C, H, W]` by `[O, C, k, k]` with zero padding.
    pub fn conv2d(self, kernel: Var<'g, S>, pad: usize) -> Result<Self> {
        self.graph.binary(Op::Conv { pad }, self.id, kernel.id)
    }

    fn conv_input_grad(self, kernel: Var<'g, S>, pad: usize, in_hw: (usize, usize)) -> Result<Self> {
        self.graph.binary(Op::ConvInputGrad { pad, in_hw }, self.id, kernel.id)
    }

    fn conv_weight_grad(self, x: Var<'g, S>, pad: usize, k: usize) -> Result<Self> {
        self.graph.binary(Op::ConvWeightGrad { pad, k }, self.id, x.id)
    }

    /// 2x2 max-pool with stride 2.
    pub fn maxpool2(self) -> Result<Self> {
        self.graph.binary(Op::PoolGather, self.id, self.id)
    }

    fn pool_gather(self, src: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::PoolGather, self.id, src.id)
    }

    fn pool_scatter(self, src: Var<'g, S>) -> Result<Self> {
        self.graph.binary(Op::PoolScatter, self.id, src.id)
    }

    /// Summed softmax cross-entropy of `[N, M]` logits against `labels`.
    pub fn softmax_xent(self, labels: &[usize]) -> Result<Self> {
        self.graph.unary(Op::SoftmaxXent(labels.into()), self.id)
    }

    fn softmax_xent_grad(self, upstream: Var<'g, S>, labels: Rc<[usize]>) -> Result<Self> {
        self.graph.binary(Op::SoftmaxXentGrad(labels), self.id, upstream.id)
    }
}
