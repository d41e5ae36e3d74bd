use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::scalar::{gemm, Mat, Scalar};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`]. Ids increase in creation order, which is
/// a topological order of the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Broadcast pattern accepted by [`Graph::hadamard`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Operands have identical shapes.
    Elementwise,
    /// `N x 1 x S` map replicated over every channel of `N x C x S`.
    ChannelMap,
    /// `N x C` vector replicated over the spatial extent of `N x C x S`.
    SpatialVector,
}

/// Backward rule for an operator defined outside the engine.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &str;

    /// Gradient for each input given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ChannelStat<T> {
    pub argmin: usize,
    pub argmax: usize,
    pub min: T,
    pub range: T,
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Var,
    },
    Depthwise {
        x: Var,
        w: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Hadamard {
        a: Var,
        b: Var,
        pattern: Broadcast,
    },
    Upsample2x {
        x: Var,
    },
    SpatialSoftmax {
        x: Var,
    },
    SoftArgmax {
        x: Var,
    },
    FusedMask {
        parts: Vec<Var>,
        /// Per output pixel: (part, channel) of the winning rescaled map, or
        /// `None` when every channel was degenerate.
        winners: Vec<Option<(u32, u32)>>,
        /// Per part, per (sample, channel).
        stats: Vec<Vec<ChannelStat<T>>>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn tag(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv1x1 { .. } => "conv1x1",
            Op::Depthwise { .. } => "depthwise",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Dense { .. } => "dense",
            Op::Concat { .. } => "concat_channels",
            Op::Hadamard { .. } => "hadamard",
            Op::Upsample2x { .. } => "bilinear_upsample2x",
            Op::SpatialSoftmax { .. } => "spatial_softmax",
            Op::SoftArgmax { .. } => "soft_argmax",
            Op::FusedMask { .. } => "fused_mask",
            Op::L1 { .. } => "l1_loss",
            Op::Add { .. } => "add",
            Op::Affine { .. } => "affine",
            Op::Sum { .. } => "sum",
            Op::Reshape { .. } => "reshape",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Recording of one forward pass. Build it, call [`Graph::backward`] on a
/// scalar, then drop it.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    bindings: HashMap<ParamId, Var>,
    param_leaves: Vec<(Var, ParamId)>,
    unshared: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bindings: HashMap::new(),
            param_leaves: Vec::new(),
            unshared: false,
        }
    }

    /// A graph where every [`Graph::param`] call creates a fresh leaf instead
    /// of reusing the existing binding. Used to compare shared-weight
    /// gradients against an unrolled copy of each use.
    pub fn unshared() -> Self {
        Graph {
            unshared: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not receive gradients (images, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf that receives gradients.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Bind a stored parameter. Repeated calls return the same leaf so every
    /// use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if !self.unshared {
            if let Some(&v) = self.bindings.get(&id) {
                return v;
            }
        }
        let v = self.input(store.get(id).tensor.clone());
        self.bindings.insert(id, v);
        self.param_leaves.push((v, id));
        v
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    /// Leaves created for parameter `id` (more than one only in unshared mode).
    pub fn aliases(&self, id: ParamId) -> Vec<Var> {
        self.param_leaves
            .iter()
            .filter(|(_, p)| *p == id)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Copy of `x` cut out of the differentiation graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.tag()
    }

    pub(crate) fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Conv1x1 { x, w, b } | Op::Dense { x, w, b } => {
                vec![*x, *w, *b]
            }
            Op::Depthwise { x, w } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Upsample2x { x }
            | Op::SpatialSoftmax { x }
            | Op::SoftArgmax { x }
            | Op::Affine { x, .. }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::SliceChannels { x, .. } => vec![*x],
            Op::Concat { parts } | Op::FusedMask { parts, .. } => parts.clone(),
            Op::Hadamard { a, b, .. } | Op::Add { a, b } => vec![*a, *b],
            Op::L1 { pred, target } => vec![*pred, *target],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    // ---- simple operators -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// `scale * x + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| scale * *e + shift).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(out, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Sum of several scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Channels `start..start+len` of an `N x C x ...` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if shape.len() < 2 || start + len > shape[1] || len == 0 {
            return shape_err(
                "slice_channels",
                format!("channels {start}..{} of {shape:?}", start + len),
            );
        }
        let (n, c, s) = (shape[0], shape[1], v.spatial());
        let mut data = Vec::with_capacity(n * len * s);
        for i in 0..n {
            let base = (i * c + start) * s;
            data.extend_from_slice(&v.data()[base..base + len * s]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[1] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::SliceChannels { x, start },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| e.max(T::zero())).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| sigmoid(*e)).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(out, Op::Sigmoid { x })
    }

    /// Fully connected layer: `x [N, in]`, `w [out, in]`, `b [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return shape_err(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            );
        }
        let (n, inp, out) = (xs[0], xs[1], ws[0]);
        let mut data = vec![T::zero(); n * out];
        for row in data.chunks_mut(out) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            Mat::new(self.value(x).data(), n, inp),
            Mat::new(self.value(w).data(), out, inp).t(),
            T::one(),
            &mut data,
        );
        Ok(self.push(Tensor::from_parts(vec![n, out], data), Op::Dense { x, w, b }))
    }

    /// Concatenate `N x C_i x S` tensors along channels.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let ref_shape = self.shape(*first).to_vec();
        if ref_shape.len() < 2 {
            return shape_err("concat_channels", format!("rank of {ref_shape:?}"));
        }
        let mut channels = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != ref_shape.len() || s[0] != ref_shape[0] || s[2..] != ref_shape[2..] {
                return shape_err(
                    "concat_channels",
                    format!("{s:?} does not match {ref_shape:?} outside the channel axis"),
                );
            }
            channels += s[1];
        }
        let n = ref_shape[0];
        let spatial: usize = ref_shape[2..].iter().product();
        let mut data = Vec::with_capacity(n * channels * spatial);
        for i in 0..n {
            for p in parts {
                let v = self.value(*p);
                let block = v.shape()[1] * spatial;
                data.extend_from_slice(&v.data()[i * block..(i + 1) * block]);
            }
        }
        let mut shape = ref_shape;
        shape[1] = channels;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Product of `a` with `b`, where `b` has the shape of `a`, is a
    /// single-channel map, or is a per-channel vector.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let pattern = if sa == sb {
            Broadcast::Elementwise
        } else if sa.len() >= 3 && sb.len() == sa.len() && sb[0] == sa[0] && sb[1] == 1 && sb[2..] == sa[2..] {
            Broadcast::ChannelMap
        } else if sa.len() >= 3 && sb.len() == 2 && sb[0] == sa[0] && sb[1] == sa[1] {
            Broadcast::SpatialVector
        } else {
            return shape_err(
                "hadamard",
                format!("{sb:?} broadcasts against {sa:?} in neither channel nor spatial pattern"),
            );
        };
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<T> = match pattern {
            Broadcast::Elementwise => va.iter().zip(vb).map(|(x, y)| *x * *y).collect(),
            Broadcast::ChannelMap => {
                let (c, s) = (sa[1], sa[2..].iter().product::<usize>());
                let mut out = Vec::with_capacity(va.len());
                for i in 0..sa[0] {
                    let m = &vb[i * s..(i + 1) * s];
                    for ch in 0..c {
                        let base = (i * c + ch) * s;
                        out.extend(va[base..base + s].iter().zip(m).map(|(x, y)| *x * *y));
                    }
                }
                out
            }
            Broadcast::SpatialVector => {
                let s: usize = sa[2..].iter().product();
                va.chunks(s)
                    .zip(vb)
                    .flat_map(|(chunk, f)| chunk.iter().map(move |x| *x * *f))
                    .collect()
            }
        };
        Ok(self.push(Tensor::from_parts(sa, data), Op::Hadamard { a, b, pattern }))
    }

    /// Sum of absolute differences. The subgradient at a tie is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return shape_err(
                "l1_loss",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            );
        }
        let s = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (*p - *t).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::L1 { pred, target }))
    }

    /// Register an operator whose backward rule lives outside the engine.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse-mode sweep from a single-valued root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must hold a single value, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        let mut leaves: HashMap<usize, Vec<T>> = HashMap::new();
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
                continue;
            }
            let mut acc = GradAcc {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            self.backward_node(id, &g, &mut acc);
        }
        let mut params: HashMap<ParamId, Vec<T>> = HashMap::new();
        for (v, pid) in &self.param_leaves {
            if let Some(g) = leaves.get(&v.0) {
                match params.get_mut(pid) {
                    Some(total) => add_into(total, g),
                    None => {
                        params.insert(*pid, g.clone());
                    }
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn backward_node(&self, id: usize, g: &[T], acc: &mut GradAcc<'_, T>) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => super::conv::conv2d_backward(self, *x, *w, *b, *stride, *pad, g, acc),
            Op::Conv1x1 { x, w, b } => super::conv::conv1x1_backward(self, *x, *w, *b, g, acc),
            Op::Depthwise { x, w } => super::conv::depthwise_backward(self, *x, *w, g, acc),
            Op::Upsample2x { x } => super::conv::upsample_backward(self, *x, g, acc),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => super::norm::batch_norm_backward(
                self, *x, *gamma, *beta, xhat, inv_std, *train, g, acc,
            ),
            Op::SpatialSoftmax { x } => {
                super::attention::softmax_backward(self, *x, &node.value, g, acc)
            }
            Op::SoftArgmax { x } => super::attention::soft_argmax_backward(self, *x, g, acc),
            Op::FusedMask {
                parts,
                winners,
                stats,
            } => super::attention::fused_mask_backward(self, parts, winners, stats, g, acc),
            Op::Relu { x } => {
                if let Some(dx) = acc.slot(*x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(self.value(*x).data()) {
                        if *xi > T::zero() {
                            *d += *gi;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(dx) = acc.slot(*x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(node.value.data()) {
                        *d += *gi * *y * (T::one() - *y);
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let (n, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[0];
                if let Some(dx) = acc.slot(*x) {
                    gemm(
                        Mat::new(g, n, out),
                        Mat::new(self.value(*w).data(), out, inp),
                        T::one(),
                        dx,
                    );
                }
                if let Some(dw) = acc.slot(*w) {
                    gemm(
                        Mat::new(g, n, out).t(),
                        Mat::new(self.value(*x).data(), n, inp),
                        T::one(),
                        dw,
                    );
                }
                if let Some(db) = acc.slot(*b) {
                    for row in g.chunks(out) {
                        add_into(db, row);
                    }
                }
            }
            Op::Concat { parts } => {
                let n = node.value.shape()[0];
                let spatial = node.value.spatial();
                let mut offset = 0;
                let total = node.value.shape()[1] * spatial;
                for p in parts {
                    let block = self.shape(*p)[1] * spatial;
                    if let Some(dp) = acc.slot(*p) {
                        for i in 0..n {
                            let src = &g[i * total + offset..i * total + offset + block];
                            add_into(&mut dp[i * block..(i + 1) * block], src);
                        }
                    }
                    offset += block;
                }
            }
            Op::Hadamard { a, b, pattern } => {
                let sa = self.shape(*a).to_vec();
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                match pattern {
                    Broadcast::Elementwise => {
                        if let Some(da) = acc.slot(*a) {
                            for ((d, gi), y) in da.iter_mut().zip(g).zip(vb) {
                                *d += *gi * *y;
                            }
                        }
                        if let Some(db) = acc.slot(*b) {
                            for ((d, gi), x) in db.iter_mut().zip(g).zip(va) {
                                *d += *gi * *x;
                            }
                        }
                    }
                    Broadcast::ChannelMap => {
                        let (c, s) = (sa[1], sa[2..].iter().product::<usize>());
                        if let Some(da) = acc.slot(*a) {
                            for i in 0..sa[0] {
                                let m = &vb[i * s..(i + 1) * s];
                                for ch in 0..c {
                                    let base = (i * c + ch) * s;
                                    for p in 0..s {
                                        da[base + p] += g[base + p] * m[p];
                                    }
                                }
                            }
                        }
                        if let Some(db) = acc.slot(*b) {
                            for i in 0..sa[0] {
                                for ch in 0..c {
                                    let base = (i * c + ch) * s;
                                    for p in 0..s {
                                        db[i * s + p] += g[base + p] * va[base + p];
                                    }
                                }
                            }
                        }
                    }
                    Broadcast::SpatialVector => {
                        let s: usize = sa[2..].iter().product();
                        if let Some(da) = acc.slot(*a) {
                            for (k, f) in vb.iter().enumerate() {
                                for p in 0..s {
                                    da[k * s + p] += g[k * s + p] * *f;
                                }
                            }
                        }
                        if let Some(db) = acc.slot(*b) {
                            for (k, d) in db.iter_mut().enumerate() {
                                let mut t = T::zero();
                                for p in 0..s {
                                    t += g[k * s + p] * va[k * s + p];
                                }
                                *d += t;
                            }
                        }
                    }
                }
            }
            Op::L1 { pred, target } => {
                let pv = self.value(*pred).data();
                let tv = self.value(*target).data();
                let sign = |p: T, t: T| {
                    if p > t {
                        T::one()
                    } else if p < t {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                if let Some(dp) = acc.slot(*pred) {
                    for ((d, p), t) in dp.iter_mut().zip(pv).zip(tv) {
                        *d += g[0] * sign(*p, *t);
                    }
                }
                if let Some(dt) = acc.slot(*target) {
                    for ((d, p), t) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= g[0] * sign(*p, *t);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = acc.slot(*a) {
                    add_into(da, g);
                }
                if let Some(db) = acc.slot(*b) {
                    add_into(db, g);
                }
            }
            Op::Affine { x, scale } => {
                if let Some(dx) = acc.slot(*x) {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += *scale * *gi;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = acc.slot(*x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = acc.slot(*x) {
                    add_into(dx, g);
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.value(*x);
                let (n, c, s) = (xs.shape()[0], xs.shape()[1], xs.spatial());
                let len = node.value.shape()[1];
                if let Some(dx) = acc.slot(*x) {
                    for i in 0..n {
                        let dst = (i * c + start) * s;
                        add_into(&mut dx[dst..dst + len * s], &g[i * len * s..(i + 1) * len * s]);
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(dv) = acc.slot(*v) {
                        add_into(dv, &gi);
                    }
                }
            }
        }
    }
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradAcc<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> GradAcc<'_, T> {
    /// Mutable gradient buffer of `v`, or `None` if `v` needs no gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

/// Result of [`Graph::backward`]: gradients of leaves and parameters.
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
    params: HashMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if the leaf was not reached.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v.0).map(|g| g.as_slice())
    }

    /// Gradient of a parameter summed over all of its aliases.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(|g| g.as_slice())
    }

    pub fn params(&self) -> &HashMap<ParamId, Vec<T>> {
        &self.params
    }
}

#[inline]
pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
