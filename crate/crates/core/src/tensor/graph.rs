use super::kernels::{self, ConvGeom};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Scale(f64),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    /// ln(1 + eˣ), evaluated stably.
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    MatMul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        transpose: bool,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        frozen: bool,
    },
    Sum(Var),
    Mean(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    /// Rows `start..` of the leading axis.
    SliceBatch {
        x: Var,
        start: usize,
    },
    SquaredL2(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Unary(_, a) | Op::Sum(a) | Op::Mean(a) | Op::Reshape(a) => vec![*a],
            Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::SquaredL2(a, b) => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Conv { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::BatchNorm { x, scale, shift, .. } => vec![*x, *scale, *shift],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::SliceBatch { x, .. } => vec![*x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(..) => "unary",
            Op::Binary(..) => "binary",
            Op::MatMul(..) => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Conv { transpose: false, .. } => "conv2d",
            Op::Conv { transpose: true, .. } => "conv2d_transpose",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::SliceBatch { .. } => "slice_batch",
            Op::SquaredL2(..) => "squared_l2",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Per-channel statistics of one training-mode batch-norm evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Append-only record of a computation, differentiated in reverse insertion
/// order.
///
/// Leaves are either trainable ([`Graph::param`]) or constants
/// ([`Graph::constant`]); nodes that depend on no trainable leaf are skipped
/// during backward.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root w.r.t. every node that requires one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_shape(shape, g.clone()).expect("gradient shape"),
            None => {
                let n = shape.numel();
                Tensor::from_shape(shape, vec![0.0; n]).expect("gradient shape")
            }
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    /// Every node in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    /// Nodes that consume `v` directly.
    pub fn consumers(&self, v: Var) -> Vec<Var> {
        self.vars().filter(|&u| self.inputs(u).contains(&v)).collect()
    }

    /// Inputs the node consumed, in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Constant copy of `v`'s current value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        Ok(())
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let x = self.value(a);
        let f: fn(f64, f64) -> f64 = match op {
            UnaryOp::Neg => |v, _| -v,
            UnaryOp::Scale(_) => |v, c| v * c,
            UnaryOp::Relu => |v, _| if v > 0.0 { v } else { 0.0 },
            UnaryOp::LeakyRelu(_) => |v, s| if v > 0.0 { v } else { s * v },
            UnaryOp::Sigmoid => |v, _| sigmoid(v),
            UnaryOp::Tanh => |v, _| v.tanh(),
            UnaryOp::Softplus => |v, _| softplus(v),
        };
        let c = match op {
            UnaryOp::Scale(c) | UnaryOp::LeakyRelu(c) => c,
            _ => 0.0,
        };
        let out = x.map(|v| f(v, c));
        self.push(Op::Unary(op, a), out)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        };
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&u, &v)| match op {
                BinaryOp::Add => u + v,
                BinaryOp::Sub => u - v,
                BinaryOp::Mul => u * v,
            })
            .collect();
        let out = Tensor::from_shape(x.shape().clone(), data)?;
        Ok(self.push(Op::Binary(op, a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryOp::Scale(c), a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).clone(), self.shape(b).clone());
        if sa.rank() != 2 || sb.rank() != 2 || sa.dim(1) != sb.dim(0) {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa.dim(0), sa.dim(1), sb.dim(1));
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            false,
            false,
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            0.0,
            &mut out,
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Adds a per-feature (rank 2) or per-channel (rank 4) bias along axis 1.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).clone(), self.shape(bias).clone());
        if !(sx.rank() == 2 || sx.rank() == 4) || sb.rank() != 1 || sb.dim(0) != sx.dim(1) {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let channels = sx.dim(1);
        let spatial = sx.numel() / (sx.dim(0) * channels);
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b[(i / spatial) % channels];
        }
        Ok(self.push(Op::AddBias { x, bias }, out))
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize, transpose: bool) -> Result<ConvGeom> {
        let (sx, sw) = (self.shape(x).clone(), self.shape(w).clone());
        let op = if transpose { "conv2d_transpose" } else { "conv2d" };
        if sx.rank() != 4 || sw.rank() != 4 || sx.dim(1) != sw.dim(if transpose { 0 } else { 1 }) {
            return Err(Error::ShapeMismatch {
                op,
                left: sx,
                right: sw,
            });
        }
        let (h, wd) = (sx.dim(2), sx.dim(3));
        let (kh, kw) = (sw.dim(2), sw.dim(3));
        if transpose {
            let ho = ConvGeom::transpose_extent(h, kh, stride, pad);
            let wo = ConvGeom::transpose_extent(wd, kw, stride, pad);
            match (ho, wo) {
                // The equivalent forward conv maps the output back onto the input.
                (Some(ho), Some(wo)) => Ok(ConvGeom {
                    c_in: sw.dim(1),
                    h: ho,
                    w: wo,
                    c_out: sw.dim(0),
                    kh,
                    kw,
                    stride,
                    pad,
                    ho: h,
                    wo: wd,
                }),
                _ => Err(Error::Geometry(format!(
                    "{op}: input {h}×{wd}, kernel {kh}×{kw}, stride {stride}, pad {pad}"
                ))),
            }
        } else {
            let ho = ConvGeom::out_extent(h, kh, stride, pad);
            let wo = ConvGeom::out_extent(wd, kw, stride, pad);
            match (ho, wo) {
                (Some(ho), Some(wo)) => Ok(ConvGeom {
                    c_in: sx.dim(1),
                    h,
                    w: wd,
                    c_out: sw.dim(0),
                    kh,
                    kw,
                    stride,
                    pad,
                    ho,
                    wo,
                }),
                _ => Err(Error::Geometry(format!(
                    "{op}: non-integral output for input {h}×{wd}, kernel {kh}×{kw}, stride {stride}, pad {pad}"
                ))),
            }
        }
    }

    fn check_conv_bias(&self, bias: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb.rank() != 1 || sb.dim(0) != channels {
                return Err(Error::ShapeMismatch {
                    op,
                    left: Shape::new(&[channels])?,
                    right: sb.clone(),
                });
            }
        }
        Ok(())
    }

    /// Strided cross-correlation. `w` is `out_c × in_c × kh × kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom(x, w, stride, pad, false)?;
        self.check_conv_bias(bias, geom.c_out, "conv2d")?;
        let batch = self.shape(x).dim(0);
        let mut out = vec![0.0; batch * geom.out_len()];
        kernels::conv_forward(&geom, batch, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), geom.ho * geom.wo);
        }
        let out = Tensor::new(&[batch, geom.c_out, geom.ho, geom.wo], out)?;
        Ok(self.push(
            Op::Conv {
                x,
                w,
                bias,
                geom,
                transpose: false,
            },
            out,
        ))
    }

    /// Adjoint of [`Graph::conv2d`] with the same kernel: `w` is
    /// `in_c × out_c × kh × kw`, output extent `(H−1)·s − 2p + k`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom(x, w, stride, pad, true)?;
        self.check_conv_bias(bias, geom.c_in, "conv2d_transpose")?;
        let batch = self.shape(x).dim(0);
        let mut out = vec![0.0; batch * geom.in_len()];
        kernels::conv_backward_input(&geom, batch, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), geom.h * geom.w);
        }
        let out = Tensor::new(&[batch, geom.c_in, geom.h, geom.w], out)?;
        Ok(self.push(
            Op::Conv {
                x,
                w,
                bias,
                geom,
                transpose: true,
            },
            out,
        ))
    }

    /// Batch normalization over every axis except 1.
    ///
    /// With `running = None` the batch's own statistics are used and
    /// returned; otherwise the given statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: Option<&BatchStats>,
    ) -> Result<(Var, BatchStats)> {
        let sx = self.shape(x).clone();
        if !(sx.rank() == 2 || sx.rank() == 4) {
            return Err(Error::InvalidShape(format!("batch_norm input {sx}")));
        }
        let c = sx.dim(1);
        for p in [scale, shift] {
            if self.shape(p).dims() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    left: sx.clone(),
                    right: self.shape(p).clone(),
                });
            }
        }
        let spatial = sx.numel() / (sx.dim(0) * c);
        let count = (sx.numel() / c) as f64;
        let xs = self.value(x).data();
        let stats = match running {
            Some(s) => s.clone(),
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (k, plane) in xs.chunks(spatial).enumerate() {
                    let m = &mut mean[k % c];
                    plane.iter().for_each(|&v| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (k, plane) in xs.chunks(spatial).enumerate() {
                    let (m, s) = (mean[k % c], &mut var[k % c]);
                    plane.iter().for_each(|&v| *s += (v - m).powi(2));
                }
                var.iter_mut().for_each(|v| *v /= count);
                BatchStats { mean, var }
            }
        };
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (g, b) = (self.value(scale).data(), self.value(shift).data());
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (k, ((plane, xh), o)) in xs
            .chunks(spatial)
            .zip(xhat.chunks_mut(spatial))
            .zip(out.chunks_mut(spatial))
            .enumerate()
        {
            let ch = k % c;
            let (m, is, gc, bc) = (stats.mean[ch], inv_std[ch], g[ch], b[ch]);
            for ((&v, xh), o) in plane.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *xh = (v - m) * is;
                *o = gc * *xh + bc;
            }
        }
        let out = Tensor::from_shape(sx, out)?;
        let v = self.push(
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                frozen: running.is_some(),
            },
            out,
        );
        Ok((v, stats))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).clone(),
            None => return Err(Error::InvalidShape("concat of nothing".into())),
        };
        if axis >= first.rank() {
            return Err(Error::InvalidShape(format!("concat axis {axis} for {first}")));
        }
        let mut extent = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.rank() == first.rank()
                && s.dims()
                    .iter()
                    .zip(first.dims())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s.clone(),
                });
            }
            extent += s.dim(axis);
        }
        let outer: usize = first.dims()[..axis].iter().product();
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let mut dims = first.dims().to_vec();
        dims[axis] = extent;
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.dim_at(axis) * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(&dims, data)?;
        Ok(self.push(
            Op::Concat {
                inputs: xs.to_vec(),
                axis,
            },
            out,
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let shape = Shape::new(dims)?;
        if shape.numel() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: t.shape().clone(),
                right: shape,
            });
        }
        let out = Tensor::from_shape(shape, t.data().to_vec())?;
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_batch(start, end)?;
        Ok(self.push(Op::SliceBatch { x, start }, out))
    }

    /// Σᵢ (aᵢ − bᵢ)².
    pub fn squared_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("squared_l2", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::SquaredL2(a, b), Tensor::scalar(s)))
    }

    /// Batch-mean softmax cross-entropy of `b × K` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).clone();
        if s.rank() != 2 || s.dim(0) != labels.len() {
            return Err(Error::InvalidShape(format!(
                "cross-entropy logits {s} with {} labels",
                labels.len()
            )));
        }
        let (b, k) = (s.dim(0), s.dim(1));
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / denom;
            }
            loss += denom.ln() + max - row[labels[i]];
        }
        let out = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            out,
        ))
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if root_shape.numel() != 1 || root_shape.rank() != 0 {
            return Err(Error::NonScalarRoot(root_shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Accumulates `f(i)` into the gradient slot of `v`.
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                let x = val(*a);
                let y = node.value.data();
                let op = *op;
                acc(grads, *a, &|g| {
                    for i in 0..g.len() {
                        let d = match op {
                            UnaryOp::Neg => -1.0,
                            UnaryOp::Scale(c) => c,
                            UnaryOp::Relu => (x[i] > 0.0) as u8 as f64,
                            UnaryOp::LeakyRelu(s) => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    s
                                }
                            }
                            UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryOp::Tanh => 1.0 - y[i] * y[i],
                            UnaryOp::Softplus => sigmoid(x[i]),
                        };
                        g[i] += d * dy[i];
                    }
                });
            }
            Op::Binary(op, a, b) => {
                let (x, y) = (val(*a), val(*b));
                match op {
                    BinaryOp::Add => {
                        acc(grads, *a, &|g| add_into(g, dy));
                        acc(grads, *b, &|g| add_into(g, dy));
                    }
                    BinaryOp::Sub => {
                        acc(grads, *a, &|g| add_into(g, dy));
                        acc(grads, *b, &|g| g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d));
                    }
                    BinaryOp::Mul => {
                        acc(grads, *a, &|g| {
                            g.iter_mut().zip(dy).zip(y).for_each(|((g, d), v)| *g += d * v)
                        });
                        acc(grads, *b, &|g| {
                            g.iter_mut().zip(dy).zip(x).for_each(|((g, d), v)| *g += d * v)
                        });
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.dims(), self.nodes[b.0].value.dims());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (x, y) = (val(*a), val(*b));
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                acc(grads, *a, &|g| kernels::gemm(false, true, m, n, k, dy, y, 1.0, g));
                acc(grads, *b, &|g| kernels::gemm(true, false, k, m, n, x, dy, 1.0, g));
            }
            Op::AddBias { x, bias } => {
                let dims = node.value.dims();
                let channels = dims[1];
                let spatial = node.value.numel() / (dims[0] * channels);
                acc(grads, *x, &|g| add_into(g, dy));
                acc(grads, *bias, &|g| {
                    kernels::channel_sums(dims[0], channels, spatial, dy, g)
                });
            }
            Op::Conv {
                x,
                w,
                bias,
                geom,
                transpose,
            } => {
                let batch = node.value.dims()[0];
                let (xv, wv) = (val(*x), val(*w));
                if !transpose {
                    acc(grads, *x, &|g| kernels::conv_backward_input(geom, batch, dy, wv, g));
                    acc(grads, *w, &|g| kernels::conv_backward_kernel(geom, batch, xv, dy, g));
                    if let Some(b) = bias {
                        acc(grads, *b, &|g| {
                            kernels::channel_sums(batch, geom.c_out, geom.ho * geom.wo, dy, g)
                        });
                    }
                } else {
                    if wants(*x) {
                        let mut out = vec![0.0; batch * geom.out_len()];
                        kernels::conv_forward(geom, batch, dy, wv, &mut out);
                        acc(grads, *x, &|g| add_into(g, &out));
                    }
                    acc(grads, *w, &|g| kernels::conv_backward_kernel(geom, batch, dy, xv, g));
                    if let Some(b) = bias {
                        acc(grads, *b, &|g| {
                            kernels::channel_sums(batch, geom.c_in, geom.h * geom.w, dy, g)
                        });
                    }
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                frozen,
            } => {
                let dims = node.value.dims();
                let c = dims[1];
                let spatial = node.value.numel() / (dims[0] * c);
                let count = (node.value.numel() / c) as f64;
                let gamma = val(*scale);
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (k, (d, xh)) in dy.chunks(spatial).zip(xhat.chunks(spatial)).enumerate() {
                    let (s, sx) = (&mut sum_dy[k % c], &mut sum_dy_xhat[k % c]);
                    for (&d, &xh) in d.iter().zip(xh) {
                        *s += d;
                        *sx += d * xh;
                    }
                }
                acc(grads, *scale, &|g| add_into(g, &sum_dy_xhat));
                acc(grads, *shift, &|g| add_into(g, &sum_dy));
                acc(grads, *x, &|g| {
                    let planes = g.chunks_mut(spatial).zip(dy.chunks(spatial)).zip(xhat.chunks(spatial));
                    for (k, ((g, d), xh)) in planes.enumerate() {
                        let ch = k % c;
                        let scale = gamma[ch] * inv_std[ch];
                        for ((g, &d), &xh) in g.iter_mut().zip(d).zip(xh) {
                            *g += if *frozen {
                                scale * d
                            } else {
                                scale / count * (count * d - sum_dy[ch] - xh * sum_dy_xhat[ch])
                            };
                        }
                    }
                });
            }
            Op::Sum(a) => acc(grads, *a, &|g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                acc(grads, *a, &|g| g.iter_mut().for_each(|g| *g += dy[0] / n));
            }
            Op::Concat { inputs, axis } => {
                let dims = node.value.dims();
                let outer: usize = dims[..*axis].iter().product();
                let inner: usize = dims[axis + 1..].iter().product();
                let row = dims[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.nodes[v.0].value.dims()[*axis] * inner;
                    acc(grads, v, &|g| {
                        for o in 0..outer {
                            let src = &dy[o * row + offset..o * row + offset + chunk];
                            add_into(&mut g[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Reshape(a) => acc(grads, *a, &|g| add_into(g, dy)),
            Op::SliceBatch { x, start } => {
                let offset = start * node.value.numel() / node.value.dims()[0];
                acc(grads, *x, &|g| add_into(&mut g[offset..offset + dy.len()], dy));
            }
            Op::SquaredL2(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(grads, *a, &|g| {
                    for i in 0..g.len() {
                        g[i] += 2.0 * (x[i] - y[i]) * dy[0];
                    }
                });
                acc(grads, *b, &|g| {
                    for i in 0..g.len() {
                        g[i] -= 2.0 * (x[i] - y[i]) * dy[0];
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let b = labels.len() as f64;
                acc(grads, *logits, &|g| {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == l { 1.0 } else { 0.0 };
                            g[i * k + j] += (probs[i * k + j] - target) / b * dy[0];
                        }
                    }
                });
            }
        }
    }
}

impl Tensor {
    fn dim_at(&self, axis: usize) -> usize {
        self.dims()[axis]
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], spatial: usize) {
    let c = bias.len();
    for (i, chunk) in out.chunks_mut(spatial).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}
