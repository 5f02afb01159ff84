//! Define-by-run tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every parent index is smaller
//! than its child's and a single reverse sweep visits each record once.

use super::array::Tensor;
use super::kernels::{self, PlaneGeom, VolumeGeom};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddChannel(Var, Var),
    MulPixel(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Matmul { a: Var, b: Var, p: usize, q: usize, r: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Conv2d { x: Var, k: Var, geom: PlaneGeom, ci: usize, co: usize },
    Deconv2d { x: Var, k: Var, geom: PlaneGeom, ci: usize, co: usize },
    Conv3d { x: Var, k: Var, geom: VolumeGeom, ci: usize, co: usize },
    Gap { x: Var, c: usize, hw: usize },
    ChannelMean { x: Var, c: usize },
    SoftmaxRows { x: Var, cols: usize },
    Concat(Vec<Var>),
    Reshape(Var),
    Upsample { x: Var, c: usize, h: usize, w: usize, oh: usize, ow: usize },
    Sum(Var),
    Mean(Var),
    Msm { logits: Var, target: Vec<T> },
    Bce { pred: Var, target: Vec<T> },
    Kl { pred: Var, target: Vec<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A single-threaded tape. Values are immutable once recorded.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive a gradient on
    /// [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf; `None` before the first backward.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} (element {i})")));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, data, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, data, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[c, ..] + b[c]`: a length-`C` vector broadcast over the channel axis.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if self.value(b).rank() != 1 || xs[0] != self.value(b).len() {
            return Err(Error::shape("add_channel", &xs, self.shape(b)));
        }
        let plane = self.value(x).len() / xs[0];
        let bias = self.data(b).to_vec();
        let data = self
            .data(x)
            .chunks(plane)
            .zip(&bias)
            .flat_map(|(row, &bv)| row.iter().map(move |&v| v + bv))
            .collect();
        self.push("add_channel", xs, data, Op::AddChannel(x, b), &[x, b])
    }

    /// `x[c, p] · m[p]`: one spatial map broadcast across all channels.
    pub fn mul_pixel(&mut self, x: Var, m: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let plane = self.value(m).len();
        if xs.len() < 2 || self.value(x).len() != xs[0] * plane || xs[1..].iter().product::<usize>() != plane {
            return Err(Error::shape("mul_pixel", &xs, self.shape(m)));
        }
        let mv = self.data(m).to_vec();
        let data = self
            .data(x)
            .chunks(plane)
            .flat_map(|row| row.iter().zip(&mv).map(|(&a, &b)| a * b).collect::<Vec<_>>())
            .collect();
        self.push("mul_pixel", xs, data, Op::MulPixel(x, m), &[x, m])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + s, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, T::sigmoid, Op::Sigmoid(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), p, q, r);
        self.push("matmul", vec![p, r], data, Op::Matmul { a, b, p, q, r }, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::invalid_shape("transpose", format!("rank-2 input required, got {s:?}")));
        }
        let data = kernels::transpose(self.data(x), s[0], s[1]);
        self.push("transpose", vec![s[1], s[0]], data, Op::Transpose { x, rows: s[0], cols: s[1] }, &[x])
    }

    /// `x`: `Ci×H×W`, `k`: `Co×Ci×kh×kw`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let geom = PlaneGeom::conv(xs[1], xs[2], ks[2], ks[3], stride, pad)
            .ok_or_else(|| Error::invalid_shape("conv2d", format!("non-positive output for {xs:?} with {ks:?}")))?;
        let (ci, co) = (xs[0], ks[0]);
        let data = kernels::conv2d_forward(self.data(x), self.data(k), ci, co, &geom);
        self.push("conv2d", vec![co, geom.oh, geom.ow], data, Op::Conv2d { x, k, geom, ci, co }, &[x, k])
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// kernel tensor: `x`: `Ci×H×W`, `k`: `Ci×Co×kh×kw`.
    pub fn deconv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[0] {
            return Err(Error::shape("deconv2d", &xs, &ks));
        }
        let geom = PlaneGeom::deconv(xs[1], xs[2], ks[2], ks[3], stride, pad)
            .ok_or_else(|| Error::invalid_shape("deconv2d", format!("non-positive output for {xs:?} with {ks:?}")))?;
        let (ci, co) = (xs[0], ks[1]);
        // As the adjoint: the conv's output channels are our inputs.
        let data = kernels::conv2d_backward_input(self.data(x), self.data(k), co, ci, &geom);
        self.push("deconv2d", vec![co, geom.h, geom.w], data, Op::Deconv2d { x, k, geom, ci, co }, &[x, k])
    }

    /// `x`: `Ci×T×H×W`, `k`: `Co×Ci×kt×kh×kw`. The temporal axis is unpadded
    /// with unit stride; stride and pad apply spatially.
    pub fn conv3d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 5 || xs[0] != ks[1] || ks[2] > xs[1] {
            return Err(Error::shape("conv3d", &xs, &ks));
        }
        let plane = PlaneGeom::conv(xs[2], xs[3], ks[3], ks[4], stride, pad)
            .ok_or_else(|| Error::invalid_shape("conv3d", format!("non-positive output for {xs:?} with {ks:?}")))?;
        let geom = VolumeGeom {
            plane,
            t: xs[1],
            kt: ks[2],
            ot: xs[1] - ks[2] + 1,
        };
        let (ci, co) = (xs[0], ks[0]);
        let data = kernels::conv3d_forward(self.data(x), self.data(k), ci, co, &geom);
        self.push(
            "conv3d",
            vec![co, geom.ot, plane.oh, plane.ow],
            data,
            Op::Conv3d { x, k, geom, ci, co },
            &[x, k],
        )
    }

    /// Global average pooling `C×H×W → C`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid_shape("gap", format!("rank-3 input required, got {s:?}")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        let n = T::of_usize(hw);
        let data = self.data(x).chunks(hw).map(|p| p.iter().copied().sum::<T>() / n).collect();
        self.push("gap", vec![c], data, Op::Gap { x, c, hw }, &[x])
    }

    /// Mean over the channel axis, `C×H×W → H×W` (or `C×P → P`).
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::invalid_shape("channel_mean", format!("rank ≥ 2 required, got {s:?}")));
        }
        let (c, hw) = (s[0], s[1..].iter().product::<usize>());
        let mut data = vec![T::zero(); hw];
        for plane in self.data(x).chunks(hw) {
            for (d, &v) in data.iter_mut().zip(plane) {
                *d += v;
            }
        }
        let n = T::of_usize(c);
        data.iter_mut().for_each(|d| *d /= n);
        self.push("channel_mean", s[1..].to_vec(), data, Op::ChannelMean { x, c }, &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::invalid_shape("softmax_rows", format!("rank-2 input required, got {s:?}")));
        }
        let cols = s[1];
        let mut data = Vec::with_capacity(self.value(x).len());
        for row in self.data(x).chunks(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: T = e.iter().copied().sum();
            data.extend(e.into_iter().map(|v| v / z));
        }
        self.push("softmax_rows", s, data, Op::SoftmaxRows { x, cols }, &[x])
    }

    /// Concatenation along axis 0; trailing dims must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        for &v in xs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            lead += s[0];
        }
        let mut data = Vec::new();
        for &v in xs {
            data.extend_from_slice(self.data(v));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push("concat", shape, data, Op::Concat(xs.to_vec()), xs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape(x), &[x])
    }

    /// Corner-aligned bilinear resize of `C×H×W` to `C×oh×ow`.
    pub fn upsample(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || oh == 0 || ow == 0 {
            return Err(Error::invalid_shape("upsample", format!("{s:?} to {oh}x{ow}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let data = kernels::upsample_forward(self.data(x), c, h, w, oh, ow);
        self.push("upsample", vec![c, oh, ow], data, Op::Upsample { x, c, h, w, oh, ow }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).sum();
        self.push("sum", vec![1], vec![v], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mean();
        self.push("mean", vec![1], vec![v], Op::Mean(x), &[x])
    }

    /// Multilabel soft-margin loss on raw logits against a 0/1 target vector,
    /// averaged over classes. Logs are floored at 1e-12.
    pub fn msm_loss(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        if self.value(logits).len() != target.len() {
            return Err(Error::shape("msm_loss", self.shape(logits), &[target.len()]));
        }
        let floor = T::of(LOG_FLOOR);
        let n = T::of_usize(target.len());
        let loss = self
            .data(logits)
            .iter()
            .zip(target)
            .map(|(&x, &y)| {
                let p = x.sigmoid();
                -(y * p.max(floor).ln() + (T::one() - y) * (T::one() - p).max(floor).ln())
            })
            .sum::<T>()
            / n;
        self.push(
            "msm_loss",
            vec![1],
            vec![loss],
            Op::Msm {
                logits,
                target: target.to_vec(),
            },
            &[logits],
        )
    }

    /// Pixel-mean binary cross-entropy of probabilities `pred` against `target`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(pred).len() != target.len() {
            return Err(Error::shape("bce_loss", self.shape(pred), target.shape()));
        }
        let floor = T::of(LOG_FLOOR);
        let n = T::of_usize(target.len());
        let loss = self
            .data(pred)
            .iter()
            .zip(target.data())
            .map(|(&p, &g)| -(g * p.max(floor).ln() + (T::one() - g) * (T::one() - p).max(floor).ln()))
            .sum::<T>()
            / n;
        self.push(
            "bce_loss",
            vec![1],
            vec![loss],
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        )
    }

    /// KL(ĝ‖p̂) between sum-normalized maps, `Σ ĝ ln((ĝ+ε)/(p̂+ε))`, ε = 1e-12.
    /// An all-zero target contributes zero.
    pub fn kl_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(pred).len() != target.len() {
            return Err(Error::shape("kl_loss", self.shape(pred), target.shape()));
        }
        let p = self.data(pred);
        let loss = kl_value(p, target.data())?;
        self.push(
            "kl_loss",
            vec![1],
            vec![loss],
            Op::Kl {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into leaves
    /// across repeated calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid_shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: Vec<T>| {
            if !needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => a.iter_mut().zip(&d).for_each(|(x, &y)| *x += y),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if needs(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                }
                if needs(*b) {
                    acc(*b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddChannel(x, b) => {
                acc(*x, g.to_vec());
                let c = self.value(*b).len();
                let plane = g.len() / c;
                acc(*b, g.chunks(plane).map(|p| p.iter().copied().sum()).collect());
            }
            Op::MulPixel(x, m) => {
                let mv = self.data(*m);
                let plane = mv.len();
                if needs(*x) {
                    let d = g
                        .chunks(plane)
                        .flat_map(|row| row.iter().zip(mv).map(|(&a, &b)| a * b).collect::<Vec<_>>())
                        .collect();
                    acc(*x, d);
                }
                if needs(*m) {
                    let mut d = vec![T::zero(); plane];
                    for (grow, xrow) in g.chunks(plane).zip(self.data(*x).chunks(plane)) {
                        for ((dv, &gv), &xv) in d.iter_mut().zip(grow).zip(xrow) {
                            *dv += gv * xv;
                        }
                    }
                    acc(*m, d);
                }
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::Relu(x) => {
                let xv = self.data(*x);
                acc(*x, g.iter().zip(xv).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, g.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)).collect());
            }
            Op::Matmul { a, b, p, q, r } => {
                if needs(*a) {
                    let bt = kernels::transpose(self.data(*b), *q, *r);
                    acc(*a, kernels::matmul(g, &bt, *p, *r, *q));
                }
                if needs(*b) {
                    let at = kernels::transpose(self.data(*a), *p, *q);
                    acc(*b, kernels::matmul(&at, g, *q, *p, *r));
                }
            }
            Op::Transpose { x, rows, cols } => acc(*x, kernels::transpose(g, *cols, *rows)),
            Op::Conv2d { x, k, geom, ci, co } => {
                if needs(*x) {
                    acc(*x, kernels::conv2d_backward_input(g, self.data(*k), *ci, *co, geom));
                }
                if needs(*k) {
                    acc(*k, kernels::conv2d_backward_kernel(g, self.data(*x), *ci, *co, geom));
                }
            }
            Op::Deconv2d { x, k, geom, ci, co } => {
                // Forward was conv-adjoint with conv (in=co, out=ci).
                if needs(*x) {
                    acc(*x, kernels::conv2d_forward(g, self.data(*k), *co, *ci, geom));
                }
                if needs(*k) {
                    acc(*k, kernels::conv2d_backward_kernel(self.data(*x), g, *co, *ci, geom));
                }
            }
            Op::Conv3d { x, k, geom, ci, co } => {
                let (gx, gk) = kernels::conv3d_backward(g, self.data(*x), self.data(*k), *ci, *co, geom, needs(*x));
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*k, gk);
            }
            Op::Gap { x, c, hw } => {
                let n = T::of_usize(*hw);
                let mut d = Vec::with_capacity(c * hw);
                for &gv in g {
                    d.extend(std::iter::repeat(gv / n).take(*hw));
                }
                acc(*x, d);
            }
            Op::ChannelMean { x, c } => {
                let n = T::of_usize(*c);
                let row: Vec<T> = g.iter().map(|&v| v / n).collect();
                acc(*x, row.iter().copied().cycle().take(row.len() * c).collect());
            }
            Op::SoftmaxRows { x, cols } => {
                let y = node.value.data();
                let mut d = Vec::with_capacity(y.len());
                for (grow, yrow) in g.chunks(*cols).zip(y.chunks(*cols)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    d.extend(grow.iter().zip(yrow).map(|(&a, &b)| b * (a - dot)));
                }
                acc(*x, d);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Upsample { x, c, h, w, oh, ow } => acc(*x, kernels::upsample_backward(g, *c, *h, *w, *oh, *ow)),
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0] / T::of_usize(n); n]);
            }
            Op::Msm { logits, target } => {
                let floor = T::of(LOG_FLOOR);
                let n = T::of_usize(target.len());
                let d = self
                    .data(*logits)
                    .iter()
                    .zip(target)
                    .map(|(&x, &y)| {
                        let p = x.sigmoid();
                        let mut dx = T::zero();
                        if p > floor {
                            dx -= y * (T::one() - p);
                        }
                        if T::one() - p > floor {
                            dx += (T::one() - y) * p;
                        }
                        g[0] * dx / n
                    })
                    .collect();
                acc(*logits, d);
            }
            Op::Bce { pred, target } => {
                let floor = T::of(LOG_FLOOR);
                let n = T::of_usize(target.len());
                let d = self
                    .data(*pred)
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let mut dp = T::zero();
                        if p > floor {
                            dp -= t / p;
                        }
                        if T::one() - p > floor {
                            dp += (T::one() - t) / (T::one() - p);
                        }
                        g[0] * dp / n
                    })
                    .collect();
                acc(*pred, d);
            }
            Op::Kl { pred, target } => acc(*pred, kl_grad(self.data(*pred), target).into_iter().map(|v| v * g[0]).collect()),
        }
    }
}

fn kl_value<T: Scalar>(p: &[T], g: &[T]) -> Result<T> {
    let eps = T::of(LOG_FLOOR);
    let gs: T = g.iter().copied().sum();
    if gs == T::zero() {
        return Ok(T::zero());
    }
    let ps: T = p.iter().copied().sum();
    if !(ps > T::zero()) {
        return Err(Error::Numeric("kl_loss: prediction has no positive mass".into()));
    }
    Ok(p
        .iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            let gh = gv / gs;
            if gh == T::zero() {
                T::zero()
            } else {
                gh * ((gh + eps) / (pv / ps + eps)).ln()
            }
        })
        .sum())
}

fn kl_grad<T: Scalar>(p: &[T], g: &[T]) -> Vec<T> {
    let eps = T::of(LOG_FLOOR);
    let gs: T = g.iter().copied().sum();
    if gs == T::zero() {
        return vec![T::zero(); p.len()];
    }
    let ps: T = p.iter().copied().sum();
    // dKL/dp̂_i = −ĝ_i/(p̂_i+ε); dp̂_i/dp_j = (δ_ij − p̂_i)/S
    let dh: Vec<T> = p.iter().zip(g).map(|(&pv, &gv)| -(gv / gs) / (pv / ps + eps)).collect();
    let cross: T = dh.iter().zip(p).map(|(&d, &pv)| d * pv / ps).sum();
    dh.iter().map(|&d| (d - cross) / ps).collect()
}
