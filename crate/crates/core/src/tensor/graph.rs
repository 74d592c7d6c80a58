use std::collections::HashMap;
use std::fmt;

use super::kernels::{self, ConvGeometry};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{DlgError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an op defined outside this module.
///
/// `backward` returns one optional gradient per input, each shaped like the
/// corresponding input. Entries for inputs that do not need a gradient may be
/// `None`.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Input,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: Scalar,
    },
    Resize(Var),
    ConcatChannels(Vec<Var>),
    SelectBatch {
        x: Var,
        index: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    MulChannelBroadcast {
        x: Var,
        a: Var,
    },
    SumBatch(Var),
    SumAll(Var),
    Bce {
        pred: Var,
        target: Tensor,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Wengert tape. Every op appends a node; [`Graph::backward`] walks the tape
/// in reverse. The tape is a DAG by construction, so recurrences are unrolled.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Lower clamp applied to probabilities inside the BCE loss.
pub const BCE_CLAMP: Scalar = 1e-7;

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DlgError::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [Scalar])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

fn add_into(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(t) => {
            for (d, &v) in t.data_mut().iter_mut().zip(g.data()) {
                *d += v;
            }
        }
        None => *slot = Some(g.clone()),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(DlgError::NonFinite(format!(
                "output of {name} (node {}) contains NaN or Inf",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that tracks its gradient but is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The leaf for a stored parameter. Repeated calls return the same
    /// variable so shared weights accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let input = xt.dims4()?;
        let weight = wt.dims4()?;
        if input[1] != weight[1] {
            return Err(DlgError::shape(format!(
                "conv2d: input has {} channels, weight {:?} expects {}",
                input[1],
                wt.shape(),
                weight[1]
            )));
        }
        if weight[2] % 2 == 0 || weight[3] % 2 == 0 {
            return Err(DlgError::shape(format!(
                "conv2d: kernel {}x{} must have odd extents",
                weight[2], weight[3]
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [weight[0]] {
                return Err(DlgError::shape(format!(
                    "conv2d: bias {:?} does not match {} output channels",
                    self.shape(b),
                    weight[0]
                )));
            }
        }
        let out_h = kernels::conv_out_len(input[2], weight[2], stride, pad);
        let out_w = kernels::conv_out_len(input[3], weight[3], stride, pad);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(DlgError::shape(format!(
                "conv2d: kernel {:?} with pad {pad} stride {stride} does not fit input {:?}",
                wt.shape(),
                xt.shape()
            )));
        };
        let geo = ConvGeometry {
            input,
            weight,
            stride,
            pad,
            out_h,
            out_w,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::conv2d_forward(&geo, xt.data(), wt.data(), bias);
        let value = Tensor::new(&geo.output(), out)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
            "conv2d",
        )
    }

    /// Convolution with "same" zero padding for odd kernels.
    pub fn conv2d_same(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let k = self.value(w).dims4()?[2];
        self.conv2d(x, w, b, 1, k / 2)
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        if dims[2] < 2 || dims[3] < 2 {
            return Err(DlgError::shape(format!("maxpool2 on {dims:?}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(dims, self.value(x).data());
        let value = Tensor::new(&[dims[0], dims[1], dims[2] / 2, dims[3] / 2], out)?;
        let needs = self.needs(x);
        self.push(value, Op::MaxPool2 { x, argmax }, needs, "maxpool2")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs, "tanh")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(Scalar, Scalar) -> Scalar,
    ) -> Result<Tensor> {
        let (at, bt) = (self.value(a), self.value(b));
        same_shape(name, at, bt)?;
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(at.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs, "mul")
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: Scalar, shift: Scalar) -> Result<Var> {
        let value = self.value(x).map(|v| scale * v + shift);
        let needs = self.needs(x);
        self.push(value, Op::Affine { x, scale }, needs, "affine")
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(DlgError::shape(format!("resize to {out_h}x{out_w}")));
        }
        let data = kernels::bilinear_forward(n * c, h, w, out_h, out_w, self.value(x).data());
        let value = Tensor::new(&[n, c, out_h, out_w], data)?;
        let needs = self.needs(x);
        self.push(value, Op::Resize(x), needs, "resize")
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| DlgError::invalid("concat_channels of nothing"))?;
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(DlgError::shape(format!(
                    "concat_channels: {:?} vs {:?}",
                    self.shape(p),
                    self.shape(first)
                )));
            }
            total_c += pc;
        }
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                data.extend_from_slice(&t.data()[b * pc * h * w..(b + 1) * pc * h * w]);
            }
        }
        let value = Tensor::new(&[n, total_c, h, w], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            value,
            Op::ConcatChannels(parts.to_vec()),
            needs,
            "concat_channels",
        )
    }

    /// Rows of the leading axis in the given order (repeats allowed).
    pub fn select_batch(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let value = self.value(x).select_batch(index)?;
        let needs = self.needs(x);
        self.push(
            value,
            Op::SelectBatch {
                x,
                index: index.to_vec(),
            },
            needs,
            "select_batch",
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(DlgError::shape(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        if shape[axis] == 0 {
            return Err(DlgError::shape("softmax over an empty axis"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = kernels::softmax_forward(outer, shape[axis], inner, self.value(x).data());
        let value = Tensor::new(&shape, data)?;
        let needs = self.needs(x);
        self.push(value, Op::Softmax { x, axis }, needs, "softmax")
    }

    /// `x[n, c, y, x] * a[n, 0, y, x]`.
    pub fn mul_channel_broadcast(&mut self, x: Var, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if self.value(a).dims4()? != [n, 1, h, w] {
            return Err(DlgError::shape(format!(
                "mul_channel_broadcast: {:?} vs {:?}",
                self.shape(x),
                self.shape(a)
            )));
        }
        let (xt, at) = (self.value(x).data(), self.value(a).data());
        let hw = h * w;
        let mut data = Vec::with_capacity(xt.len());
        for b in 0..n {
            let plane = &at[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let src = &xt[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                data.extend(src.iter().zip(plane).map(|(&u, &v)| u * v));
            }
        }
        let value = Tensor::new(&[n, c, h, w], data)?;
        let needs = self.needs(x) || self.needs(a);
        self.push(
            value,
            Op::MulChannelBroadcast { x, a },
            needs,
            "mul_channel_broadcast",
        )
    }

    /// Sum over the leading axis, keeping it with extent 1.
    pub fn sum_batch(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let inner: usize = shape[1..].iter().product();
        let mut data = vec![0.0 as Scalar; inner];
        for row in self.value(x).data().chunks(inner) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut out_shape = shape;
        out_shape[0] = 1;
        let value = Tensor::new(&out_shape, data)?;
        let needs = self.needs(x);
        self.push(value, Op::SumBatch(x), needs, "sum_batch")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum() as Scalar);
        let needs = self.needs(x);
        self.push(value, Op::SumAll(x), needs, "sum_all")
    }

    /// Mean binary cross-entropy between probabilities and a target of the
    /// same shape. Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        same_shape("bce", self.value(pred), target)?;
        let p = self.value(pred).data();
        let mut acc = 0.0f64;
        for (&pv, &t) in p.iter().zip(target.data()) {
            let q = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP) as f64;
            let t = t as f64;
            acc -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        let value = Tensor::scalar((acc / p.len() as f64) as Scalar);
        let needs = self.needs(pred);
        self.push(
            value,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            needs,
            "bce",
        )
    }

    /// Record an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let needs = inputs.iter().any(|&v| self.needs(v));
        let name = op.name();
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
            name,
        )
    }

    /// Reverse-mode sweep from a scalar. Returns one optional gradient per node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(DlgError::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Run [`Graph::backward`] and add the gradient of every reachable
    /// parameter into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                add_into(&mut store.get_mut(id).grad, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let geo = ConvGeometry {
                    input: xt.dims4().expect("rank 4"),
                    weight: wt.dims4().expect("rank 4"),
                    stride: *stride,
                    pad: *pad,
                    out_h: node.value.shape()[2],
                    out_w: node.value.shape()[3],
                };
                let mut gx = self.needs(*x).then(|| Tensor::zeros(xt.shape()));
                let mut gw = Tensor::zeros(wt.shape());
                let mut gb = b.map(|b| Tensor::zeros(self.shape(b)));
                kernels::conv2d_backward(
                    &geo,
                    xt.data(),
                    wt.data(),
                    gd,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.data_mut(),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                if let Some(gx) = gx {
                    add_into(&mut grads[x.0], &gx);
                }
                if self.needs(*w) {
                    add_into(&mut grads[w.0], &gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    if self.needs(*b) {
                        add_into(&mut grads[b.0], &gb);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for (&a, &gv) in argmax.iter().zip(gd) {
                        d[a as usize] += gv;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for ((d, &v), &gv) in d.iter_mut().zip(xv).zip(gd) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for ((d, &s), &gv) in d.iter_mut().zip(y).zip(gd) {
                        *d += gv * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for ((d, &t), &gv) in d.iter_mut().zip(y).zip(gd) {
                        *d += gv * (1.0 - t * t);
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], self.shape(*b), |d| {
                        for (d, &gv) in d.iter_mut().zip(gd) {
                            *d -= gv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(a, b), (b, a)] {
                    if self.needs(*this) {
                        let ov = self.value(*other).data();
                        accumulate(&mut grads[this.0], self.shape(*this), |d| {
                            for ((d, &o), &gv) in d.iter_mut().zip(ov).zip(gd) {
                                *d += gv * o;
                            }
                        });
                    }
                }
            }
            Op::Affine { x, scale } => {
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for (d, &gv) in d.iter_mut().zip(gd) {
                        *d += scale * gv;
                    }
                });
            }
            Op::Resize(x) => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank 4");
                let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    kernels::bilinear_backward(n * c, h, w, oh, ow, gd, d);
                });
            }
            Op::ConcatChannels(parts) => {
                let [n, total_c, h, w] = node.value.dims4().expect("rank 4");
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.needs(p) {
                        accumulate(&mut grads[p.0], self.shape(p), |d| {
                            for b in 0..n {
                                let src = &gd
                                    [(b * total_c + offset) * hw..(b * total_c + offset + pc) * hw];
                                for (dv, &gv) in
                                    d[b * pc * hw..(b + 1) * pc * hw].iter_mut().zip(src)
                                {
                                    *dv += gv;
                                }
                            }
                        });
                    }
                    offset += pc;
                }
            }
            Op::SelectBatch { x, index } => {
                let inner: usize = self.shape(*x)[1..].iter().product();
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for (row, &i) in index.iter().enumerate() {
                        for (dv, &gv) in d[i * inner..(i + 1) * inner]
                            .iter_mut()
                            .zip(&gd[row * inner..(row + 1) * inner])
                        {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[*axis];
                accumulate(&mut grads[x.0], shape, |d| {
                    kernels::softmax_backward(outer, len, inner, node.value.data(), gd, d);
                });
            }
            Op::MulChannelBroadcast { x, a } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank 4");
                let hw = h * w;
                let (xv, av) = (self.value(*x).data(), self.value(*a).data());
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], self.shape(*x), |d| {
                        for b in 0..n {
                            for ch in 0..c {
                                let o = (b * c + ch) * hw;
                                for i in 0..hw {
                                    d[o + i] += gd[o + i] * av[b * hw + i];
                                }
                            }
                        }
                    });
                }
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], self.shape(*a), |d| {
                        for b in 0..n {
                            for ch in 0..c {
                                let o = (b * c + ch) * hw;
                                for i in 0..hw {
                                    d[b * hw + i] += gd[o + i] * xv[o + i];
                                }
                            }
                        }
                    });
                }
            }
            Op::SumBatch(x) => {
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for row in d.chunks_mut(gd.len()) {
                        for (dv, &gv) in row.iter_mut().zip(gd) {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = gd[0];
                accumulate(&mut grads[x.0], self.shape(*x), |d| {
                    for dv in d.iter_mut() {
                        *dv += gv;
                    }
                });
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred).data();
                let m = p.len() as Scalar;
                let gv = gd[0];
                accumulate(&mut grads[pred.0], self.shape(*pred), |d| {
                    for ((dv, &pv), &t) in d.iter_mut().zip(p).zip(target.data()) {
                        if pv <= BCE_CLAMP || pv >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        *dv += gv * (pv - t) / (pv * (1.0 - pv) * m);
                    }
                });
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let gs = op.backward(&vals, &node.value, g, &needs);
                for ((&v, gi), &need) in inputs.iter().zip(gs).zip(&needs) {
                    if let (Some(gi), true) = (gi, need) {
                        add_into(&mut grads[v.0], &gi);
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
