use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{shape_err, Error, Result};

use super::array::{broadcast_offsets, broadcast_shape};
use super::fault::{self, Fault};
use super::kernels::{self, ConvGeom, UpGeom};
use super::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

/// Direction reduced by [`Tape::avgpool_directional`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// Mean over rows, giving `(N,C,1,W)`.
    Height,
    /// Mean over columns, giving `(N,C,H,1)`.
    Width,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    BroadcastTo(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { input: usize, axis: usize, start: usize },
    Relu(usize),
    Sigmoid(usize),
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    ConvTranspose { x: usize, w: usize, b: usize, geom: UpGeom },
    MaxPool { input: usize, argmax: Vec<usize> },
    AvgPoolDir { input: usize, axis: PoolAxis },
    GlobalAvgPool(usize),
    Bce { pred: usize, target: Vec<T> },
    Dice { pred: usize, target: Vec<T>, smooth: T },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::BroadcastTo(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::GlobalAvgPool(x) => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Narrow { input, .. }
            | Op::MaxPool { input, .. }
            | Op::AvgPoolDir { input, .. } => vec![*input],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose { x, w, b, .. } => vec![*x, *w, *b],
            Op::Bce { pred, .. } | Op::Dice { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended in execution
/// order, so every node's inputs precede it and a reverse sweep is a valid
/// topological order for the backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis..].iter().product();
    (outer, inner)
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => value.requires_grad(),
            other => other.inputs().iter().any(|&i| self.nodes[i].needs_grad),
        };
        debug_assert!(op.inputs().iter().all(|&i| i < self.nodes.len()));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether the
    /// backward pass fills its gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.check(v).expect("var from another tape")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.value(v).grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        let i = self.check(v).expect("var from another tape");
        self.nodes[i].value.clone()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    // ---- elementwise ---------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let f = |x: T, y: T| if mul { x * y } else { x + y };
        let data: Vec<T> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(ta.shape(), &shape);
            let ob = broadcast_offsets(tb.shape(), &shape);
            oa.iter()
                .zip(&ob)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect()
        };
        let op = if mul { Op::Mul(ia, ib) } else { Op::Add(ia, ib) };
        Ok(self.push(Tensor::new(&shape, data)?, op))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, false)
    }

    /// Elementwise product with trailing-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, true)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let out = self.nodes[i]
            .value
            .map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
        Ok(self.push(out, Op::Relu(i)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let out = self.nodes[i].value.map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(i)))
    }

    // ---- reductions and layout ------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let s: T = self.nodes[i].value.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(i)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let t = &self.nodes[i].value;
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_f64(t.numel() as f64);
        Ok(self.push(Tensor::scalar(m), Op::Mean(i)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.check(x)?;
        let src = &self.nodes[i].value;
        let t = Tensor::new(src.shape(), src.data().to_vec())?.reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(i)))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.check(x)?;
        let t = &self.nodes[i].value;
        if broadcast_shape(t.shape(), shape)? != shape {
            return Err(shape_err!("cannot broadcast {:?} to {shape:?}", t.shape()));
        }
        let offs = broadcast_offsets(t.shape(), shape);
        let data = offs.iter().map(|&o| t.data()[o]).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::BroadcastTo(i)))
    }

    /// Stacks tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err!("concat of zero tensors"));
        }
        let idx: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat axis {axis} out of range for {first:?}"));
        }
        let mut shape = first.clone();
        shape[axis] = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let agree = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !agree {
                return Err(shape_err!("concat along axis {axis}: {first:?} vs {s:?}"));
            }
            shape[axis] += s[axis];
        }
        let (outer, _) = outer_inner(&first, axis);
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for o in 0..outer {
            for &i in &idx {
                let t = &self.nodes[i].value;
                let inner = t.numel() / outer;
                data.extend_from_slice(&t.data()[o * inner..(o + 1) * inner]);
            }
        }
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat { inputs: idx, axis }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        for &x in xs {
            self.value_checked(x)?.dims4("concat_channels")?;
        }
        self.concat(xs, 1)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let i = self.check(x)?;
        let t = &self.nodes[i].value;
        let s = t.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(shape_err!("narrow({axis}, {start}, {len}) out of range for {s:?}"));
        }
        let (outer, inner) = outer_inner(s, axis);
        let rest = inner / s[axis];
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * rest);
        for o in 0..outer {
            let base = o * inner + start * rest;
            data.extend_from_slice(&t.data()[base..base + len * rest]);
        }
        Ok(self.push(Tensor::new(&shape, data)?, Op::Narrow { input: i, axis, start }))
    }

    fn value_checked(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.check(v)?].value)
    }

    // ---- convolution and pooling ----------------------------------------

    /// Zero-padded cross-correlation. `w` is `(Cout,Cin,k,k)`, `b` is `(Cout)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let [n, cin, h, wd] = self.nodes[ix].value.dims4("conv2d input")?;
        let [cout, wcin, k, k2] = self.nodes[iw].value.dims4("conv2d weight")?;
        if wcin != cin {
            return Err(shape_err!("conv2d: input has {cin} channels, weight expects {wcin}"));
        }
        if self.nodes[ib].value.shape() != [cout] {
            return Err(shape_err!(
                "conv2d: bias shape {:?}, expected [{cout}]",
                self.nodes[ib].value.shape()
            ));
        }
        if k != k2 {
            return Err(Error::InvalidHyperparameter(format!("non-square kernel {k}x{k2}")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::InvalidHyperparameter(format!(
                "stride {stride} and dilation {dilation} must be at least 1"
            )));
        }
        let k_eff = dilation * (k - 1) + 1;
        if k_eff > h + 2 * padding || k_eff > wd + 2 * padding {
            return Err(Error::InvalidHyperparameter(format!(
                "effective kernel extent {k_eff} exceeds padded input {}x{}",
                h + 2 * padding,
                wd + 2 * padding
            )));
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad: padding,
            dil: dilation,
            ho: (h + 2 * padding - k_eff) / stride + 1,
            wo: (wd + 2 * padding - k_eff) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            self.nodes[ib].value.data(),
        );
        let t = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        Ok(self.push(t, Op::Conv2d { x: ix, w: iw, b: ib, geom }))
    }

    /// Transposed convolution with `kernel == stride`. `w` is `(Cin,Cout,k,k)`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let [n, cin, h, wd] = self.nodes[ix].value.dims4("conv2d_transpose input")?;
        let [wcin, cout, k, k2] = self.nodes[iw].value.dims4("conv2d_transpose weight")?;
        if wcin != cin {
            return Err(shape_err!(
                "conv2d_transpose: input has {cin} channels, weight expects {wcin}"
            ));
        }
        if self.nodes[ib].value.shape() != [cout] {
            return Err(shape_err!("conv2d_transpose: bias must be [{cout}]"));
        }
        if k != k2 || k != stride || k == 0 {
            return Err(Error::InvalidHyperparameter(format!(
                "transposed convolution needs a square kernel equal to the stride, got {k}x{k2} stride {stride}"
            )));
        }
        let geom = UpGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
        };
        let out = kernels::conv_transpose_forward(
            &geom,
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            self.nodes[ib].value.data(),
        );
        let (ho, wo) = geom.out_dims();
        let t = Tensor::new(&[n, cout, ho, wo], out)?;
        Ok(self.push(t, Op::ConvTranspose { x: ix, w: iw, b: ib, geom }))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let i = self.check(x)?;
        let [n, c, h, w] = self.nodes[i].value.dims4("maxpool2d")?;
        if window == 0 || stride == 0 || window > h || window > w {
            return Err(Error::InvalidHyperparameter(format!(
                "pool window {window} stride {stride} on {h}x{w}"
            )));
        }
        if window == stride && (h % stride != 0 || w % stride != 0) {
            return Err(Error::InvalidHyperparameter(format!(
                "{h}x{w} is not divisible by pool stride {stride}"
            )));
        }
        let (out, argmax) =
            kernels::maxpool_forward(self.nodes[i].value.data(), n * c, h, w, window, stride);
        let shape = [n, c, (h - window) / stride + 1, (w - window) / stride + 1];
        Ok(self.push(Tensor::new(&shape, out)?, Op::MaxPool { input: i, argmax }))
    }

    pub fn avgpool_directional(&mut self, x: Var, axis: PoolAxis) -> Result<Var> {
        let i = self.check(x)?;
        let t = &self.nodes[i].value;
        let [n, c, h, w] = t.dims4("avgpool_directional")?;
        let d = t.data();
        let (shape, data) = match axis {
            PoolAxis::Width => {
                let inv = T::one() / T::from_f64(w as f64);
                let data = d.chunks(w).map(|row| row.iter().copied().sum::<T>() * inv).collect();
                ([n, c, h, 1], data)
            }
            PoolAxis::Height => {
                let inv = T::one() / T::from_f64(h as f64);
                let mut data = Vec::with_capacity(n * c * w);
                for plane in d.chunks(h * w) {
                    for col in 0..w {
                        let s: T = (0..h).map(|r| plane[r * w + col]).sum();
                        data.push(s * inv);
                    }
                }
                ([n, c, 1, w], data)
            }
        };
        Ok(self.push(Tensor::new(&shape, data)?, Op::AvgPoolDir { input: i, axis }))
    }

    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let t = &self.nodes[i].value;
        let [n, c, h, w] = t.dims4("global_avgpool")?;
        let inv = T::one() / T::from_f64((h * w) as f64);
        let data = t
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(Tensor::new(&[n, c, 1, 1], data)?, Op::GlobalAvgPool(i)))
    }

    // ---- fused losses ---------------------------------------------------

    pub(crate) fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let i = self.check(pred)?;
        let p = &self.nodes[i].value;
        if p.shape() != target.shape() {
            return Err(shape_err!(
                "bce: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            ));
        }
        let eps = T::from_f64(BCE_EPS);
        let one = T::one();
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let pc = if p.is_nan() { p } else { p.max(eps).min(one - eps) };
                -(y * pc.ln() + (one - y) * (one - pc).ln())
            })
            .sum();
        let loss = total / T::from_f64(p.numel() as f64);
        let op = Op::Bce {
            pred: i,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    pub(crate) fn dice(&mut self, pred: Var, target: &Tensor<T>, smooth: T) -> Result<Var> {
        let i = self.check(pred)?;
        let p = &self.nodes[i].value;
        if p.shape() != target.shape() {
            return Err(shape_err!(
                "dice: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            ));
        }
        let n = p.shape()[0];
        let per = p.numel() / n;
        let mut total = T::zero();
        for (ps, ys) in p.data().chunks(per).zip(target.data().chunks(per)) {
            let (inter, denom) = dice_terms(ps, ys, smooth);
            total = total + (T::one() - (inter + inter + smooth) / denom);
        }
        let loss = total / T::from_f64(n as f64);
        let op = Op::Dice {
            pred: i,
            target: target.data().to_vec(),
            smooth,
        };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d(loss)/d(node) back through the tape and adds the result
    /// into the gradient buffer of every leaf that requires a gradient.
    /// Calling it twice without [`Tape::zero_grad`] accumulates twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.check(loss)?;
        if self.nodes[root].value.numel() != 1 {
            return Err(shape_err!(
                "backward needs a single-element loss, got {:?}",
                self.nodes[root].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (input, gi) in self.input_grads(idx, &g) {
                if !self.nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => add_into(acc, &gi),
                    slot => *slot = Some(gi),
                }
            }
        }

        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[idx];
                if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn input_grads(&self, idx: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(node.op, Op::Mul(..));
                let (ta, tb) = (val(*a), val(*b));
                let mut res = Vec::new();
                for (this, t_this, t_other) in [(*a, ta, tb), (*b, tb, ta)] {
                    if !self.wants(this) {
                        continue;
                    }
                    let mut acc = vec![T::zero(); t_this.numel()];
                    if t_this.shape() == out.shape() && t_other.shape() == out.shape() {
                        for (k, gv) in g.iter().enumerate() {
                            acc[k] = if is_mul { *gv * t_other.data()[k] } else { *gv };
                        }
                    } else {
                        let o_this = broadcast_offsets(t_this.shape(), out.shape());
                        let o_other = broadcast_offsets(t_other.shape(), out.shape());
                        for (k, gv) in g.iter().enumerate() {
                            let contrib = if is_mul { *gv * t_other.data()[o_other[k]] } else { *gv };
                            acc[o_this[k]] = acc[o_this[k]] + contrib;
                        }
                    }
                    res.push((this, acc));
                }
                res
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).numel()])],
            Op::Mean(x) => {
                let n = val(*x).numel();
                vec![(*x, vec![g[0] / T::from_f64(n as f64); n])]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::BroadcastTo(x) => {
                let t = val(*x);
                let offs = broadcast_offsets(t.shape(), out.shape());
                let mut acc = vec![T::zero(); t.numel()];
                for (k, &o) in offs.iter().enumerate() {
                    acc[o] = acc[o] + g[k];
                }
                vec![(*x, acc)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, _) = outer_inner(out.shape(), *axis);
                let mut parts: Vec<Vec<T>> =
                    inputs.iter().map(|&i| Vec::with_capacity(val(i).numel())).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (j, &i) in inputs.iter().enumerate() {
                        let inner = val(i).numel() / outer;
                        parts[j].extend_from_slice(&g[pos..pos + inner]);
                        pos += inner;
                    }
                }
                inputs.iter().copied().zip(parts).collect()
            }
            Op::Narrow { input, axis, start } => {
                let t = val(*input);
                let (outer, inner) = outer_inner(t.shape(), *axis);
                let rest = inner / t.shape()[*axis];
                let chunk = out.shape()[*axis] * rest;
                let mut acc = vec![T::zero(); t.numel()];
                for o in 0..outer {
                    let base = o * inner + start * rest;
                    acc[base..base + chunk].copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
                }
                vec![(*input, acc)]
            }
            Op::Relu(x) => {
                let sign = if fault::active(Fault::NegateRelu) { -T::one() } else { T::one() };
                let acc = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv * sign } else { T::zero() })
                    .collect();
                vec![(*x, acc)]
            }
            Op::Sigmoid(x) => {
                let sign = if fault::active(Fault::NegateSigmoid) { -T::one() } else { T::one() };
                let acc = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| sign * gv * y * (T::one() - y))
                    .collect();
                vec![(*x, acc)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, mut dw, db) = kernels::conv2d_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    g,
                    self.wants(*x),
                );
                if fault::active(Fault::NegateConvWeight) {
                    dw.iter_mut().for_each(|v| *v = -*v);
                }
                let mut res = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                res
            }
            Op::ConvTranspose { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv_transpose_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    g,
                    self.wants(*x),
                );
                let mut res = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                res
            }
            Op::MaxPool { input, argmax } => {
                let mut acc = vec![T::zero(); val(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    acc[src] = acc[src] + gv;
                }
                vec![(*input, acc)]
            }
            Op::AvgPoolDir { input, axis } => {
                let t = val(*input);
                let [_, _, h, w] = t.dims4("avgpool_directional").expect("checked in forward");
                let mut acc = vec![T::zero(); t.numel()];
                match axis {
                    PoolAxis::Width => {
                        let inv = T::one() / T::from_f64(w as f64);
                        for (row, &gv) in acc.chunks_mut(w).zip(g) {
                            row.fill(gv * inv);
                        }
                    }
                    PoolAxis::Height => {
                        let inv = T::one() / T::from_f64(h as f64);
                        for (plane, gp) in acc.chunks_mut(h * w).zip(g.chunks(w)) {
                            for row in plane.chunks_mut(w) {
                                row.iter_mut().zip(gp).for_each(|(a, &gv)| *a = gv * inv);
                            }
                        }
                    }
                }
                vec![(*input, acc)]
            }
            Op::GlobalAvgPool(x) => {
                let t = val(*x);
                let [_, _, h, w] = t.dims4("global_avgpool").expect("checked in forward");
                let inv = T::one() / T::from_f64((h * w) as f64);
                let mut acc = vec![T::zero(); t.numel()];
                for (plane, &gv) in acc.chunks_mut(h * w).zip(g) {
                    plane.fill(gv * inv);
                }
                vec![(*x, acc)]
            }
            Op::Bce { pred, target } => {
                let p = val(*pred);
                let eps = T::from_f64(BCE_EPS);
                let one = T::one();
                let scale = g[0] / T::from_f64(p.numel() as f64);
                let acc = p
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        if p < eps || p > one - eps {
                            T::zero()
                        } else {
                            scale * ((one - y) / (one - p) - y / p)
                        }
                    })
                    .collect();
                vec![(*pred, acc)]
            }
            Op::Dice {
                pred,
                target,
                smooth,
            } => {
                let p = val(*pred);
                let n = p.shape()[0];
                let per = p.numel() / n;
                let scale = g[0] / T::from_f64(n as f64);
                let mut acc = Vec::with_capacity(p.numel());
                for (ps, ys) in p.data().chunks(per).zip(target.chunks(per)) {
                    let (inter, denom) = dice_terms(ps, ys, *smooth);
                    let numer = inter + inter + *smooth;
                    let d2 = denom * denom;
                    // d(1 - numer/denom)/dp_j = -(2 y_j denom - numer) / denom^2
                    acc.extend(
                        ys.iter()
                            .map(|&y| -scale * ((y + y) * denom - numer) / d2),
                    );
                }
                vec![(*pred, acc)]
            }
        }
    }
}

pub(crate) const BCE_EPS: f64 = 1e-7;

/// `(sum p*y, sum p + sum y + smooth)` for one sample.
fn dice_terms<T: Scalar>(p: &[T], y: &[T], smooth: T) -> (T, T) {
    let mut inter = T::zero();
    let mut sp = T::zero();
    let mut sy = T::zero();
    for (&a, &b) in p.iter().zip(y) {
        inter = inter + a * b;
        sp = sp + a;
        sy = sy + b;
    }
    (inter, sp + sy + smooth)
}

/// Logistic function in the branch form that never exponentiates a large
/// positive number.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
