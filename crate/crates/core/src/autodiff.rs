//! Reverse-mode differentiation over the primitives in [`crate::ops`].
//!
//! A [`Tape`] records every operation in execution order. Each recorded
//! value is addressed by a [`Var`] handle. [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints for every node that depends on
//! a leaf created with `requires_grad = true`.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MirrorPad { x: Var, pad: usize },
    Correlate { x: Var, kernel: Var, stride: usize },
    Upsample { x: Var, factor: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    ScaleShift { x: Var, gamma: Var, beta: Var },
    GatherRows { src: Var, rows: Vec<usize> },
    Gram { x: Var },
    Sum { x: Var },
    SumSquares { x: Var },
    SampleSumSquares { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for one backward pass. One training step owns one
/// tape.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn mirror_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        if pad == 0 {
            return Ok(x);
        }
        let y = ops::mirror_pad(self.value(x), pad)?;
        Ok(self.push(y, Op::MirrorPad { x, pad }, &[x]))
    }

    /// Valid strided cross-correlation (no padding).
    pub fn correlate(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let y = ops::correlate(self.value(x), self.value(kernel), stride)?;
        Ok(self.push(y, Op::Correlate { x, kernel, stride }, &[x, kernel]))
    }

    /// SAME convolution: mirror padding by `k / 2` followed by correlation.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let pad = ops::same_padding(self.shape(kernel))?;
        let padded = self.mirror_pad(x, pad)?;
        self.correlate(padded, kernel, stride)
    }

    pub fn upsample_nn(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let y = ops::upsample_nn(self.value(x), factor)?;
        Ok(self.push(y, Op::Upsample { x, factor }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::zip_with(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(y, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::zip_with(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    /// Per-(sample, channel) spatial normalization, without the affine part.
    pub fn instance_norm(&mut self, x: Var, eps: T) -> Var {
        let (y, inv_std) = ops::instance_normalize(self.value(x), eps);
        self.push(y, Op::InstanceNorm { x, inv_std }, &[x])
    }

    /// `gamma * x + beta` with `n x c x 1 x 1` parameters.
    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let y = ops::scale_shift(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(y, Op::ScaleShift { x, gamma, beta }, &[x, gamma, beta]))
    }

    /// Builds a batch from rows (samples) of `src`. Rows may repeat; their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(src);
        if rows.is_empty() {
            return Err(Error::shape("gather needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s.n) {
            return Err(Error::shape(format!("row {bad} out of range for {s}")));
        }
        let len = s.sample();
        let src_data = self.value(src).data();
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            data.extend_from_slice(&src_data[r * len..(r + 1) * len]);
        }
        let y = Tensor::from_parts(Shape::new(rows.len(), s.c, s.h, s.w), data);
        Ok(self.push(y, Op::GatherRows { src, rows: rows.to_vec() }, &[src]))
    }

    pub fn gram(&mut self, x: Var) -> Var {
        let y = ops::gram(self.value(x));
        self.push(y, Op::Gram { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v * v);
        self.push(Tensor::scalar(v), Op::SumSquares { x }, &[x])
    }

    /// Sum of squares of each sample, shaped `n x 1 x 1 x 1`.
    pub fn sample_sum_squares(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let data = self
            .value(x)
            .data()
            .chunks_exact(s.sample())
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v * v))
            .collect();
        let y = Tensor::from_parts(Shape::new(s.n, 1, 1, 1), data);
        self.push(y, Op::SampleSumSquares { x }, &[x])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::shape(format!("backward needs a scalar loss, got {loss_shape}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MirrorPad { x, pad } => {
                acc(*x, ops::mirror_pad_backward(g, self.shape(*x), *pad));
            }
            Op::Correlate { x, kernel, stride } => {
                let (dx, dk) = ops::correlate_backward(
                    g,
                    self.value(*x),
                    self.value(*kernel),
                    *stride,
                    self.wants(*x),
                    self.wants(*kernel),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::Upsample { x, factor } => {
                acc(*x, ops::upsample_nn_backward(g, self.shape(*x), *factor));
            }
            Op::Relu { x } => {
                let d = ops::zip_with(g, self.value(*x), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                })
                .expect("same shape");
                acc(*x, d);
            }
            Op::Sigmoid { x } => {
                let d = ops::zip_with(g, &node.value, |gv, y| gv * y * (T::one() - y))
                    .expect("same shape");
                acc(*x, d);
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    acc(*a, ops::zip_with(g, self.value(*b), |x, y| x * y).expect("same shape"));
                }
                if self.wants(*b) {
                    acc(*b, ops::zip_with(g, self.value(*a), |x, y| x * y).expect("same shape"));
                }
            }
            Op::Scale { x, factor } => acc(*x, g.map(|v| v * *factor)),
            Op::InstanceNorm { x, inv_std } => {
                acc(*x, ops::instance_normalize_backward(g, &node.value, inv_std));
            }
            Op::ScaleShift { x, gamma, beta } => {
                let xs = self.shape(*x);
                let xv = self.value(*x).data();
                let gd = g.data();
                if self.wants(*x) {
                    let gam = self.value(*gamma).data();
                    let mut d = Vec::with_capacity(xv.len());
                    for (plane, &k) in gd.chunks_exact(xs.plane()).zip(gam) {
                        d.extend(plane.iter().map(|&v| v * k));
                    }
                    acc(*x, Tensor::from_parts(xs, d));
                }
                let ps = Shape::new(xs.n, xs.c, 1, 1);
                if self.wants(*gamma) {
                    let d = gd
                        .chunks_exact(xs.plane())
                        .zip(xv.chunks_exact(xs.plane()))
                        .map(|(gp, xp)| gp.iter().zip(xp).fold(T::zero(), |a, (&u, &v)| a + u * v))
                        .collect();
                    acc(*gamma, Tensor::from_parts(ps, d));
                }
                if self.wants(*beta) {
                    let d = gd
                        .chunks_exact(xs.plane())
                        .map(|gp| gp.iter().fold(T::zero(), |a, &v| a + v))
                        .collect();
                    acc(*beta, Tensor::from_parts(ps, d));
                }
            }
            Op::GatherRows { src, rows } => {
                let s = self.shape(*src);
                let len = s.sample();
                let mut d = vec![T::zero(); s.numel()];
                for (&r, gr) in rows.iter().zip(g.data().chunks_exact(len)) {
                    for (dst, &v) in d[r * len..(r + 1) * len].iter_mut().zip(gr) {
                        *dst = *dst + v;
                    }
                }
                acc(*src, Tensor::from_parts(s, d));
            }
            Op::Gram { x } => acc(*x, ops::gram_backward(g, self.value(*x))),
            Op::Sum { x } => {
                let gv = g.data()[0];
                acc(*x, Tensor::from_parts(self.shape(*x), vec![gv; self.shape(*x).numel()]));
            }
            Op::SumSquares { x } => {
                let two_g = g.data()[0] + g.data()[0];
                acc(*x, self.value(*x).map(|v| two_g * v));
            }
            Op::SampleSumSquares { x } => {
                let s = self.shape(*x);
                let mut d = Vec::with_capacity(s.numel());
                for (xs, &gv) in self.value(*x).data().chunks_exact(s.sample()).zip(g.data()) {
                    let two_g = gv + gv;
                    d.extend(xs.iter().map(|&v| two_g * v));
                }
                acc(*x, Tensor::from_parts(s, d));
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `v`; exactly zero when the loss
    /// does not depend on `v`.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0]).expect("recorded shapes are valid"),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]).expect("recorded shapes are valid"))
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
