//! Forward kernels for the layer primitives and the adjoints the tape uses.
//!
//! Every function here is a pure function of its inputs. The differentiable
//! versions live on [`crate::autodiff::Tape`].

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Reflect an index into `0..len` without repeating the edge sample.
#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= len {
        2 * len - 2 - i
    } else {
        i
    };
    r as usize
}

/// Reflect-pads both spatial axes by `pad` on every side.
pub fn mirror_pad<T: Element>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if pad == 0 {
        return Ok(x.clone());
    }
    if pad >= s.h || pad >= s.w {
        return Err(Error::shape(format!(
            "mirror pad {pad} needs spatial dims > {pad}, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h + 2 * pad, s.w + 2 * pad);
    let src = x.data();
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in src.chunks_exact(s.plane()) {
        for oy in 0..oh {
            let sy = reflect(oy as isize - pad as isize, s.h);
            let row = &plane[sy * s.w..(sy + 1) * s.w];
            for ox in 0..ow {
                out.push(row[reflect(ox as isize - pad as isize, s.w)]);
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, oh, ow), out))
}

pub(crate) fn mirror_pad_backward<T: Element>(
    grad: &Tensor<T>,
    input: Shape,
    pad: usize,
) -> Tensor<T> {
    let gs = grad.shape();
    let mut out = vec![T::zero(); input.numel()];
    for (dst, g) in out
        .chunks_exact_mut(input.plane())
        .zip(grad.data().chunks_exact(gs.plane()))
    {
        for oy in 0..gs.h {
            let sy = reflect(oy as isize - pad as isize, input.h);
            for ox in 0..gs.w {
                let sx = reflect(ox as isize - pad as isize, input.w);
                dst[sy * input.w + sx] = dst[sy * input.w + sx] + g[oy * gs.w + ox];
            }
        }
    }
    Tensor::from_parts(input, out)
}

/// Geometry of a valid (unpadded) strided correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub input: Shape,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, kernel: Shape, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        if kernel.c != input.c {
            return Err(Error::shape(format!(
                "kernel expects {} input channels, input has {}",
                kernel.c, input.c
            )));
        }
        if kernel.h > input.h || kernel.w > input.w {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than input {}x{}",
                kernel.h, kernel.w, input.h, input.w
            )));
        }
        Ok(Self {
            input,
            out_c: kernel.n,
            kh: kernel.h,
            kw: kernel.w,
            stride,
            oh: (input.h - kernel.h) / stride + 1,
            ow: (input.w - kernel.w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.input.n, self.out_c, self.oh, self.ow)
    }

    /// Unfolds one sample into a `patch_len x positions` matrix.
    fn im2col<T: Element>(&self, sample: &[T], cols: &mut [T]) {
        let (h, w) = (self.input.h, self.input.w);
        let p = self.positions();
        for ci in 0..self.input.c {
            let plane = &sample[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * p;
                    let dst = &mut cols[row..row + p];
                    for oy in 0..self.oh {
                        let src = &plane[(oy * self.stride + ky) * w..];
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            d.copy_from_slice(&src[kx..kx + self.ow]);
                        } else {
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[ox * self.stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, cols: &[T], sample: &mut [T]) {
        let (h, w) = (self.input.h, self.input.w);
        let p = self.positions();
        for ci in 0..self.input.c {
            let plane = &mut sample[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * p;
                    let src = &cols[row..row + p];
                    for oy in 0..self.oh {
                        let base = (oy * self.stride + ky) * w + kx;
                        for ox in 0..self.ow {
                            let i = base + ox * self.stride;
                            plane[i] = plane[i] + src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Valid cross-correlation with the given stride; no padding, no bias.
pub(crate) fn correlate<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride)?;
    let (k, p) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * p];
    let mut out = vec![T::zero(); g.output().numel()];
    for (sample, dst) in x
        .data()
        .chunks_exact(g.input.sample())
        .zip(out.chunks_exact_mut(g.out_c * p))
    {
        g.im2col(sample, &mut cols);
        T::gemm(g.out_c, k, p, kernel.data(), false, &cols, false, T::zero(), dst);
    }
    Ok(Tensor::from_parts(g.output(), out))
}

/// Gradients of [`correlate`] with respect to its input and kernel. Either
/// may be skipped when the caller does not need it.
pub(crate) fn correlate_backward<T: Element>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride).expect("validated on forward");
    let (k, p) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * p];
    let mut dx = want_input.then(|| vec![T::zero(); x.numel()]);
    let mut dk = want_kernel.then(|| vec![T::zero(); kernel.numel()]);
    for n in 0..g.input.n {
        let gout = &grad.data()[n * g.out_c * p..(n + 1) * g.out_c * p];
        if let Some(dk) = dk.as_mut() {
            let sample = &x.data()[n * g.input.sample()..(n + 1) * g.input.sample()];
            g.im2col(sample, &mut cols);
            T::gemm(g.out_c, p, k, gout, false, &cols, true, T::one(), dk);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(k, g.out_c, p, kernel.data(), true, gout, false, T::zero(), &mut cols);
            let sample = &mut dx[n * g.input.sample()..(n + 1) * g.input.sample()];
            g.col2im(&cols, sample);
        }
    }
    (
        dx.map(|d| Tensor::from_parts(x.shape(), d)),
        dk.map(|d| Tensor::from_parts(kernel.shape(), d)),
    )
}

/// Padding applied on every side by a SAME convolution with this kernel.
pub fn same_padding(kernel: Shape) -> Result<usize> {
    if kernel.h != kernel.w || kernel.h.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "SAME convolution needs a square odd kernel, got {}x{}",
            kernel.h, kernel.w
        )));
    }
    Ok(kernel.h / 2)
}

/// SAME convolution: mirror-pad by `k / 2`, then correlate with `stride`.
/// The output spatial size is `ceil(dim / stride)`.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let pad = same_padding(kernel.shape())?;
    correlate(&mirror_pad(x, pad)?, kernel, stride)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nn<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let s = x.shape();
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in x.data().chunks_exact(s.plane()) {
        for oy in 0..oh {
            let row = &plane[(oy / factor) * s.w..(oy / factor + 1) * s.w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, oh, ow), out))
}

pub(crate) fn upsample_nn_backward<T: Element>(
    grad: &Tensor<T>,
    input: Shape,
    factor: usize,
) -> Tensor<T> {
    let gs = grad.shape();
    let mut out = vec![T::zero(); input.numel()];
    for (dst, g) in out
        .chunks_exact_mut(input.plane())
        .zip(grad.data().chunks_exact(gs.plane()))
    {
        for oy in 0..gs.h {
            for ox in 0..gs.w {
                let i = (oy / factor) * input.w + ox / factor;
                dst[i] = dst[i] + g[oy * gs.w + ox];
            }
        }
    }
    Tensor::from_parts(input, out)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with(a, b, |x, y| x + y)
}

pub(crate) fn zip_with<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("shape mismatch: {} vs {}", a.shape(), b.shape())));
    }
    Ok(Tensor::from_parts(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

/// Instance normalization without the affine part: each (sample, channel)
/// plane is centred on its spatial mean and divided by
/// `sqrt(population variance + eps)`. Returns the normalized tensor and the
/// per-plane inverse standard deviations.
pub fn instance_normalize<T: Element>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let s = x.shape();
    let count = s.plane() as f64;
    let eps = eps.to_f64().expect("finite eps");
    let mut out = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for plane in x.data().chunks_exact(s.plane()) {
        // Statistics in f64 so large offsets do not swamp small spreads.
        let values = plane.iter().map(|v| v.to_f64().expect("finite"));
        let mean = values.clone().sum::<f64>() / count;
        let var = values.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(T::from_f64_lossy(inv));
        out.extend(values.map(|v| T::from_f64_lossy((v - mean) * inv)));
    }
    (Tensor::from_parts(s, out), inv_std)
}

pub(crate) fn instance_normalize_backward<T: Element>(
    grad: &Tensor<T>,
    normalized: &Tensor<T>,
    inv_std: &[T],
) -> Tensor<T> {
    let s = grad.shape();
    let count = T::from_usize(s.plane()).expect("plane size");
    let mut out = Vec::with_capacity(grad.numel());
    for ((g, y), &inv) in grad
        .data()
        .chunks_exact(s.plane())
        .zip(normalized.data().chunks_exact(s.plane()))
        .zip(inv_std)
    {
        let sum_g = g.iter().fold(T::zero(), |a, &v| a + v);
        let sum_gy = g.iter().zip(y).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
        out.extend(
            g.iter()
                .zip(y)
                .map(|(&gv, &yv)| inv * (gv - sum_g / count - yv * sum_gy / count)),
        );
    }
    Tensor::from_parts(s, out)
}

/// Per-(sample, channel) affine map `gamma * x + beta`; `gamma` and `beta`
/// have shape `n x c x 1 x 1`.
pub fn scale_shift<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let want = Shape::new(s.n, s.c, 1, 1);
    if gamma.shape() != want || beta.shape() != want {
        return Err(Error::shape(format!(
            "affine parameters must be {want}, got gamma {} beta {}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = Vec::with_capacity(x.numel());
    for ((plane, &g), &b) in x.data().chunks_exact(s.plane()).zip(gamma.data()).zip(beta.data()) {
        out.extend(plane.iter().map(|&v| g * v + b));
    }
    Ok(Tensor::from_parts(s, out))
}

/// Gram matrices `F F^T / (h w)` for every sample, returned as `n x 1 x c x c`.
pub fn gram<T: Element>(features: &Tensor<T>) -> Tensor<T> {
    let s = features.shape();
    let hw = s.plane();
    let scale = T::one() / T::from_usize(hw).expect("plane size");
    let mut out = vec![T::zero(); s.n * s.c * s.c];
    for (f, g) in features
        .data()
        .chunks_exact(s.sample())
        .zip(out.chunks_exact_mut(s.c * s.c))
    {
        T::gemm(s.c, hw, s.c, f, false, f, true, T::zero(), g);
        for v in g.iter_mut() {
            *v = *v * scale;
        }
    }
    Tensor::from_parts(Shape::new(s.n, 1, s.c, s.c), out)
}

pub(crate) fn gram_backward<T: Element>(grad: &Tensor<T>, features: &Tensor<T>) -> Tensor<T> {
    let s = features.shape();
    let hw = s.plane();
    let scale = T::one() / T::from_usize(hw).expect("plane size");
    let mut out = vec![T::zero(); features.numel()];
    let mut sym = vec![T::zero(); s.c * s.c];
    for ((f, g), dst) in features
        .data()
        .chunks_exact(s.sample())
        .zip(grad.data().chunks_exact(s.c * s.c))
        .zip(out.chunks_exact_mut(s.sample()))
    {
        for i in 0..s.c {
            for j in 0..s.c {
                sym[i * s.c + j] = (g[i * s.c + j] + g[j * s.c + i]) * scale;
            }
        }
        T::gemm(s.c, s.c, hw, &sym, false, f, false, T::zero(), dst);
    }
    Tensor::from_parts(s, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn mirror_pad_row() {
        let x = t(Shape::new(1, 1, 1, 3), &[1.0, 2.0, 3.0]);
        // height 1 cannot be padded, so pad a 2x3 and read the middle row
        assert!(mirror_pad(&x, 1).is_err());
        let x = t(Shape::new(1, 1, 2, 3), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let y = mirror_pad(&x, 1).unwrap();
        assert_eq!(&y.data()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn mirror_pad_two_by_two() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let y = mirror_pad(&x, 1).unwrap();
        assert_eq!(
            y.data(),
            &[4.0, 3.0, 4.0, 3.0, 2.0, 1.0, 2.0, 1.0, 4.0, 3.0, 4.0, 3.0, 2.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn mirror_pad_zero_is_identity_and_large_pad_rejected() {
        let x = t(Shape::new(1, 2, 3, 3), &(0..18).map(f64::from).collect::<Vec<_>>());
        assert_eq!(mirror_pad(&x, 0).unwrap(), x);
        assert!(matches!(mirror_pad(&x, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn mirror_pad_crop_back_is_identity() {
        let x = t(Shape::new(2, 1, 4, 5), &(0..40).map(|v| v as f64 * 0.5).collect::<Vec<_>>());
        let y = mirror_pad(&x, 2).unwrap();
        for n in 0..2 {
            for r in 0..4 {
                for c in 0..5 {
                    assert_eq!(y.at(n, 0, r + 2, c + 2), x.at(n, 0, r, c));
                }
            }
        }
    }

    #[test]
    fn conv_one_by_one_scales() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 3.0, 5.0, 7.0]);
        let k = t(Shape::new(1, 1, 1, 1), &[2.0]);
        assert_eq!(conv2d(&x, &k, 1).unwrap().data(), &[2.0, 6.0, 10.0, 14.0]);
    }

    #[test]
    fn conv_constant_field() {
        let v = 0.75;
        let x = Tensor::<f64>::full(Shape::new(1, 1, 6, 5), v).unwrap();
        let k = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0).unwrap();
        let y = conv2d(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&o| o == 9.0 * v));
    }

    #[test]
    fn conv_strided_identity_center() {
        let ramp: Vec<f64> = (0..25).map(f64::from).collect();
        let x = t(Shape::new(1, 1, 5, 5), &ramp);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = t(Shape::new(1, 1, 3, 3), &kd);
        let y = conv2d(&x, &k, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        let expected: Vec<f64> = [0, 2, 4]
            .iter()
            .flat_map(|&r| [0, 2, 4].map(move |c| (r * 5 + c) as f64))
            .collect();
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn conv_output_size_is_ceil() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 7, 6)).unwrap();
        let k = Tensor::<f32>::zeros(Shape::new(4, 2, 3, 3)).unwrap();
        assert_eq!(conv2d(&x, &k, 2).unwrap().shape(), Shape::new(1, 4, 4, 3));
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_even_kernels() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4)).unwrap();
        let k = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3)).unwrap();
        assert!(matches!(conv2d(&x, &k, 1), Err(Error::Shape(_))));
        let k = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2)).unwrap();
        assert!(matches!(conv2d(&x, &k, 1), Err(Error::Shape(_))));
        let k = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3)).unwrap();
        assert!(conv2d(&x, &k, 0).is_err());
    }

    #[test]
    fn upsample_replicates() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let y = upsample_nn(&x, 2).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert_eq!(upsample_nn(&x, 1).unwrap(), x);
        assert!(upsample_nn(&x, 0).is_err());
    }

    #[test]
    fn upsample_then_sum_kernel_is_scaled_replication() {
        // two channels, 1x1 kernel summing them with weights 1 and 2
        let x = t(Shape::new(1, 2, 2, 2), &[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        let k = t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]);
        let y = conv2d(&upsample_nn(&x, 2).unwrap(), &k, 1).unwrap();
        let by_hand = [21.0, 42.0, 63.0, 84.0];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(y.at(0, 0, r, c), by_hand[(r / 2) * 2 + c / 2]);
            }
        }
    }

    #[test]
    fn elementwise_definitions() {
        let x = t(Shape::new(1, 1, 1, 2), &[-2.0, 3.0]);
        assert_eq!(relu(&x).data(), &[0.0, 3.0]);
        assert_eq!(sigmoid(&t(Shape::scalar(), &[0.0])).data(), &[0.5]);
        let z = Tensor::zeros(x.shape()).unwrap();
        assert_eq!(add(&x, &z).unwrap(), x);
        assert!(add(&x, &Tensor::zeros(Shape::scalar()).unwrap()).is_err());
    }

    #[test]
    fn sigmoid_stays_inside_unit_interval_for_moderate_inputs() {
        let x = t(Shape::new(1, 1, 1, 4), &[-30.0, -1.0, 1.0, 30.0]);
        assert!(sigmoid(&x).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gram_hand_examples() {
        let f = t(Shape::new(1, 1, 1, 2), &[1.0, 2.0]);
        assert_eq!(gram(&f).data(), &[2.5]);
        let f = t(Shape::new(1, 2, 1, 3), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let g = gram(&f);
        let s = g.data()[0];
        assert!(s > 0.0);
        assert_eq!(g.data(), &[s, s, s, s]);
    }
}
