//! The style transfer network `T(c, s)`.
//!
//! ```text
//! conv 9x9/1 (w)  -> conv 3x3/2 (2w) -> conv 3x3/2 (4w)
//! -> residual blocks (4w): conv 3x3 relu, conv 3x3 linear, add input
//! -> upsample x2, conv 3x3 (2w) -> upsample x2, conv 3x3 (w)
//! -> conv 9x9/1 (3), sigmoid
//! ```
//!
//! Every convolution is followed by conditional instance normalization and
//! then its nonlinearity. Convolutions carry no bias; the style shift
//! absorbs it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::style::{StyleBank, StyleVector, CIN_EPS};
use crate::tensor::{Element, Shape, Tensor};

/// Standard deviation of the isotropic gaussian used for kernels.
pub const KERNEL_INIT_STD: f64 = 0.01;

/// Total spatial downsampling factor; input sides must be multiples of it.
pub const SPATIAL_FACTOR: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub base_width: usize,
    pub residual_blocks: usize,
    pub width_multiplier: f64,
    pub outer_kernel: usize,
    pub inner_kernel: usize,
    /// Nominal training/evaluation side length. The network itself accepts
    /// any side that is a multiple of [`SPATIAL_FACTOR`].
    pub input_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            residual_blocks: 5,
            width_multiplier: 1.0,
            outer_kernel: 9,
            inner_kernel: 3,
            input_size: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

/// One convolution + normalization site.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub upsample: usize,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn kernel_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_shape().numel()
    }
}

impl NetworkConfig {
    /// The full-size network shrunk by `multiplier` (e.g. 0.25 gives
    /// widths 8/16/32).
    pub fn scaled(multiplier: f64) -> Self {
        Self { width_multiplier: multiplier, ..Self::default() }
    }

    pub fn width(&self) -> usize {
        (self.base_width as f64 * self.width_multiplier).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) || self.width() == 0 {
            return Err(Error::Config(format!(
                "width {} x {} must round to a positive width",
                self.base_width, self.width_multiplier
            )));
        }
        for k in [self.outer_kernel, self.inner_kernel] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("kernel size {k} must be odd")));
            }
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(SPATIAL_FACTOR) {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of {SPATIAL_FACTOR}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Convolution sites in execution order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let w = self.width();
        let (ko, ki) = (self.outer_kernel, self.inner_kernel);
        let conv = |name: String, i, o, k, stride, upsample, activation| ConvSpec {
            name,
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride,
            upsample,
            activation,
        };
        let mut layers = vec![
            conv("conv_in".into(), 3, w, ko, 1, 1, Activation::Relu),
            conv("down1".into(), w, 2 * w, ki, 2, 1, Activation::Relu),
            conv("down2".into(), 2 * w, 4 * w, ki, 2, 1, Activation::Relu),
        ];
        for b in 0..self.residual_blocks {
            layers.push(conv(format!("res{b}_a"), 4 * w, 4 * w, ki, 1, 1, Activation::Relu));
            layers.push(conv(format!("res{b}_b"), 4 * w, 4 * w, ki, 1, 1, Activation::Linear));
        }
        layers.push(conv("up1".into(), 4 * w, 2 * w, ki, 1, 2, Activation::Relu));
        layers.push(conv("up2".into(), 2 * w, w, ki, 1, 2, Activation::Relu));
        layers.push(conv("conv_out".into(), w, 3, ko, 1, 1, Activation::Sigmoid));
        layers
    }

    /// Output channels of every normalization site.
    pub fn channels(&self) -> Vec<usize> {
        self.layers().iter().map(|l| l.out_channels).collect()
    }

    /// Smallest side (a multiple of [`SPATIAL_FACTOR`]) every mirror pad can
    /// reflect: each padding must stay below the map it pads.
    pub fn min_side(&self) -> usize {
        let outer = self.outer_kernel / 2 + 1;
        let inner = SPATIAL_FACTOR * (self.inner_kernel / 2 + 1);
        outer.max(inner).next_multiple_of(SPATIAL_FACTOR)
    }

    pub fn shared_parameters(&self) -> usize {
        self.layers().iter().map(ConvSpec::weight_count).sum()
    }

    pub fn per_style_parameters(&self) -> usize {
        2 * self.channels().iter().sum::<usize>()
    }
}

/// Parameter accounting for a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterCount {
    /// Convolution weights, shared by every style.
    pub shared: usize,
    /// Scale and shift parameters of one style.
    pub per_style: usize,
    pub styles: usize,
    /// `per_style * styles`.
    pub style_total: usize,
    /// `per_style / (shared + per_style)`.
    pub fraction: f64,
}

/// Shared kernels plus the style bank.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    config: NetworkConfig,
    layers: Vec<ConvSpec>,
    kernels: Vec<Tensor<T>>,
    bank: StyleBank<T>,
}

/// Per-site affine parameters for a whole batch, each `n x C_l x 1 x 1`.
pub type BatchAffine<T> = Vec<(Tensor<T>, Tensor<T>)>;

impl<T: Element> ModelWeights<T> {
    /// Builds a network with gaussian kernels and one bank row per style.
    pub fn build(config: NetworkConfig, style_names: &[&str], seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, KERNEL_INIT_STD).expect("valid std");
        let kernels = layers
            .iter()
            .map(|l| Tensor::from_fn(l.kernel_shape(), |_| T::from_f64_lossy(normal.sample(&mut rng))))
            .collect::<Result<Vec<_>>>()?;
        let mut bank = StyleBank::new(&config.channels())?;
        for name in style_names {
            bank.add_style(name, rng.next_u64())?;
        }
        Ok(Self { config, layers, kernels, bank })
    }

    /// Reassembles a model from stored parts, checking every shape.
    pub fn from_parts(config: NetworkConfig, kernels: Vec<Tensor<T>>, bank: StyleBank<T>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if kernels.len() != layers.len() {
            return Err(Error::Incompatible(format!(
                "{} kernels for {} layers",
                kernels.len(),
                layers.len()
            )));
        }
        for (k, l) in kernels.iter().zip(&layers) {
            if k.shape() != l.kernel_shape() {
                return Err(Error::Incompatible(format!(
                    "kernel `{}` has shape {}, expected {}",
                    l.name,
                    k.shape(),
                    l.kernel_shape()
                )));
            }
        }
        if bank.channels() != config.channels() {
            return Err(Error::Incompatible(format!(
                "style bank channels {:?} do not match network {:?}",
                bank.channels(),
                config.channels()
            )));
        }
        Ok(Self { config, layers, kernels, bank })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn kernels(&self) -> &[Tensor<T>] {
        &self.kernels
    }

    pub(crate) fn kernels_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.kernels
    }

    pub fn bank(&self) -> &StyleBank<T> {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut StyleBank<T> {
        &mut self.bank
    }

    pub fn style_names(&self) -> &[String] {
        self.bank.names()
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let shared = self.kernels.iter().map(Tensor::numel).sum::<usize>();
        let per_style = self.bank.per_style_parameters();
        ParameterCount {
            shared,
            per_style,
            styles: self.bank.len(),
            style_total: self.bank.parameter_count(),
            fraction: per_style as f64 / (shared + per_style) as f64,
        }
    }

    pub fn cast<U: Element>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            layers: self.layers.clone(),
            kernels: self.kernels.iter().map(Tensor::cast).collect(),
            bank: self.bank.cast(),
        }
    }

    /// Checks that an input batch can round-trip through the network.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape(format!("content must have 3 channels, got {}", shape.c)));
        }
        if !shape.h.is_multiple_of(SPATIAL_FACTOR) || !shape.w.is_multiple_of(SPATIAL_FACTOR) {
            return Err(Error::shape(format!(
                "content {}x{} must have sides that are multiples of {SPATIAL_FACTOR}",
                shape.h, shape.w
            )));
        }
        let min = self.config.min_side();
        if shape.h.min(shape.w) < min {
            return Err(Error::shape(format!(
                "content {}x{} is too small; mirror padding needs sides of at least {min}",
                shape.h, shape.w
            )));
        }
        Ok(())
    }

    /// Stacks per-sample style vectors into batch affine parameters.
    pub fn batch_affine(&self, styles: &[StyleVector<T>]) -> Result<BatchAffine<T>> {
        if styles.is_empty() {
            return Err(Error::shape("at least one style vector is required"));
        }
        for s in styles {
            self.bank.check_compatible(s)?;
        }
        self.layers
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let shape = Shape::new(styles.len(), spec.out_channels, 1, 1);
                let gamma = styles.iter().flat_map(|s| s.layers[l].gamma.iter().copied()).collect();
                let beta = styles.iter().flat_map(|s| s.layers[l].beta.iter().copied()).collect();
                Ok((Tensor::new(shape, gamma)?, Tensor::new(shape, beta)?))
            })
            .collect()
    }

    /// Stylizes a batch; sample `i` uses `styles[i]`.
    pub fn forward(&self, content: &Tensor<T>, styles: &[StyleVector<T>]) -> Result<Tensor<T>> {
        if styles.len() != content.shape().n {
            return Err(Error::shape(format!(
                "{} style vectors for a batch of {}",
                styles.len(),
                content.shape().n
            )));
        }
        self.check_input(content.shape())?;
        let affine = self.batch_affine(styles)?;
        let mut tape = Tape::new();
        let x = tape.constant(content.clone());
        let kernels: Vec<Var> = self.kernels.iter().map(|k| tape.constant(k.clone())).collect();
        let affine: Vec<(Var, Var)> = affine
            .into_iter()
            .map(|(g, b)| (tape.constant(g), tape.constant(b)))
            .collect();
        let y = self.forward_on_tape(&mut tape, &kernels, &affine, x)?;
        Ok(tape.value(y).clone())
    }

    /// Stylizes every sample with the same style.
    pub fn stylize(&self, content: &Tensor<T>, style: &StyleVector<T>) -> Result<Tensor<T>> {
        let styles = vec![style.clone(); content.shape().n];
        self.forward(content, &styles)
    }

    /// Records the network on `tape`. `kernels` and `affine` follow
    /// [`ModelWeights::layers`]; affine pairs are `n x C_l x 1 x 1`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        kernels: &[Var],
        affine: &[(Var, Var)],
        x: Var,
    ) -> Result<Var> {
        if kernels.len() != self.layers.len() || affine.len() != self.layers.len() {
            return Err(Error::shape("kernel/affine lists do not match the network layers"));
        }
        self.check_input(tape.shape(x))?;
        let eps = T::from_f64_lossy(CIN_EPS);
        let site = |tape: &mut Tape<T>, l: usize, input: Var| -> Result<Var> {
            let spec = &self.layers[l];
            let up = tape.upsample_nn(input, spec.upsample)?;
            let conv = tape.conv2d(up, kernels[l], spec.stride)?;
            let norm = tape.instance_norm(conv, eps);
            let (gamma, beta) = affine[l];
            let out = tape.scale_shift(norm, gamma, beta)?;
            Ok(match spec.activation {
                Activation::Relu => tape.relu(out),
                Activation::Linear => out,
                Activation::Sigmoid => tape.sigmoid(out),
            })
        };

        let mut h = x;
        let mut l = 0;
        for _ in 0..3 {
            h = site(tape, l, h)?;
            l += 1;
        }
        for _ in 0..self.config.residual_blocks {
            let r = site(tape, l, h)?;
            let r = site(tape, l + 1, r)?;
            h = tape.add(h, r)?;
            l += 2;
        }
        while l < self.layers.len() {
            h = site(tape, l, h)?;
            l += 1;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_counts() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.shared_parameters(), 1_674_432);
        assert_eq!(cfg.per_style_parameters(), 3_206);
        let model = ModelWeights::<f32>::build(cfg, &["only"], 0).unwrap();
        let count = model.count_parameters();
        assert_eq!((count.shared, count.per_style, count.style_total), (1_674_432, 3_206, 3_206));
        assert!((count.fraction - 3206.0 / (1_674_432.0 + 3206.0)).abs() < 1e-15);
    }

    #[test]
    fn quarter_width_counts() {
        let cfg = NetworkConfig::scaled(0.25);
        assert_eq!(cfg.channels()[..3], [8, 16, 32]);
        assert_eq!(cfg.per_style_parameters(), 2 * (8 + 16 + 32 + 10 * 32 + 16 + 8 + 3));
    }

    #[test]
    fn channel_sequence() {
        let cfg = NetworkConfig { base_width: 4, residual_blocks: 2, ..NetworkConfig::default() };
        assert_eq!(cfg.channels(), vec![4, 8, 16, 16, 16, 16, 16, 8, 4, 3]);
    }

    #[test]
    fn adding_a_style_grows_only_the_style_total() {
        let mut model = ModelWeights::<f32>::build(NetworkConfig::scaled(0.25), &["a"], 1).unwrap();
        let before = model.count_parameters();
        model.bank_mut().add_style("b", 2).unwrap();
        let after = model.count_parameters();
        assert_eq!(after.shared, before.shared);
        assert_eq!(after.per_style, before.per_style);
        assert_eq!(after.style_total - before.style_total, before.per_style);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = NetworkConfig::scaled(0.25);
        let a = ModelWeights::<f32>::build(cfg.clone(), &["x", "y"], 5).unwrap();
        let b = ModelWeights::<f32>::build(cfg.clone(), &["x", "y"], 5).unwrap();
        let c = ModelWeights::<f32>::build(cfg, &["x", "y"], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn input_shape_contract() {
        let model = ModelWeights::<f32>::build(NetworkConfig::scaled(0.125), &["a"], 1).unwrap();
        let style = model.bank().select("a").unwrap();
        let ok = Tensor::full(Shape::new(1, 3, 16, 16), 0.5).unwrap();
        let out = model.stylize(&ok, &style).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 16, 16));
        let bad = Tensor::full(Shape::new(1, 3, 18, 18), 0.5).unwrap();
        assert!(matches!(model.stylize(&bad, &style), Err(Error::Shape(_))));
        let gray = Tensor::full(Shape::new(1, 1, 16, 16), 0.5).unwrap();
        assert!(model.stylize(&gray, &style).is_err());
    }

    #[test]
    fn incompatible_style_vector_rejected() {
        let model = ModelWeights::<f32>::build(NetworkConfig::scaled(0.125), &["a"], 1).unwrap();
        let other = ModelWeights::<f32>::build(NetworkConfig::scaled(0.25), &["a"], 1).unwrap();
        let foreign = other.bank().select("a").unwrap();
        let x = Tensor::full(Shape::new(1, 3, 16, 16), 0.5).unwrap();
        assert!(matches!(model.stylize(&x, &foreign), Err(Error::Incompatible(_))));
    }
}
