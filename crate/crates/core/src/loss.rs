//! Perceptual losses over a frozen convolutional feature extractor.
//!
//! * style: `sum_i ||G(phi_i(p)) - G(phi_i(s))||_F^2 / C_i^2`, with Gram
//!   matrices normalized by `H_i * W_i`
//! * content: `sum_j ||phi_j(p) - phi_j(c)||^2 / (C_j H_j W_j)`
//! * total: `lambda_s * style + lambda_c * content`

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    /// Output channels of each stage.
    pub widths: Vec<usize>,
    /// Stride of each stage.
    pub strides: Vec<usize>,
    pub kernel: usize,
    /// Stages (0-based) whose Gram matrices enter the style loss.
    pub style_taps: Vec<usize>,
    /// Stages (0-based) whose activations enter the content loss.
    pub content_taps: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            strides: vec![1, 2, 2, 2],
            kernel: 3,
            style_taps: vec![0, 1, 2, 3],
            content_taps: vec![2],
            seed: 0x5eed,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.widths.len();
        if stages == 0 || self.strides.len() != stages {
            return Err(Error::Config("extractor needs one stride per stage".into()));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::Config("extractor widths and strides must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("extractor kernel {} must be odd", self.kernel)));
        }
        for taps in [&self.style_taps, &self.content_taps] {
            if taps.is_empty() {
                return Err(Error::Config("extractor needs style and content taps".into()));
            }
            let mut sorted = taps.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != taps.len() || sorted.iter().any(|&t| t >= stages) {
                return Err(Error::Config(format!("invalid tap list {taps:?}")));
            }
        }
        Ok(())
    }

    pub fn tap_name(stage: usize) -> String {
        format!("stage{}", stage + 1)
    }

    pub fn kernel_shapes(&self) -> Vec<Shape> {
        let mut in_c = 3;
        self.widths
            .iter()
            .map(|&w| {
                let s = Shape::new(w, in_c, self.kernel, self.kernel);
                in_c = w;
                s
            })
            .collect()
    }

    /// Spatial size of every stage for an `h x w` input.
    pub fn stage_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        self.strides
            .iter()
            .map(|&s| {
                h = h.div_ceil(s);
                w = w.div_ceil(s);
                (h, w)
            })
            .collect()
    }
}

/// A fixed stack of mirror-padded convolution + ReLU stages. Its weights
/// never receive updates.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T = f32> {
    config: ExtractorConfig,
    kernels: Vec<Tensor<T>>,
}

/// Activations keyed by stage index.
pub type Features<T> = Vec<Tensor<T>>;

impl<T: Element> FeatureExtractor<T> {
    /// Seeded random extractor with He-scaled gaussian kernels.
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let kernels = config
            .kernel_shapes()
            .into_iter()
            .map(|shape| {
                let fan_in = (shape.c * shape.h * shape.w) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, kernels })
    }

    /// Extractor with externally supplied (e.g. pretrained) kernels.
    pub fn from_kernels(config: ExtractorConfig, kernels: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.kernel_shapes();
        if kernels.len() != shapes.len() || kernels.iter().zip(&shapes).any(|(k, s)| k.shape() != *s) {
            return Err(Error::Incompatible("extractor kernels do not match config".into()));
        }
        Ok(Self { config, kernels })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn kernels(&self) -> &[Tensor<T>] {
        &self.kernels
    }

    pub fn cast<U: Element>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            config: self.config.clone(),
            kernels: self.kernels.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_image(shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape(format!("extractor expects 3 channels, got {}", shape.c)));
        }
        Ok(())
    }

    /// Activations of every stage, recorded on `tape`.
    pub fn extract_on_tape(&self, tape: &mut Tape<T>, image: Var) -> Result<Vec<Var>> {
        Self::check_image(tape.shape(image))?;
        let mut h = image;
        let mut out = Vec::with_capacity(self.kernels.len());
        for (k, &stride) in self.kernels.iter().zip(&self.config.strides) {
            let kv = tape.constant(k.clone());
            let c = tape.conv2d(h, kv, stride)?;
            h = tape.relu(c);
            out.push(h);
        }
        Ok(out)
    }

    pub fn extract(&self, image: &Tensor<T>) -> Result<Features<T>> {
        Self::check_image(image.shape())?;
        let mut h = image.clone();
        let mut out = Vec::with_capacity(self.kernels.len());
        for (k, &stride) in self.kernels.iter().zip(&self.config.strides) {
            h = ops::relu(&ops::conv2d(&h, k, stride)?);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Gram matrices of a single style image at every style tap.
    pub fn style_target(&self, style_image: &Tensor<T>) -> Result<StyleTarget<T>> {
        if style_image.shape().n != 1 {
            return Err(Error::shape("style target needs a single image"));
        }
        let features = self.extract(style_image)?;
        Ok(StyleTarget {
            taps: self.config.style_taps.clone(),
            grams: self.config.style_taps.iter().map(|&t| ops::gram(&features[t])).collect(),
        })
    }
}

/// Cached style-image Gram matrices, one `1 x 1 x C x C` tensor per style tap.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget<T = f32> {
    taps: Vec<usize>,
    grams: Vec<Tensor<T>>,
}

impl<T: Element> StyleTarget<T> {
    pub fn grams(&self) -> &[Tensor<T>] {
        &self.grams
    }

    fn check(&self, config: &ExtractorConfig) -> Result<()> {
        if self.taps != config.style_taps {
            return Err(Error::Config(format!(
                "cached Grams were built for taps {:?}, extractor uses {:?}",
                self.taps, config.style_taps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_s: BTreeMap<String, f64>,
}

impl LossWeights {
    pub fn new(lambda_c: f64) -> Self {
        Self { lambda_c, lambda_s: BTreeMap::new() }
    }

    pub fn with_style(mut self, name: impl Into<String>, lambda_s: f64) -> Self {
        self.lambda_s.insert(name.into(), lambda_s);
        self
    }

    pub fn lambda_for(&self, style: &str) -> Result<f64> {
        self.lambda_s
            .get(style)
            .copied()
            .ok_or_else(|| Error::UnknownStyle(style.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_c) || !self.lambda_s.values().all(|&v| ok(v)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-layer terms and totals of the loss for one pastiche.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Style name or blend description the pastiche was scored against.
    pub style: String,
    pub style_terms: Vec<(String, f64)>,
    pub content_terms: Vec<(String, f64)>,
    pub style_loss: f64,
    pub content_loss: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.style_terms.iter().chain(&self.content_terms).all(|(_, v)| v.is_finite())
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "style={}", self.style)?;
        for (name, v) in &self.style_terms {
            writeln!(f, "style_term.{name}={v:.9e}")?;
        }
        for (name, v) in &self.content_terms {
            writeln!(f, "content_term.{name}={v:.9e}")?;
        }
        writeln!(f, "style_loss={:.9e}", self.style_loss)?;
        writeln!(f, "content_loss={:.9e}", self.content_loss)?;
        writeln!(f, "lambda_s={}", self.lambda_s)?;
        writeln!(f, "lambda_c={}", self.lambda_c)?;
        write!(f, "total={:.9e}", self.total)
    }
}

/// Loss nodes recorded for a batch of pastiches.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    /// Mean over the batch of the weighted per-sample totals (scalar).
    pub total: Var,
    /// Unweighted per-sample terms (`n x 1 x 1 x 1`), one per style tap.
    pub style_terms: Vec<Var>,
    /// Unweighted per-sample terms, one per content tap.
    pub content_terms: Vec<Var>,
}

/// What each sample in a batch is scored against.
pub struct BatchTargets<'a, T: Element> {
    /// Content activations for the whole batch, indexed like the content taps.
    pub content: &'a [Tensor<T>],
    /// Style target for every sample.
    pub styles: Vec<&'a StyleTarget<T>>,
    /// Style weight for every sample.
    pub lambda_s: Vec<f64>,
    pub lambda_c: f64,
}

impl<T: Element> FeatureExtractor<T> {
    /// Content activations at the content taps for a batch of images.
    pub fn content_features(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let features = self.extract(images)?;
        Ok(self.config.content_taps.iter().map(|&t| features[t].clone()).collect())
    }

    /// Records the total loss of a pastiche batch on `tape`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<T>,
        pastiche: Var,
        targets: &BatchTargets<'_, T>,
    ) -> Result<BatchLoss> {
        let n = tape.shape(pastiche).n;
        if targets.styles.len() != n || targets.lambda_s.len() != n {
            return Err(Error::shape(format!(
                "{} style targets / {} weights for a batch of {n}",
                targets.styles.len(),
                targets.lambda_s.len()
            )));
        }
        if targets.content.len() != self.config.content_taps.len() {
            return Err(Error::shape("content features do not match the content taps"));
        }
        for t in &targets.styles {
            t.check(&self.config)?;
        }
        let features = self.extract_on_tape(tape, pastiche)?;

        let mut style_terms = Vec::with_capacity(self.config.style_taps.len());
        for (i, &tap) in self.config.style_taps.iter().enumerate() {
            let g = tape.gram(features[tap]);
            let stacked: Vec<Tensor<T>> = targets.styles.iter().map(|t| t.grams[i].clone()).collect();
            let target = tape.constant(Tensor::stack(&stacked)?);
            let diff = tape.sub(g, target)?;
            let ss = tape.sample_sum_squares(diff);
            let c = tape.shape(features[tap]).c;
            style_terms.push(tape.scale(ss, T::from_f64_lossy(1.0 / (c * c) as f64)));
        }

        let mut content_terms = Vec::with_capacity(self.config.content_taps.len());
        for (&tap, reference) in self.config.content_taps.iter().zip(targets.content) {
            let shape = tape.shape(features[tap]);
            if reference.shape() != shape {
                return Err(Error::shape(format!(
                    "content features {} do not align with pastiche features {shape}",
                    reference.shape()
                )));
            }
            let r = tape.constant(reference.clone());
            let diff = tape.sub(features[tap], r)?;
            let ss = tape.sample_sum_squares(diff);
            content_terms.push(tape.scale(ss, T::from_f64_lossy(1.0 / shape.sample() as f64)));
        }

        let style_sum = sum_vars(tape, &style_terms)?;
        let content_sum = sum_vars(tape, &content_terms)?;
        let lambdas = Tensor::new(
            Shape::new(n, 1, 1, 1),
            targets.lambda_s.iter().map(|&l| T::from_f64_lossy(l)).collect(),
        )?;
        let lambdas = tape.constant(lambdas);
        let weighted_style = tape.mul(style_sum, lambdas)?;
        let weighted_content = tape.scale(content_sum, T::from_f64_lossy(targets.lambda_c));
        let per_sample = tape.add(weighted_style, weighted_content)?;
        let summed = tape.sum(per_sample);
        let total = tape.scale(summed, T::from_f64_lossy(1.0 / n as f64));
        Ok(BatchLoss { total, style_terms, content_terms })
    }

    /// Report for sample `i` of a recorded batch loss.
    pub fn report(
        &self,
        tape: &Tape<T>,
        loss: &BatchLoss,
        i: usize,
        style: &str,
        lambda_s: f64,
        lambda_c: f64,
    ) -> LossReport {
        let read = |v: &Var| tape.value(*v).data()[i].to_f64().unwrap();
        let style_terms: Vec<(String, f64)> = self
            .config
            .style_taps
            .iter()
            .zip(&loss.style_terms)
            .map(|(&t, v)| (ExtractorConfig::tap_name(t), read(v)))
            .collect();
        let content_terms: Vec<(String, f64)> = self
            .config
            .content_taps
            .iter()
            .zip(&loss.content_terms)
            .map(|(&t, v)| (ExtractorConfig::tap_name(t), read(v)))
            .collect();
        let style_loss = style_terms.iter().map(|(_, v)| v).sum::<f64>();
        let content_loss = content_terms.iter().map(|(_, v)| v).sum::<f64>();
        LossReport {
            style: style.to_string(),
            style_terms,
            content_terms,
            style_loss,
            content_loss,
            lambda_s,
            lambda_c,
            total: lambda_s * style_loss + lambda_c * content_loss,
        }
    }

    /// Full report for one pastiche against one content image and one style.
    pub fn evaluate(
        &self,
        pastiche: &Tensor<T>,
        content: &Tensor<T>,
        style: &StyleTarget<T>,
        style_name: &str,
        lambda_s: f64,
        lambda_c: f64,
    ) -> Result<LossReport> {
        if pastiche.shape().n != 1 {
            return Err(Error::shape("evaluate scores a single pastiche"));
        }
        let (p, c) = (pastiche.shape(), content.shape());
        if (p.c, p.h, p.w) != (c.c, c.h, c.w) || c.n != 1 {
            return Err(Error::shape(format!(
                "pastiche {p} and content {c} must have identical dimensions"
            )));
        }
        let content_features = self.content_features(content)?;
        let mut tape = Tape::new();
        let x = tape.constant(pastiche.clone());
        let targets = BatchTargets {
            content: &content_features,
            styles: vec![style],
            lambda_s: vec![lambda_s],
            lambda_c,
        };
        let loss = self.batch_loss(&mut tape, x, &targets)?;
        Ok(self.report(&tape, &loss, 0, style_name, lambda_s, lambda_c))
    }

    /// Style loss and its per-layer terms against a cached target.
    pub fn style_loss_against(&self, pastiche: &Tensor<T>, style: &StyleTarget<T>) -> Result<(f64, Vec<(String, f64)>)> {
        style.check(&self.config)?;
        let features = self.extract(pastiche)?;
        let mut terms = Vec::new();
        for (i, &tap) in self.config.style_taps.iter().enumerate() {
            let g = ops::gram(&features[tap]);
            let c = features[tap].shape().c;
            let ss = g
                .data()
                .iter()
                .zip(style.grams[i].data())
                .map(|(a, b)| {
                    let d = (*a - *b).to_f64().unwrap();
                    d * d
                })
                .sum::<f64>();
            terms.push((ExtractorConfig::tap_name(tap), ss / (c * c) as f64));
        }
        Ok((terms.iter().map(|(_, v)| v).sum(), terms))
    }

    pub fn style_loss(&self, pastiche: &Tensor<T>, style_image: &Tensor<T>) -> Result<(f64, Vec<(String, f64)>)> {
        self.style_loss_against(pastiche, &self.style_target(style_image)?)
    }

    pub fn content_loss(&self, pastiche: &Tensor<T>, content: &Tensor<T>) -> Result<(f64, Vec<(String, f64)>)> {
        if pastiche.shape() != content.shape() {
            return Err(Error::shape(format!(
                "pastiche {} and content {} must have identical dimensions",
                pastiche.shape(),
                content.shape()
            )));
        }
        let fp = self.content_features(pastiche)?;
        let fc = self.content_features(content)?;
        let terms: Vec<(String, f64)> = self
            .config
            .content_taps
            .iter()
            .zip(fp.iter().zip(&fc))
            .map(|(&tap, (a, b))| {
                let ss = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| {
                        let d = (*x - *y).to_f64().unwrap();
                        d * d
                    })
                    .sum::<f64>();
                (ExtractorConfig::tap_name(tap), ss / a.shape().sample() as f64)
            })
            .collect();
        Ok((terms.iter().map(|(_, v)| v).sum(), terms))
    }

    /// `lambda_s * L_s + lambda_c * L_c` for the named style's weight.
    pub fn total_loss(
        &self,
        weights: &LossWeights,
        style_name: &str,
        pastiche: &Tensor<T>,
        content: &Tensor<T>,
        style_image: &Tensor<T>,
    ) -> Result<LossReport> {
        weights.validate()?;
        let lambda_s = weights.lambda_for(style_name)?;
        let target = self.style_target(style_image)?;
        self.evaluate(pastiche, content, &target, style_name, lambda_s, weights.lambda_c)
    }
}

fn sum_vars<T: Element>(tape: &mut Tape<T>, vars: &[Var]) -> Result<Var> {
    let (&first, rest) = vars.split_first().ok_or_else(|| Error::shape("nothing to sum"))?;
    rest.iter().try_fold(first, |acc, &v| tape.add(acc, v))
}
