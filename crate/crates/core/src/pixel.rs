//! Direct optimization of pastiche pixels under the perceptual loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::loss::{BatchTargets, FeatureExtractor, LossReport, StyleTarget};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{Element, Tensor};

/// Default Adam step size for pixel updates.
pub const PIXEL_STEP_SIZE: f64 = 0.01;

#[derive(Clone, Debug)]
pub enum PixelInit<T: Element> {
    Content,
    /// Uniform noise in `[0, 1)`.
    Random(u64),
    /// A caller-supplied starting image with the content's dimensions.
    Image(Tensor<T>),
}

#[derive(Clone, Debug)]
pub struct PixelOptions<T: Element> {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub init: PixelInit<T>,
    pub steps: usize,
    pub step_size: f64,
}

impl<T: Element> Default for PixelOptions<T> {
    fn default() -> Self {
        Self { lambda_s: 1.0, lambda_c: 1.0, init: PixelInit::Content, steps: 200, step_size: PIXEL_STEP_SIZE }
    }
}

#[derive(Clone, Debug)]
pub struct PixelResult<T: Element> {
    pub pastiche: Tensor<T>,
    /// Loss before every update, followed by the loss of the returned image
    /// (`steps + 1` entries).
    pub trace: Vec<LossReport>,
}

impl<T: Element> PixelResult<T> {
    pub fn initial(&self) -> &LossReport {
        &self.trace[0]
    }

    pub fn last(&self) -> &LossReport {
        self.trace.last().expect("trace is never empty")
    }
}

/// Adam on the pixels of a single pastiche, clamping to `[0, 1]` after
/// every step.
pub fn optimize_pixels<T: Element>(
    fx: &FeatureExtractor<T>,
    content: &Tensor<T>,
    style: &StyleTarget<T>,
    options: &PixelOptions<T>,
) -> Result<PixelResult<T>> {
    let shape = content.shape();
    if shape.n != 1 || shape.c != 3 {
        return Err(Error::shape(format!("content must be a single 3-channel image, got {shape}")));
    }
    if options.steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let mut pixels = match &options.init {
        PixelInit::Content => content.clone(),
        PixelInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random::<f64>()))?
        }
        PixelInit::Image(img) => {
            if img.shape() != shape {
                return Err(Error::shape(format!("init image {} must match content {shape}", img.shape())));
            }
            img.clone()
        }
    };
    let content_features = fx.content_features(content)?;
    let targets = BatchTargets {
        content: &content_features,
        styles: vec![style],
        lambda_s: vec![options.lambda_s],
        lambda_c: options.lambda_c,
    };
    let adam = AdamConfig { learning_rate: options.step_size, ..AdamConfig::default() };
    let mut state = AdamState::new(pixels.numel());
    let mut trace = Vec::with_capacity(options.steps + 1);

    for step in 0..=options.steps {
        let mut tape = Tape::new();
        let p = tape.param(pixels.clone());
        let loss = fx.batch_loss(&mut tape, p, &targets)?;
        let report = fx.report(&tape, &loss, 0, "", options.lambda_s, options.lambda_c);
        if !report.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("trace so far: {:?}", trace.iter().map(|r: &LossReport| r.total).collect::<Vec<_>>()),
            });
        }
        trace.push(report);
        if step == options.steps {
            break;
        }
        let grad = tape.backward(loss.total)?.take(p);
        adam_step(pixels.data_mut(), grad.data(), &mut state, &adam)?;
        for v in pixels.data_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
    }
    Ok(PixelResult { pastiche: pixels, trace })
}
