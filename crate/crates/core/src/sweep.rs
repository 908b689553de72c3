//! Two-style interpolation sweeps with per-frame style losses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{FeatureExtractor, StyleTarget};
use crate::net::ModelWeights;
use crate::style::BlendWeights;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct SweepFrame<T = f32> {
    /// Weight of style A; style B gets `1 - alpha`.
    pub alpha: f64,
    pub pastiche: Tensor<T>,
    pub style_loss_a: f64,
    pub style_loss_b: f64,
}

/// Loss pairs of a sweep without the images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub style_loss_a: f64,
    pub style_loss_b: f64,
}

impl<T: Element> SweepFrame<T> {
    pub fn record(&self) -> SweepRecord {
        SweepRecord { alpha: self.alpha, style_loss_a: self.style_loss_a, style_loss_b: self.style_loss_b }
    }
}

/// `steps` evenly spaced values of alpha from 0 to 1 inclusive.
pub fn alphas(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 steps, got {steps}")));
    }
    Ok((0..steps).map(|i| i as f64 / (steps - 1) as f64).collect())
}

/// Renders `content` under `{a: alpha, b: 1 - alpha}` for each alpha and
/// scores every frame against both style targets.
pub fn interpolation_sweep<T: Element>(
    model: &ModelWeights<T>,
    fx: &FeatureExtractor<T>,
    content: &Tensor<T>,
    a: (&str, &StyleTarget<T>),
    b: (&str, &StyleTarget<T>),
    steps: usize,
) -> Result<Vec<SweepFrame<T>>> {
    if a.0 == b.0 {
        return Err(Error::InvalidBlend(format!("sweep needs two distinct styles, got `{}` twice", a.0)));
    }
    alphas(steps)?
        .into_iter()
        .map(|alpha| {
            let weights = BlendWeights::pair(a.0, b.0, alpha)?;
            let vector = model.bank().blend(&weights)?;
            let pastiche = model.stylize(content, &vector)?;
            let (style_loss_a, _) = fx.style_loss_against(&pastiche, a.1)?;
            let (style_loss_b, _) = fx.style_loss_against(&pastiche, b.1)?;
            Ok(SweepFrame { alpha, pastiche, style_loss_a, style_loss_b })
        })
        .collect()
}

/// Whether the loss against A never increases with alpha and the loss
/// against B never decreases.
pub fn is_monotone(records: &[SweepRecord]) -> (bool, bool) {
    let a = records.windows(2).all(|w| w[1].style_loss_a <= w[0].style_loss_a);
    let b = records.windows(2).all(|w| w[1].style_loss_b >= w[0].style_loss_b);
    (a, b)
}
