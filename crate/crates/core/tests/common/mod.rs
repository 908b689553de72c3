#![allow(dead_code)]

pub mod grad;

use pastiche_core::loss::ExtractorConfig;
use pastiche_core::train::StyleTargets;
use pastiche_core::{
    Corpus, FeatureExtractor, LossWeights, ModelWeights, NetworkConfig, Shape, Tensor, TrainConfig, TrainMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_SIZE: usize = 32;

/// widths 8/16/32.
pub fn toy_network() -> NetworkConfig {
    NetworkConfig { base_width: 8, residual_blocks: 2, input_size: TOY_SIZE, ..NetworkConfig::default() }
}

pub fn toy_extractor() -> ExtractorConfig {
    ExtractorConfig::default()
}

/// Smooth colour fields with a few soft blobs, loosely photo-like.
pub fn content_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let tilt: [f32; 3] = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
                [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)],
            )
        })
        .collect();
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
        let mut v = base[c] + tilt[c] * (fx - fy);
        for &(by, bx, r, col) in &blobs {
            let d2 = (fy - by).powi(2) + (fx - bx).powi(2);
            v += col[c] * (-d2 / (r * r)).exp();
        }
        v.clamp(0.0, 1.0)
    })
    .unwrap()
}

/// Diagonal red/blue stripes.
pub fn stripes_style(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let on = ((x + y) / 3).is_multiple_of(2);
        match (c, on) {
            (0, true) => 0.9,
            (2, false) => 0.85,
            (1, _) => 0.1,
            _ => 0.05,
        }
    })
    .unwrap()
}

/// Yellow dots on dark green.
pub fn dots_style(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let (dy, dx) = ((y % 6) as f32 - 2.5, (x % 6) as f32 - 2.5);
        let on = dy * dy + dx * dx < 4.0;
        match (c, on) {
            (0, true) | (1, true) => 0.95,
            (1, false) => 0.35,
            _ => 0.1,
        }
    })
    .unwrap()
}

/// Blocky purple/orange checker, used as the style added after base training.
pub fn checker_style(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let on = ((x / 4) + (y / 4)).is_multiple_of(2);
        match (c, on) {
            (0, true) => 0.6,
            (2, true) => 0.7,
            (0, false) => 0.95,
            (1, false) => 0.55,
            _ => 0.15,
        }
    })
    .unwrap()
}

pub fn corpus() -> Corpus {
    let images = (0..8).map(|s| content_image(100 + s, 40, 36 + 2 * s as usize)).collect();
    Corpus::from_images(images, TOY_SIZE).unwrap()
}

pub fn targets(fx: &FeatureExtractor<f32>, styles: &[(&str, Tensor<f32>)]) -> StyleTargets {
    styles.iter().map(|(n, img)| (n.to_string(), fx.style_target(img).unwrap())).collect()
}

pub const LAMBDA_S: f64 = 5.0;
pub const LAMBDA_C: f64 = 1.0;

pub fn train_config(styles: &[&str], steps: usize, mode: TrainMode) -> TrainConfig {
    let mut weights = LossWeights::new(LAMBDA_C);
    for s in styles {
        weights = weights.with_style(*s, LAMBDA_S);
    }
    TrainConfig {
        steps,
        batch_size: 4,
        weights,
        image_size: TOY_SIZE,
        seed: 7,
        log_every: 50,
        eval_batches: 4,
        mode,
        ..TrainConfig::default()
    }
}

pub struct Trained {
    pub model: ModelWeights<f32>,
    pub fx: FeatureExtractor<f32>,
    pub corpus: Corpus,
    pub targets: StyleTargets,
}

pub fn two_style_setup() -> Trained {
    let fx = FeatureExtractor::new(toy_extractor()).unwrap();
    let targets = targets(&fx, &[("stripes", stripes_style(TOY_SIZE, TOY_SIZE)), ("dots", dots_style(TOY_SIZE, TOY_SIZE))]);
    let model = ModelWeights::build(toy_network(), &["stripes", "dots"], 1).unwrap();
    Trained { model, fx, corpus: corpus(), targets }
}
