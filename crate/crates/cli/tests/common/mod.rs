#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pastiche_core::checkpoint::StyleEntry;
use pastiche_core::{imageio, Checkpoint, ExtractorConfig, ModelWeights, NetworkConfig, Shape, StyleVector, Tensor};
use tempfile::TempDir;

pub const SIZE: usize = 16;

pub fn network() -> NetworkConfig {
    NetworkConfig { base_width: 4, residual_blocks: 1, input_size: SIZE, ..NetworkConfig::default() }
}

pub fn extractor() -> ExtractorConfig {
    ExtractorConfig { widths: vec![4, 8], strides: vec![1, 2], kernel: 3, style_taps: vec![0, 1], content_taps: vec![1], seed: 11 }
}

/// Smooth three-channel pattern, distinct per seed.
pub fn pattern(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let s = seed as f32 + 1.0;
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let v = ((x as f32 * 0.7 * s + c as f32).sin() * (y as f32 * 0.4 + s).cos() + 1.0) / 2.0;
        v.clamp(0.0, 1.0)
    })
    .unwrap()
}

/// Style vector with every gamma and beta set from a simple per-channel rule.
pub fn shifted(vector: &StyleVector<f32>, gain: f32, shift: f32) -> StyleVector<f32> {
    let mut out = vector.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (c, g) in layer.gamma.iter_mut().enumerate() {
            *g = gain + 0.05 * ((c + l) % 3) as f32;
        }
        for (c, b) in layer.beta.iter_mut().enumerate() {
            *b = shift * (((c + 2 * l) % 5) as f32 - 2.0) / 2.0;
        }
    }
    out
}

pub fn midpoint(a: &StyleVector<f32>, b: &StyleVector<f32>) -> StyleVector<f32> {
    let mut out = a.clone();
    for (o, (la, lb)) in out.layers.iter_mut().zip(a.layers.iter().zip(&b.layers)) {
        for (i, g) in o.gamma.iter_mut().enumerate() {
            *g = 0.5 * la.gamma[i] + 0.5 * lb.gamma[i];
        }
        for (i, v) in o.beta.iter_mut().enumerate() {
            *v = 0.5 * la.beta[i] + 0.5 * lb.beta[i];
        }
    }
    out
}

/// A temp directory holding a two-style checkpoint, its style images and a
/// content image.
pub struct Fixture {
    pub dir: TempDir,
    pub ckpt: PathBuf,
    pub content: PathBuf,
    pub style_a: PathBuf,
    pub style_b: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = |name: &str| dir.path().join(name);
        let (style_a, style_b, content) = (path("a.png"), path("b.png"), path("content.png"));
        imageio::save_image(&pattern(3, 24, 20), &style_a).unwrap();
        imageio::save_image(&pattern(8, 20, 20), &style_b).unwrap();
        imageio::save_image(&pattern(1, SIZE, SIZE), &content).unwrap();

        let mut model = ModelWeights::build(network(), &["a", "b"], 5).unwrap();
        let a = shifted(&model.bank().select("a").unwrap(), 1.2, 0.2);
        let b = shifted(&model.bank().select("b").unwrap(), 0.7, -0.3);
        model.bank_mut().set_row("a", &a).unwrap();
        model.bank_mut().set_row("b", &b).unwrap();
        let mut ckpt = Checkpoint::new(model, extractor());
        for (name, source) in [("a", &style_a), ("b", &style_b)] {
            ckpt.registry.insert(
                name.into(),
                StyleEntry { name: name.into(), source: Some(source.display().to_string()), lambda_s: Some(1.0) },
            );
        }
        let ckpt_path = path("model.ckpt");
        ckpt.save(&ckpt_path).unwrap();
        Self { dir, ckpt: ckpt_path, content, style_a, style_b }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::load(&self.ckpt).unwrap()
    }
}

/// Writes `count` content images into `dir`.
pub fn write_corpus(dir: &Path, count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        imageio::save_image(&pattern(20 + i as u64, SIZE + 4, SIZE + 2), dir.join(format!("c{i}.png"))).unwrap();
    }
}
