//! Image preprocessing and style-target construction shared by the
//! commands and the service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pastiche_core::{imageio, Checkpoint, FeatureExtractor, StyleTarget, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Optional resize of the smaller side followed by an optional center crop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Preprocess {
    pub resize: Option<usize>,
    pub crop: Option<usize>,
}

impl Preprocess {
    pub fn apply(&self, image: Tensor<f32>) -> Result<Tensor<f32>> {
        let image = match self.resize {
            Some(side) => imageio::resize_smaller_side(&image, side)?,
            None => image,
        };
        Ok(match self.crop {
            Some(size) => imageio::center_crop(&image, size)?,
            None => image,
        })
    }

    pub fn load(&self, path: &Path) -> Result<Tensor<f32>> {
        self.apply(imageio::load_image(path)?)
    }
}

/// Style images are scored at the model's training size: smaller side
/// resized to `input_size`.
pub fn style_target(fx: &FeatureExtractor<f32>, image: &Tensor<f32>, input_size: usize) -> Result<StyleTarget<f32>> {
    let resized = imageio::resize_smaller_side(image, input_size)?;
    Ok(fx.style_target(&resized)?)
}

/// Parses `name=path`.
pub fn parse_style_override(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

/// Style image paths: registry sources, replaced by explicit overrides.
pub fn style_sources(ckpt: &Checkpoint, overrides: &[(String, PathBuf)]) -> Result<BTreeMap<String, PathBuf>> {
    let mut sources = BTreeMap::new();
    for name in ckpt.model.style_names() {
        if let Some(source) = ckpt.entry(name).source {
            sources.insert(name.clone(), PathBuf::from(source));
        }
    }
    for (name, path) in overrides {
        ckpt.model.bank().index_of(name)?;
        sources.insert(name.clone(), path.clone());
    }
    Ok(sources)
}

pub fn target_for(
    ckpt: &Checkpoint,
    fx: &FeatureExtractor<f32>,
    sources: &BTreeMap<String, PathBuf>,
    name: &str,
) -> Result<StyleTarget<f32>> {
    ckpt.model.bank().index_of(name)?;
    let path = sources.get(name).ok_or_else(|| CliError::NoStyleImage(name.to_string()))?;
    style_target(fx, &imageio::load_image(path)?, ckpt.model.config().input_size)
}

/// Content-addressed id: SHA-256 over the dimensions and the 8-bit pixels.
pub fn content_id(image: &Tensor<f32>) -> String {
    let s = image.shape();
    let mut hasher = Sha256::new();
    hasher.update(format!("{}x{}x{}x{}:", s.n, s.c, s.h, s.w).as_bytes());
    let bytes: Vec<u8> = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    hasher.update(&bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
