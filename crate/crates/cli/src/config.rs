//! TOML run description for `pastiche train`.

use std::path::{Path, PathBuf};

use pastiche_core::{AdamConfig, ExtractorConfig, LossWeights, NetworkConfig, TrainConfig, TrainMode};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    /// Checkpoint written when training finishes.
    pub output: PathBuf,
    /// Directory of PNG/PPM content images.
    pub corpus: PathBuf,
    /// Optional learning-curve CSV.
    pub curve: Option<PathBuf>,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::log_every")]
    pub log_every: usize,
    #[serde(default = "defaults::eval_batches")]
    pub eval_batches: usize,
    #[serde(default = "defaults::lambda")]
    pub lambda_c: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(rename = "style")]
    pub styles: Vec<StyleSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleSpec {
    pub name: String,
    pub image: PathBuf,
    #[serde(default = "defaults::lambda")]
    pub lambda_s: f64,
}

mod defaults {
    use pastiche_core::TrainConfig;

    pub fn steps() -> usize {
        TrainConfig::default().steps
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn image_size() -> usize {
        TrainConfig::default().image_size
    }
    pub fn log_every() -> usize {
        TrainConfig::default().log_every
    }
    pub fn eval_batches() -> usize {
        TrainConfig::default().eval_batches
    }
    pub fn lambda() -> f64 {
        1.0
    }
}

impl TrainFile {
    /// Reads the file; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut file: TrainFile =
            toml::from_str(&text).map_err(|e| CliError::ConfigFile { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut file.output);
        resolve(&mut file.corpus);
        if let Some(curve) = &mut file.curve {
            resolve(curve);
        }
        for style in &mut file.styles {
            resolve(&mut style.image);
        }
        if file.styles.is_empty() {
            return Err(CliError::ConfigFile { path: path.into(), message: "at least one [[style]] is required".into() });
        }
        file.network.input_size = file.image_size;
        Ok(file)
    }

    pub fn style_names(&self) -> Vec<&str> {
        self.styles.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let weights = self
            .styles
            .iter()
            .fold(LossWeights::new(self.lambda_c), |w, s| w.with_style(&s.name, s.lambda_s));
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            adam: self.adam,
            weights,
            image_size: self.image_size,
            seed: self.seed,
            log_every: self.log_every,
            eval_batches: self.eval_batches,
            mode: TrainMode::Full,
        }
    }
}
