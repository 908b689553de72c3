//! Adam training of the N-style network and fine-tuning of a single style.
//!
//! In [`TrainMode::Full`] every kernel and every bank row is trainable and
//! each batch element draws its style uniformly at random. In
//! [`TrainMode::Finetune`] only the named style's rows are trainable; the
//! kernels and all other rows are never written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::imageio;
use crate::loss::{BatchTargets, FeatureExtractor, LossWeights, StyleTarget};
use crate::net::ModelWeights;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::style::StyleVector;
use crate::tensor::{Shape, Tensor};

/// Seed offset separating the evaluation-batch stream from the training stream.
const EVAL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    Full,
    Finetune(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Side length of the square training crops.
    pub image_size: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Number of fixed batches the learning curve is averaged over.
    pub eval_batches: usize,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 40_000,
            batch_size: 16,
            adam: AdamConfig::default(),
            weights: LossWeights::new(1.0),
            image_size: 256,
            seed: 0,
            log_every: 100,
            eval_batches: 32,
            mode: TrainMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelWeights<f32>) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 || self.eval_batches == 0 {
            return Err(Error::Config("batch_size, log_every and eval_batches must be >= 1".into()));
        }
        self.weights.validate()?;
        model.check_input(Shape::new(1, 3, self.image_size, self.image_size))?;
        if let TrainMode::Finetune(name) = &self.mode {
            model.bank().index_of(name)?;
        }
        if model.bank().is_empty() {
            return Err(Error::Config("model has no styles to train".into()));
        }
        Ok(())
    }
}

/// Content images, each resized so its smaller side equals the crop size.
#[derive(Clone, Debug)]
pub struct Corpus {
    images: Vec<Tensor<f32>>,
    crop: usize,
}

impl Corpus {
    pub fn from_images(images: Vec<Tensor<f32>>, crop: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("content corpus is empty".into()));
        }
        let images = images
            .iter()
            .map(|img| imageio::resize_smaller_side(img, crop))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images, crop })
    }

    /// Loads every `.png` / `.ppm` file in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>, crop: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "ppm")))
            .collect();
        paths.sort();
        let images = paths.iter().map(imageio::load_image).collect::<Result<Vec<_>>>()?;
        Self::from_images(images, crop)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }
}

/// Shuffled-epoch content sampling with random crops and uniform style draws.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

struct Batch {
    content: Tensor<f32>,
    styles: Vec<usize>,
}

impl Sampler {
    fn new(seed: u64, corpus_len: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..corpus_len).collect(), cursor: corpus_len }
    }

    fn next_image(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn batch(&mut self, corpus: &Corpus, batch_size: usize, styles: &[usize]) -> Result<Batch> {
        let mut crops = Vec::with_capacity(batch_size);
        let mut picked = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let img = &corpus.images[self.next_image()];
            let s = img.shape();
            let top = self.rng.random_range(0..=s.h - corpus.crop);
            let left = self.rng.random_range(0..=s.w - corpus.crop);
            crops.push(imageio::crop(img, top, left, corpus.crop, corpus.crop)?);
            picked.push(styles[self.rng.random_range(0..styles.len())]);
        }
        Ok(Batch { content: Tensor::stack(&crops)?, styles: picked })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total: f64,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn first(&self) -> Option<&CurvePoint> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn at_step(&self, step: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.step == step)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,content_loss,style_loss,total,wall_ms\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{}", p.step, p.content_loss, p.style_loss, p.total, p.wall_ms);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Averaged losses of `model` over fixed batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub content_loss: f64,
    pub style_loss: f64,
    pub total: f64,
}

/// Per-style cached Gram targets.
pub type StyleTargets = BTreeMap<String, StyleTarget<f32>>;

fn resolve_styles<'a>(
    model: &ModelWeights<f32>,
    targets: &'a StyleTargets,
    weights: &LossWeights,
    names: &[String],
) -> Result<Vec<(&'a StyleTarget<f32>, f64)>> {
    names
        .iter()
        .map(|n| {
            model.bank().index_of(n)?;
            let t = targets
                .get(n)
                .ok_or_else(|| Error::Config(format!("no style image / Grams for style `{n}`")))?;
            Ok((t, weights.lambda_for(n)?))
        })
        .collect()
}

/// Mean content, style and weighted total loss of `model` on `batches`.
fn evaluate_batches(
    model: &ModelWeights<f32>,
    fx: &FeatureExtractor<f32>,
    batches: &[Batch],
    resolved: &[(&StyleTarget<f32>, f64)],
    bank_rows: &[usize],
    lambda_c: f64,
) -> Result<Evaluation> {
    let (mut content, mut style, mut total, mut count) = (0.0, 0.0, 0.0, 0usize);
    for batch in batches {
        let vectors: Vec<StyleVector<f32>> =
            batch.styles.iter().map(|&s| model.bank().row(bank_rows[s])).collect();
        let pastiche = model.forward(&batch.content, &vectors)?;
        let content_features = fx.content_features(&batch.content)?;
        let mut tape = Tape::new();
        let x = tape.constant(pastiche);
        let targets = BatchTargets {
            content: &content_features,
            styles: batch.styles.iter().map(|&s| resolved[s].0).collect(),
            lambda_s: batch.styles.iter().map(|&s| resolved[s].1).collect(),
            lambda_c,
        };
        let loss = fx.batch_loss(&mut tape, x, &targets)?;
        for (i, &s) in batch.styles.iter().enumerate() {
            let r = fx.report(&tape, &loss, i, "", resolved[s].1, lambda_c);
            content += r.content_loss;
            style += r.style_loss;
            total += r.total;
            count += 1;
        }
    }
    let n = count as f64;
    Ok(Evaluation { content_loss: content / n, style_loss: style / n, total: total / n })
}

/// Trainable leaves of one step and where their values live in the model.
enum Params {
    Full {
        kernels: Vec<Var>,
        gammas: Vec<Var>,
        betas: Vec<Var>,
    },
    Finetune {
        gammas: Vec<Var>,
        betas: Vec<Var>,
    },
}

/// Trains `model` in place and returns its learning curve.
///
/// `targets` must hold Gram targets for every style being trained.
pub fn train(
    model: &mut ModelWeights<f32>,
    fx: &FeatureExtractor<f32>,
    corpus: &Corpus,
    targets: &StyleTargets,
    config: &TrainConfig,
) -> Result<LearningCurve> {
    config.validate(model)?;
    if corpus.crop != config.image_size {
        return Err(Error::Config(format!(
            "corpus prepared for {} px crops, config wants {}",
            corpus.crop, config.image_size
        )));
    }
    let names: Vec<String> = match &config.mode {
        TrainMode::Full => model.style_names().to_vec(),
        TrainMode::Finetune(name) => vec![name.clone()],
    };
    let bank_rows: Vec<usize> = names
        .iter()
        .map(|n| model.bank().index_of(n))
        .collect::<Result<_>>()?;
    let resolved = resolve_styles(model, targets, &config.weights, &names)?;
    let style_slots: Vec<usize> = (0..names.len()).collect();

    let mut eval_sampler = Sampler::new(config.seed ^ EVAL_STREAM, corpus.len());
    let eval: Vec<Batch> = (0..config.eval_batches)
        .map(|_| eval_sampler.batch(corpus, config.batch_size, &style_slots))
        .collect::<Result<_>>()?;
    let mut sampler = Sampler::new(config.seed, corpus.len());

    let finetune = matches!(config.mode, TrainMode::Finetune(_));
    let mut kernel_states: Vec<AdamState<f32>> = if finetune {
        Vec::new()
    } else {
        model.kernels().iter().map(|k| AdamState::new(k.numel())).collect()
    };
    let bank_len = |l: &crate::style::BankLayer<f32>| if finetune { l.channels() } else { l.gamma().len() };
    let mut gamma_states: Vec<AdamState<f32>> =
        model.bank().layers().iter().map(|l| AdamState::new(bank_len(l))).collect();
    let mut beta_states = gamma_states.clone();

    let started = Instant::now();
    let mut curve = LearningCurve::default();
    let log = |model: &ModelWeights<f32>, step: usize, curve: &mut LearningCurve| -> Result<()> {
        let e = evaluate_batches(model, fx, &eval, &resolved, &bank_rows, config.weights.lambda_c)?;
        curve.points.push(CurvePoint {
            step,
            content_loss: e.content_loss,
            style_loss: e.style_loss,
            total: e.total,
            wall_ms: started.elapsed().as_millis(),
        });
        Ok(())
    };
    log(model, 0, &mut curve)?;

    for step in 1..=config.steps {
        let batch = sampler.batch(corpus, config.batch_size, &style_slots)?;
        let content_features = fx.content_features(&batch.content)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.content.clone());

        let (params, kernel_vars, affine) = if finetune {
            let row = bank_rows[0];
            let kernels: Vec<Var> = model.kernels().iter().map(|k| tape.constant(k.clone())).collect();
            let mut gammas = Vec::new();
            let mut betas = Vec::new();
            let mut affine = Vec::new();
            for layer in model.bank().layers() {
                let shape = Shape::new(1, layer.channels(), 1, 1);
                let g = tape.param(Tensor::new(shape, layer.gamma_row(row).to_vec())?);
                let b = tape.param(Tensor::new(shape, layer.beta_row(row).to_vec())?);
                let rows = vec![0; config.batch_size];
                affine.push((tape.gather_rows(g, &rows)?, tape.gather_rows(b, &rows)?));
                gammas.push(g);
                betas.push(b);
            }
            (Params::Finetune { gammas, betas }, kernels, affine)
        } else {
            let kernels: Vec<Var> = model.kernels().iter().map(|k| tape.param(k.clone())).collect();
            let rows: Vec<usize> = batch.styles.iter().map(|&s| bank_rows[s]).collect();
            let mut gammas = Vec::new();
            let mut betas = Vec::new();
            let mut affine = Vec::new();
            for layer in model.bank().layers() {
                let g = tape.param(layer.gamma_tensor()?);
                let b = tape.param(layer.beta_tensor()?);
                affine.push((tape.gather_rows(g, &rows)?, tape.gather_rows(b, &rows)?));
                gammas.push(g);
                betas.push(b);
            }
            (Params::Full { kernels: kernels.clone(), gammas, betas }, kernels, affine)
        };

        let pastiche = model.forward_on_tape(&mut tape, &kernel_vars, &affine, x)?;
        let batch_targets = BatchTargets {
            content: &content_features,
            styles: batch.styles.iter().map(|&s| resolved[s].0).collect(),
            lambda_s: batch.styles.iter().map(|&s| resolved[s].1).collect(),
            lambda_c: config.weights.lambda_c,
        };
        let loss = fx.batch_loss(&mut tape, pastiche, &batch_targets)?;
        let value = tape.value(loss.total).item()?;
        if !value.is_finite() {
            let report = fx.report(&tape, &loss, 0, &names[batch.styles[0]], resolved[batch.styles[0]].1, config.weights.lambda_c);
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "loss {value}; sample 0 style terms {:?} content terms {:?}",
                    report.style_terms, report.content_terms
                ),
            });
        }
        let mut grads = tape.backward(loss.total)?;

        match params {
            Params::Full { kernels, gammas, betas } => {
                for ((k, var), state) in model.kernels_mut().iter_mut().zip(&kernels).zip(&mut kernel_states) {
                    adam_step(k.data_mut(), grads.take(*var).data(), state, &config.adam)?;
                }
                let layers = model.bank_mut().layers_mut();
                for (l, layer) in layers.iter_mut().enumerate() {
                    let mut gamma = layer.gamma().to_vec();
                    let mut beta = layer.beta().to_vec();
                    adam_step(&mut gamma, grads.take(gammas[l]).data(), &mut gamma_states[l], &config.adam)?;
                    adam_step(&mut beta, grads.take(betas[l]).data(), &mut beta_states[l], &config.adam)?;
                    layer.set_matrices(gamma, beta);
                }
            }
            Params::Finetune { gammas, betas } => {
                let name = &names[0];
                let mut row = model.bank().select(name)?;
                for (l, layer) in row.layers.iter_mut().enumerate() {
                    adam_step(&mut layer.gamma, grads.take(gammas[l]).data(), &mut gamma_states[l], &config.adam)?;
                    adam_step(&mut layer.beta, grads.take(betas[l]).data(), &mut beta_states[l], &config.adam)?;
                }
                model.bank_mut().set_row(name, &row)?;
            }
        }

        if step % config.log_every == 0 || step == config.steps {
            log(model, step, &mut curve)?;
        }
    }
    Ok(curve)
}

/// Adds a new style row and fine-tunes only that row.
pub fn finetune_style(
    model: &mut ModelWeights<f32>,
    fx: &FeatureExtractor<f32>,
    corpus: &Corpus,
    targets: &StyleTargets,
    config: &TrainConfig,
) -> Result<LearningCurve> {
    match &config.mode {
        TrainMode::Finetune(name) => {
            model.bank().index_of(name)?;
            train(model, fx, corpus, targets, config)
        }
        TrainMode::Full => Err(Error::Config("finetune_style needs mode = finetune(<style>)".into())),
    }
}
