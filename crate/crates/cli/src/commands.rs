use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pastiche_core::checkpoint::StyleEntry;
use pastiche_core::pixel::{optimize_pixels, PixelInit, PixelOptions, PIXEL_STEP_SIZE};
use pastiche_core::sweep::{interpolation_sweep, is_monotone, SweepRecord};
use pastiche_core::train::{finetune_style, train, StyleTargets};
use pastiche_core::{
    imageio, AdamConfig, BlendWeights, Checkpoint, Corpus, ExtractorConfig, FeatureExtractor, LossWeights, ModelWeights,
    StyleFile, TrainConfig, TrainMode,
};

use crate::config::TrainFile;
use crate::error::{CliError, Result};
use crate::prep::{self, Preprocess};

#[derive(Debug, Parser)]
#[command(name = "pastiche", version, about = "Multi-style pastiche networks: train, stylize, blend and serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a new N-style network from a TOML run file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render an image in one style.
    Stylize(StylizeArgs),
    /// Render an image with a convex combination of styles.
    Blend(BlendArgs),
    /// Add a style to a trained network by fine-tuning only its scale/shift row.
    AddStyle(AddStyleArgs),
    /// Optimize pastiche pixels directly against the perceptual loss.
    PixelOptimize(PixelArgs),
    /// Print the loss report of a pastiche against a content and style image.
    Losses(LossesArgs),
    /// Print parameter counts and the style registry.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Render an interpolation sweep between two styles with per-frame style losses.
    Sweep(SweepArgs),
    /// Write one style's parameters to a standalone file.
    ExportStyle {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add or replace a style from a file written by export-style.
    ImportStyle {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        file: PathBuf,
        /// Defaults to overwriting --ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the blend HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ContentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Resize so the smaller side has this many pixels.
    #[arg(long)]
    pub resize: Option<usize>,
    /// Center-crop to a square of this size (after --resize).
    #[arg(long)]
    pub crop: Option<usize>,
}

impl ContentArgs {
    fn preprocess(&self) -> Preprocess {
        Preprocess { resize: self.resize, crop: self.crop }
    }

    fn load(&self) -> Result<pastiche_core::Tensor<f32>> {
        self.preprocess().load(&self.input)
    }
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub style: String,
    #[command(flatten)]
    pub content: ContentArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `name=w,name=w,...`, non-negative and summing to 1.
    #[arg(long)]
    pub weights: String,
    #[command(flatten)]
    pub content: ContentArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AddStyleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub style_image: PathBuf,
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub steps: usize,
    /// Content images to fine-tune on.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_c: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = AdamConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().log_every)]
    pub log_every: usize,
    #[arg(long, default_value_t = TrainConfig::default().eval_batches)]
    pub eval_batches: usize,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Defaults to overwriting --ckpt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PixelArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// Style image; resized so its smaller side matches the content's.
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Take the feature extractor from this checkpoint instead of the default one.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_c: f64,
    /// `content` or `random:<seed>`.
    #[arg(long, default_value = "content")]
    pub init: String,
    #[arg(long, default_value_t = PIXEL_STEP_SIZE)]
    pub step_size: f64,
    /// Write the per-step loss trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub resize: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    /// Style image; resized like training style images.
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub pastiche: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_c: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[command(flatten)]
    pub content: ContentArgs,
    /// Directory for frame PNGs and sweep.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Style image for a style, overriding the registry: `name=path`.
    #[arg(long = "style", value_parser = prep::parse_style_override)]
    pub styles: Vec<(String, PathBuf)>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Style image for a style, overriding the registry: `name=path`.
    #[arg(long = "style", value_parser = prep::parse_style_override)]
    pub styles: Vec<(String, PathBuf)>,
}

/// Runs every command except `serve`, returning what to print on stdout.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Train { config } => train_command(&config),
        Command::Stylize(args) => stylize(args),
        Command::Blend(args) => blend(args),
        Command::AddStyle(args) => add_style(args),
        Command::PixelOptimize(args) => pixel_optimize(args),
        Command::Losses(args) => losses(args),
        Command::Inspect { ckpt } => inspect(&Checkpoint::load(ckpt)?),
        Command::Sweep(args) => sweep(args),
        Command::ExportStyle { ckpt, name, out } => {
            let style = Checkpoint::load(ckpt)?.export_style(&name)?;
            style.save(&out)?;
            Ok(format!("exported `{name}` ({} parameters) to {}\n", style.vector.parameter_count(), out.display()))
        }
        Command::ImportStyle { ckpt, file, out } => {
            let mut model = Checkpoint::load(&ckpt)?;
            let style = StyleFile::load(&file)?;
            let replaced = model.model.bank().contains(&style.name);
            model.import_style(&style)?;
            let out = out.unwrap_or(ckpt);
            model.save(&out)?;
            let verb = if replaced { "replaced" } else { "added" };
            Ok(format!("{verb} `{}` in {}\n", style.name, out.display()))
        }
        Command::Serve(_) => Err(CliError::Usage("serve runs on the async runtime".into())),
    }
}

fn train_command(path: &Path) -> Result<String> {
    let file = TrainFile::load(path)?;
    let fx = FeatureExtractor::new(file.extractor.clone())?;
    let mut targets = StyleTargets::new();
    let mut registry = Vec::new();
    for style in &file.styles {
        let image = imageio::load_image(&style.image)?;
        targets.insert(style.name.clone(), prep::style_target(&fx, &image, file.image_size)?);
        registry.push(StyleEntry {
            name: style.name.clone(),
            source: Some(style.image.display().to_string()),
            lambda_s: Some(style.lambda_s),
        });
    }
    let corpus = Corpus::load_dir(&file.corpus, file.image_size)?;
    let mut model = ModelWeights::build(file.network.clone(), &file.style_names(), file.seed)?;
    let curve = train(&mut model, &fx, &corpus, &targets, &file.train_config())?;
    if let Some(path) = &file.curve {
        curve.write_csv(path)?;
    }
    let mut ckpt = Checkpoint::new(model, file.extractor.clone());
    ckpt.registry = registry.into_iter().map(|e| (e.name.clone(), e)).collect();
    ckpt.save(&file.output)?;
    let (first, last) = (curve.first().expect("curve has step 0"), curve.last().expect("curve has a final step"));
    Ok(format!(
        "trained {} styles for {} steps: total {:.6} -> {:.6}\nwrote {}\n",
        file.styles.len(),
        file.steps,
        first.total,
        last.total,
        file.output.display()
    ))
}

fn stylize(args: StylizeArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let content = args.content.load()?;
    let vector = ckpt.model.bank().select(&args.style)?;
    let pastiche = ckpt.model.stylize(&content, &vector)?;
    imageio::save_image(&pastiche, &args.out)?;
    Ok(format!("wrote {}\n", args.out.display()))
}

fn blend(args: BlendArgs) -> Result<String> {
    let weights: BlendWeights = args.weights.parse()?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let content = args.content.load()?;
    let vector = ckpt.model.bank().blend(&weights)?;
    let pastiche = ckpt.model.stylize(&content, &vector)?;
    imageio::save_image(&pastiche, &args.out)?;
    Ok(format!("weights {weights}\nwrote {}\n", args.out.display()))
}

fn add_style(args: AddStyleArgs) -> Result<String> {
    let mut ckpt = Checkpoint::load(&args.ckpt)?;
    let fx = ckpt.feature_extractor()?;
    let size = ckpt.model.config().input_size;
    let image = imageio::load_image(&args.style_image)?;
    let mut targets = StyleTargets::new();
    targets.insert(args.name.clone(), prep::style_target(&fx, &image, size)?);
    let corpus = Corpus::load_dir(&args.corpus, size)?;

    ckpt.model.bank_mut().add_style(&args.name, args.seed)?;
    let config = TrainConfig {
        steps: args.steps,
        batch_size: args.batch_size,
        adam: AdamConfig { learning_rate: args.learning_rate, ..AdamConfig::default() },
        weights: LossWeights::new(args.lambda_c).with_style(&args.name, args.lambda_s),
        image_size: size,
        seed: args.seed,
        log_every: args.log_every,
        eval_batches: args.eval_batches,
        mode: TrainMode::Finetune(args.name.clone()),
    };
    let curve = finetune_style(&mut ckpt.model, &fx, &corpus, &targets, &config)?;
    if let Some(path) = &args.curve {
        curve.write_csv(path)?;
    }
    ckpt.registry.insert(
        args.name.clone(),
        StyleEntry {
            name: args.name.clone(),
            source: Some(args.style_image.display().to_string()),
            lambda_s: Some(args.lambda_s),
        },
    );
    let out = args.out.unwrap_or(args.ckpt);
    ckpt.save(&out)?;
    let (first, last) = (curve.first().expect("curve has step 0"), curve.last().expect("curve has a final step"));
    Ok(format!(
        "added `{}` ({} parameters) in {} steps: total {:.6} -> {:.6}\nwrote {}\n",
        args.name,
        ckpt.model.bank().per_style_parameters(),
        args.steps,
        first.total,
        last.total,
        out.display()
    ))
}

fn parse_init(s: &str) -> Result<PixelInit<f32>> {
    match s.split_once(':') {
        None if s == "content" => Ok(PixelInit::Content),
        Some(("random", seed)) => seed
            .parse()
            .map(PixelInit::Random)
            .map_err(|_| CliError::Usage(format!("bad random seed `{seed}`"))),
        _ => Err(CliError::Usage(format!("--init must be `content` or `random:<seed>`, got `{s}`"))),
    }
}

fn pixel_optimize(args: PixelArgs) -> Result<String> {
    let fx = match &args.ckpt {
        Some(path) => Checkpoint::load(path)?.feature_extractor()?,
        None => FeatureExtractor::new(ExtractorConfig::default())?,
    };
    let content = Preprocess { resize: args.resize, crop: args.crop }.load(&args.content)?;
    let side = content.shape().h.min(content.shape().w);
    let style = imageio::resize_smaller_side(&imageio::load_image(&args.style)?, side)?;
    let target = fx.style_target(&style)?;
    let options = PixelOptions {
        lambda_s: args.lambda_s,
        lambda_c: args.lambda_c,
        init: parse_init(&args.init)?,
        steps: args.steps,
        step_size: args.step_size,
    };
    let result = optimize_pixels(&fx, &content, &target, &options)?;
    imageio::save_image(&result.pastiche, &args.out)?;
    if let Some(path) = &args.trace {
        let mut csv = String::from("step,content_loss,style_loss,total\n");
        for (step, r) in result.trace.iter().enumerate() {
            writeln!(csv, "{step},{:e},{:e},{:e}", r.content_loss, r.style_loss, r.total).expect("write to string");
        }
        std::fs::write(path, csv).map_err(|e| CliError::io(path, e))?;
    }
    Ok(format!(
        "total {:.6} -> {:.6} over {} steps\nwrote {}\n",
        result.initial().total,
        result.last().total,
        args.steps,
        args.out.display()
    ))
}

fn losses(args: LossesArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let fx = ckpt.feature_extractor()?;
    let style = imageio::load_image(&args.style)?;
    let target = prep::style_target(&fx, &style, ckpt.model.config().input_size)?;
    let content = imageio::load_image(&args.content)?;
    let pastiche = imageio::load_image(&args.pastiche)?;
    let name = args.style.display().to_string();
    let report = fx.evaluate(&pastiche, &content, &target, &name, args.lambda_s, args.lambda_c)?;
    Ok(format!("{report}\n"))
}

fn inspect(ckpt: &Checkpoint) -> Result<String> {
    let count = ckpt.model.count_parameters();
    let config = ckpt.model.config();
    let mut out = format!(
        "shared={} per_style={} fraction={:.2}%\n",
        count.shared,
        count.per_style,
        100.0 * count.fraction
    );
    writeln!(
        out,
        "network base_width={} residual_blocks={} input_size={} styles={} style_total={}",
        config.base_width,
        config.residual_blocks,
        config.input_size,
        count.styles,
        count.style_total
    )
    .expect("write to string");
    for name in ckpt.model.style_names() {
        let entry = ckpt.entry(name);
        write!(out, "style={name} parameters={}", count.per_style).expect("write to string");
        if let Some(l) = entry.lambda_s {
            write!(out, " lambda_s={l}").expect("write to string");
        }
        if let Some(s) = entry.source {
            write!(out, " source={s}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Sweep records as CSV.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut csv = String::from("alpha,style_loss_a,style_loss_b\n");
    for r in records {
        writeln!(csv, "{},{:e},{:e}", r.alpha, r.style_loss_a, r.style_loss_b).expect("write to string");
    }
    csv
}

fn sweep(args: SweepArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let fx = ckpt.feature_extractor()?;
    let sources = prep::style_sources(&ckpt, &args.styles)?;
    let target_a = prep::target_for(&ckpt, &fx, &sources, &args.a)?;
    let target_b = prep::target_for(&ckpt, &fx, &sources, &args.b)?;
    let content = args.content.load()?;
    let frames = interpolation_sweep(&ckpt.model, &fx, &content, (&args.a, &target_a), (&args.b, &target_b), args.steps)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut out = String::new();
    for (i, frame) in frames.iter().enumerate() {
        imageio::save_image(&frame.pastiche, args.out_dir.join(format!("frame_{i:03}.png")))?;
        writeln!(
            out,
            "alpha={} style_loss_a={:e} style_loss_b={:e}",
            frame.alpha, frame.style_loss_a, frame.style_loss_b
        )
        .expect("write to string");
    }
    let records: Vec<SweepRecord> = frames.iter().map(|f| f.record()).collect();
    let csv_path = args.out_dir.join("sweep.csv");
    std::fs::write(&csv_path, sweep_csv(&records)).map_err(|e| CliError::io(&csv_path, e))?;
    let (mono_a, mono_b) = is_monotone(&records);
    writeln!(out, "monotone_a={mono_a} monotone_b={mono_b}").expect("write to string");
    Ok(out)
}
