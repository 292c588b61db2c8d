//! Command-line surface: train, eval, predict, and synthetic-data
//! generation. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 checkpoint error, 1 anything else.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, read_meta};
use crate::config::RunConfig;
use crate::data::synth::{synthesize_scene, SyntheticSceneSpec};
use crate::data::{load_dataset, write_dataset, ImageBuf, RgbtSample, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{bilinear_resize, ParamStore};
use crate::train::{image_to_tensor, predict_sample, tensor_to_image};

/// Environment variable overriding every `--out` directory argument.
pub const OUT_ROOT_ENV: &str = "RTSOD_OUT_ROOT";

#[derive(Parser)]
#[command(name = "rtsod", about = "RGB-thermal salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. --set epochs=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints and a training log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset root with train/ (and optionally test/) splits.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: per-image maps, metric report, P-R curve.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Predict a saliency map for one rgb/thermal pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        thermal: PathBuf,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic train/test dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training samples to generate.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Test samples to generate.
        #[arg(long, default_value_t = 4)]
        test_count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene brightness in [0,1].
        #[arg(long, default_value_t = 0.8)]
        brightness: f64,
        /// Object-vs-background thermal contrast.
        #[arg(long, default_value_t = 0.5)]
        contrast: f64,
        /// Add a hot non-salient decoy region.
        #[arg(long)]
        decoy: bool,
    },
}

fn out_dir(requested: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => {
            let tail = requested.file_name().unwrap_or(requested.as_os_str());
            PathBuf::from(root).join(tail)
        }
        None => requested.to_path_buf(),
    }
}

fn build_model(config: &RunConfig) -> Result<(ParamStore, Model)> {
    let store = ParamStore::new(config.seed, Device::Cpu);
    let model = Model::new(&store, &config.model_config())?;
    Ok((store, model))
}

fn cmd_train(
    config: &RunConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let out = out_dir(out);
    let train_samples = load_dataset(data, Split::Train)?;
    if train_samples.is_empty() {
        return Err(Error::Data(format!("no training samples under {}", data.display())));
    }
    let val_samples = load_dataset(data, Split::Test).unwrap_or_default();
    let (store, model) = build_model(config)?;
    let summary = crate::train::train(
        config,
        &store,
        &model,
        &train_samples,
        &val_samples,
        Some(&out),
        resume,
    )?;
    println!(
        "trained {} epochs, {} steps, final loss {:.5}",
        summary.epochs_run,
        summary.step_losses.len(),
        summary.step_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", out.join("checkpoint").display());
    Ok(())
}

fn cmd_eval(
    config_args: &ConfigArgs,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    split: Split,
) -> Result<()> {
    let out = out_dir(out);
    let meta = read_meta(checkpoint)?;
    // the checkpoint's own config is the baseline; CLI flags may override
    let mut config = RunConfig::from_str_kv(&meta.config)?;
    let trained_toggles = config.toggles;
    if let Some(path) = &config_args.config {
        config = RunConfig::from_file(path)?;
    }
    for kv in &config_args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;

    let samples = load_dataset(data, split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("no samples under {}", data.display())));
    }

    let (store, model) = build_model(&config)?;
    load_checkpoint(checkpoint, &store, None)?;

    let maps_dir = out.join("maps");
    std::fs::create_dir_all(&maps_dir)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in &samples {
        let pred = predict_sample(&model, s, config.input_size, &Device::Cpu)?;
        pred.to_gray_image().save(maps_dir.join(format!("{}.png", s.id)))?;
        preds.push(pred);
        gts.push(s.gt.clone());
    }
    let report = crate::metrics::evaluate_dataset(&preds, &gts)?;
    let report_path = out.join("report.txt");
    report.write_report(&report_path)?;
    let current = format!("{:?}", config.toggles);
    let trained = format!("{trained_toggles:?}");
    if current != trained {
        let mut f = std::fs::OpenOptions::new().append(true).open(&report_path)?;
        writeln!(f, "toggle_mismatch = true")?;
        writeln!(f, "trained_toggles = {trained}")?;
        writeln!(f, "eval_toggles = {current}")?;
    }
    report.write_pr_csv(&out.join("pr_curve.csv"))?;
    println!(
        "images {} | mae {:.4} | max_f {:.4} | s {:.4} | e {:.4}",
        report.images, report.mae, report.max_f, report.s_measure, report.e_measure
    );
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_predict(checkpoint: &Path, rgb: &Path, thermal: &Path, out: &Path) -> Result<()> {
    let meta = read_meta(checkpoint)?;
    let config = RunConfig::from_str_kv(&meta.config)?;
    let (store, model) = build_model(&config)?;
    load_checkpoint(checkpoint, &store, None)?;

    let open = |p: &Path| -> Result<image::DynamicImage> {
        image::open(p).map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))
    };
    let rgb_img = ImageBuf::from_dynamic_rgb(&open(rgb)?);
    let thermal_img = ImageBuf::from_dynamic_rgb(&open(thermal)?);
    if (rgb_img.h, rgb_img.w) != (thermal_img.h, thermal_img.w) {
        return Err(Error::Data(format!(
            "rgb is {}x{} but thermal is {}x{}",
            rgb_img.h, rgb_img.w, thermal_img.h, thermal_img.w
        )));
    }
    let (orig_h, orig_w) = (rgb_img.h, rgb_img.w);

    let device = Device::Cpu;
    let resize = |img: &ImageBuf| -> Result<candle_core::Tensor> {
        let t = image_to_tensor(img, &device)?;
        bilinear_resize(&t, config.input_size, config.input_size)
    };
    let out_t = model.forward(&resize(&rgb_img)?, &resize(&thermal_img)?, false)?;
    let alpha = out_t.alpha.to_vec1::<f32>()?[0];
    let map = tensor_to_image(&bilinear_resize(&out_t.saliency, orig_h, orig_w)?)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    map.to_gray_image().save(out)?;
    println!("alpha = {alpha:.6}");
    println!("saliency map: {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    count: usize,
    test_count: usize,
    size: usize,
    seed: u64,
    brightness: f64,
    contrast: f64,
    decoy: bool,
) -> Result<()> {
    let out = out_dir(out);
    let gen = |n: usize, seed0: u64| -> Result<Vec<RgbtSample>> {
        (0..n)
            .map(|i| {
                synthesize_scene(&SyntheticSceneSpec {
                    canvas_size: size,
                    n_objects: 1 + i % 3,
                    brightness,
                    thermal_contrast: contrast,
                    decoy_heat: decoy,
                    seed: seed0 + i as u64,
                })
            })
            .collect()
    };
    let train = gen(count, seed)?;
    let test = gen(test_count, seed + count as u64)?;
    write_dataset(&train, &out, Split::Train)?;
    write_dataset(&test, &out, Split::Test)?;
    println!("wrote {count} train and {test_count} test samples to {}", out.display());
    Ok(())
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { config, data, out, resume } => {
            cmd_train(&config.build()?, data, out, resume.as_deref())
        }
        Command::Eval { config, checkpoint, data, out, split } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Config(format!("unknown split {other} (train/test)")))
                }
            };
            cmd_eval(config, checkpoint, data, out, split)
        }
        Command::Predict { checkpoint, rgb, thermal, out } => {
            cmd_predict(checkpoint, rgb, thermal, out)
        }
        Command::Synth { out, count, test_count, size, seed, brightness, contrast, decoy } => {
            cmd_synth(out, *count, *test_count, *size, *seed, *brightness, *contrast, *decoy)
        }
    }
}
