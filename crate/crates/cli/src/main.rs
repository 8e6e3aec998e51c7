//! `hazenet`: synthesize datasets, train, dehaze images and evaluate checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hazenet_core::config::RESOLVED_CONFIG_FILE;
use hazenet_core::data::{load_dataset, read_rgb, write_rgb, LoadOptions, Split};
use hazenet_core::eval::{evaluate, STAGES};
use hazenet_core::train::{train, RunOptions, LATEST_CHECKPOINT};
use hazenet_core::{Checkpoint, DatasetManifest, Dehazer, Error, ExperimentConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "hazenet", version, about = "Single-image dehazing by progressive residual learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train/val/test hazy datasets described by `data`.
    Synthesize(SynthesizeArgs),
    /// Train a model on `<data.root>/train`, validating on `<data.root>/val`.
    Train(TrainArgs),
    /// Dehaze one PNG or every PNG of a directory; writes all three stage outputs.
    Dehaze(DehazeArgs),
    /// Evaluate a checkpoint on a dataset and write results.csv.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON experiment configuration; defaults apply to absent keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset root, overriding `data.root`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Run directory for logs and checkpoints, overriding `eval.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Continue from `--checkpoint`, or from the run directory's latest checkpoint.
    #[arg(long)]
    resume: bool,
    /// Checkpoint to resume from.
    #[arg(long, value_name = "PATH", requires = "resume")]
    checkpoint: Option<PathBuf>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct DehazeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// A PNG image or a directory of PNG images.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dataset directory or manifest file; defaults to `<data.root>/test`.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Output directory, overriding `eval.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn synthesize(args: &SynthesizeArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    if let Some(root) = &args.out {
        cfg.data.root = root.clone();
    }
    let sets = cfg.data.synthesize(&cfg.model.constants())?;
    cfg.write_resolved(&cfg.data.root)?;
    for ds in sets {
        println!("{}: {} samples", ds.root.display(), ds.count());
    }
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.eval.out.clone());
    let train_set = load_dataset(&DatasetManifest::open(&cfg.data.split_dir(Split::Train))?, &LoadOptions::default())?;
    let val_dir = cfg.data.split_dir(Split::Val);
    let val_set = if val_dir.join(hazenet_core::data::MANIFEST_FILE).is_file() {
        load_dataset(&DatasetManifest::open(&val_dir)?, &LoadOptions::default())?
    } else {
        log::warn!("no validation split at {}", val_dir.display());
        Vec::new()
    };
    let resume = args
        .resume
        .then(|| args.checkpoint.clone().unwrap_or_else(|| out.join(LATEST_CHECKPOINT)));
    cfg.write_resolved(&out)?;
    let opts = RunOptions {
        out_dir: out.clone(),
        resume,
        strict: args.strict,
        config_snapshot: cfg.to_value(),
        stop_after: None,
    };
    let summary = train(&cfg.model, &cfg.loss, &cfg.train, &train_set, &val_set, &opts)?;
    match summary.reports.last() {
        Some((step, r)) => println!("step {step}: total loss {:.6}", r.total()),
        None => println!("nothing to do: already at step {}", summary.trainer.steps_done()),
    }
    println!("checkpoint: {}", summary.last_checkpoint.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, Dehazer)> {
    let ckpt = Checkpoint::load(path)?;
    let model = Dehazer::from_checkpoint(&ckpt)?;
    Ok((ckpt, model))
}

/// The checkpoint's stored configuration, echoed next to outputs.
fn write_checkpoint_config(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(&ckpt.config)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        if !input.is_file() {
            return Err(Error::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", input.display())));
    }
    Ok(files)
}

fn dehaze(args: &DehazeArgs) -> Result<()> {
    let (ckpt, model) = load_model(&args.checkpoint)?;
    let inputs = png_inputs(&args.input)?;
    for path in &inputs {
        let image = read_rgb(path)?;
        let out = model.infer_any_size(&image)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let images = [out.trace.last().0.tensor(), out.stages.j_prelim.tensor(), out.stages.j_refine.tensor()];
        for (stage, t) in STAGES.iter().zip(images) {
            write_rgb(&args.out.join(stage).join(format!("{stem}.png")), t, 0)?;
        }
        log::info!("dehazed {}", path.display());
    }
    write_checkpoint_config(&ckpt, &args.out)?;
    println!("{} image(s) written under {}", inputs.len(), args.out.display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let (ckpt, model) = load_model(&args.checkpoint)?;
    let manifest = args.manifest.clone().unwrap_or_else(|| cfg.data.split_dir(Split::Test));
    let out = args.out.clone().unwrap_or_else(|| cfg.eval.out.clone());
    let samples = load_dataset(&DatasetManifest::open(&manifest)?, &LoadOptions::default())?;
    let summary = evaluate(&model, &samples, Some(&out))?;
    write_checkpoint_config(&ckpt, &out)?;
    let m = &summary.mean;
    for (k, (p, s)) in m.iterations.iter().enumerate() {
        println!("iteration {}: PSNR {p:.2} dB, SSIM {s:.4}", k + 1);
    }
    for (stage, (p, s)) in STAGES.iter().zip([m.free, m.prelim, m.refine]) {
        println!("{stage}: PSNR {p:.2} dB, SSIM {s:.4}");
    }
    println!("results: {}", out.join("results.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synthesize(a) => synthesize(a),
        Command::Train(a) => train_cmd(a),
        Command::Dehaze(a) => dehaze(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
