//! End-to-end training: batch sampling, the alternating discriminator /
//! generator update, checkpointing, loss logging and gradient verification.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::check::max_relative_error;
use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::haze_physics::{ops, PhysicsConstants};
use crate::model::{derive_seed, Dehazer, ModelConfig};
use crate::model_free::DOWNSAMPLE;
use crate::nn::{Bound, ParamStore};
use crate::objectives::{
    disc_loss_graph, gen_loss_graph, loss_u_graph, loss_v_graph, perceptual_loss_graph, pixel_loss_graph,
    total_loss_graph, Adversary, Discriminator, LossReport, LossWeights, PixelNorm, RandomConvExtractor,
};
use crate::optim::{Adam, AdamConfig};
use crate::physics_dehazer::StageVars;
use crate::tensor::Tensor;

const DISC_PREFIX: &str = "disc/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Side of the square random crops.
    pub patch_size: usize,
    pub steps: u64,
    pub checkpoint_interval: u64,
    pub seed: u64,
    /// Validation samples scored at each checkpoint; 0 scores all of them.
    pub validation_samples: usize,
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 4,
            patch_size: 64,
            steps: 20_000,
            checkpoint_interval: 1_000,
            seed: 0,
            validation_samples: 16,
            perceptual_seed: RandomConvExtractor::<f32>::DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.steps < 1 || self.batch_size < 1 || self.checkpoint_interval < 1 {
            return Err(Error::Config(
                "train.steps, train.batch_size and train.checkpoint_interval must be at least 1".into(),
            ));
        }
        if self.patch_size == 0 || self.patch_size % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "train.patch_size must be a positive multiple of {DOWNSAMPLE}, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Stacked training tensors for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub transmission: Option<Tensor<f32>>,
}

/// Draws the batch for a given step from a per-step random stream, so any
/// step's batch can be reproduced without replaying earlier steps.
pub struct BatchSampler<'a> {
    samples: &'a [Sample],
    batch_size: usize,
    patch: usize,
    seed: u64,
    with_transmission: bool,
}

impl<'a> BatchSampler<'a> {
    pub fn new(samples: &'a [Sample], batch_size: usize, patch: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.hazy.height() < patch || s.hazy.width() < patch) {
            return Err(Error::InvalidArgument(format!(
                "sample `{}` ({}×{}) is smaller than the {patch}×{patch} training patch",
                s.id,
                s.hazy.height(),
                s.hazy.width()
            )));
        }
        Ok(Self {
            samples,
            batch_size,
            patch,
            seed: derive_seed(seed, 7),
            with_transmission: samples.iter().all(|s| s.transmission.is_some()),
        })
    }

    pub fn batch(&self, step: u64) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let p = self.patch;
        let (mut hazy, mut clean, mut trans) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.batch_size {
            let s = &self.samples[rng.random_range(0..self.samples.len())];
            let y0 = rng.random_range(0..=s.hazy.height() - p);
            let x0 = rng.random_range(0..=s.hazy.width() - p);
            let flip = rng.random_bool(0.5);
            let take = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
                let c = t.crop(y0, x0, p, p)?;
                Ok(if flip { c.flip_horizontal() } else { c })
            };
            hazy.push(take(s.hazy.tensor())?);
            clean.push(take(s.clean.tensor())?);
            if self.with_transmission {
                let t = s.transmission.as_ref().expect("checked at construction");
                trans.push(take(t.tensor())?);
            }
        }
        let stack = |v: &[Tensor<f32>]| Tensor::stack(&v.iter().collect::<Vec<_>>());
        Ok(Batch {
            hazy: stack(&hazy)?,
            clean: stack(&clean)?,
            transmission: if self.with_transmission { Some(stack(&trans)?) } else { None },
        })
    }
}

/// Model, discriminator and optimizer state of a training run.
pub struct Trainer {
    model: Dehazer<f32>,
    disc: Discriminator<f32>,
    extractor: RandomConvExtractor<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    loss: LossWeights,
    train: TrainConfig,
    step: u64,
}

impl Trainer {
    pub fn new(model: &ModelConfig, loss: &LossWeights, train: &TrainConfig) -> Result<Self> {
        loss.validate()?;
        train.validate()?;
        let dehazer = Dehazer::new(model, train.seed)?;
        let disc = Discriminator::new(derive_seed(train.seed, 3));
        log::info!("dehazer has {} trainable parameters", dehazer.num_parameters());
        Ok(Self {
            opt_g: Adam::new(train.adam(), &dehazer.param_groups()),
            opt_d: Adam::new(train.adam(), &[disc.params()]),
            model: dehazer,
            disc,
            extractor: RandomConvExtractor::new(train.perceptual_seed),
            loss: loss.clone(),
            train: train.clone(),
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn restore(ckpt: &Checkpoint, model: &ModelConfig, loss: &LossWeights, train: &TrainConfig) -> Result<Self> {
        let mut t = Self::new(model, loss, train)?;
        if ckpt.seed != train.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {} but the configuration asks for {}",
                ckpt.seed, train.seed
            )));
        }
        t.model.read_arrays(ckpt)?;
        let names = t.disc.params().names().to_vec();
        for name in names {
            let key = format!("{DISC_PREFIX}{name}");
            let v = ckpt
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{key}`")))?;
            t.disc.params_mut().assign(&name, v.clone())?;
        }
        let moments = |tag: &str| -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
            let m = ckpt.group(&format!("{tag}/m/")).map(|(_, t)| t.clone()).collect();
            let v = ckpt.group(&format!("{tag}/v/")).map(|(_, t)| t.clone()).collect();
            (m, v)
        };
        let (m, v) = moments("opt_g");
        t.opt_g = Adam::restore(train.adam(), ckpt.counter("opt_g_steps")?, m, v, &t.model.param_groups())?;
        let (m, v) = moments("opt_d");
        t.opt_d = Adam::restore(train.adam(), ckpt.counter("opt_d_steps")?, m, v, &[t.disc.params()])?;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Dehazer<f32> {
        &self.model
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.disc
    }

    pub fn loss_weights(&self) -> &LossWeights {
        &self.loss
    }

    pub fn set_loss_weights(&mut self, loss: &LossWeights) -> Result<()> {
        loss.validate()?;
        self.loss = loss.clone();
        Ok(())
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        let mut c = Checkpoint::new(self.step, self.train.seed, config);
        self.model.write_arrays(&mut c);
        for (name, t) in self.disc.params().iter() {
            c.push(format!("{DISC_PREFIX}{name}"), t.clone());
        }
        for (tag, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            let (m, v) = opt.moments();
            for (i, t) in m.iter().enumerate() {
                c.push(format!("{tag}/m/{i:04}"), t.clone());
            }
            for (i, t) in v.iter().enumerate() {
                c.push(format!("{tag}/v/{i:04}"), t.clone());
            }
            c.counters.insert(format!("{tag}_steps"), opt.steps_taken());
        }
        c
    }

    /// One optimisation step: the discriminator update (when the adversarial
    /// term is active) followed by the generator update.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        let step = self.step + 1;
        let g = Graph::new();
        let image = g.constant(batch.hazy.clone());
        let clean = g.constant(batch.clean.clone());
        let t_gt = batch.transmission.as_ref().map(|t| g.constant(t.clone()));
        let [free, physics] = self.model.param_groups();
        let pf = free.bind(&g);
        let pp = physics.bind(&g);
        let fwd = self.model.forward_graph(&g, &pf, &pp, image);
        let iterates = fwd.iterates();

        let mut disc_value = None;
        let frozen: Bound;
        let adversary = if self.loss.uses_adversary() {
            let pd = self.disc.params().bind(&g);
            let fakes: Vec<Var> = iterates.iter().map(|&(j, _)| j).collect();
            let dl = disc_loss_graph(&g, &self.disc, &pd, clean, &fakes);
            let v = g.item(dl) as f64;
            if !v.is_finite() {
                return Err(Error::LossDiverged {
                    step,
                    term: "disc_loss".into(),
                    value: v,
                });
            }
            let grads = g.backward(dl);
            self.opt_d.update(&mut [(self.disc.params_mut(), &pd)], &grads);
            disc_value = Some(v);
            frozen = self.disc.params().bind_frozen(&g);
            Some(Adversary {
                discriminator: &self.disc,
                bound: &frozen,
            })
        } else {
            None
        };

        let terms = total_loss_graph(
            &g,
            &iterates,
            &fwd.stages,
            image,
            clean,
            t_gt,
            &self.loss,
            &self.extractor,
            adversary.as_ref(),
        );
        let report = LossReport::from_graph(&g, &terms, disc_value);
        if let Some((term, value)) = report.first_non_finite() {
            return Err(Error::LossDiverged {
                step,
                term: term.to_string(),
                value,
            });
        }
        let grads = g.backward(terms.total);
        let (free, physics) = self.model.param_groups_mut();
        self.opt_g.update(&mut [(free, &pf), (physics, &pp)], &grads);
        self.step = step;
        Ok(report)
    }
}

/// Where and how [`train`] runs.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Single-threaded execution; batches are otherwise prepared on a helper thread.
    pub strict: bool,
    /// Resolved configuration stored in every checkpoint.
    pub config_snapshot: serde_json::Value,
    /// Stop after this step even if `train.steps` is larger.
    pub stop_after: Option<u64>,
}

pub struct RunSummary {
    pub trainer: Trainer,
    pub reports: Vec<(u64, LossReport)>,
    pub last_checkpoint: PathBuf,
}

pub const LOSS_LOG: &str = "loss_log.csv";
pub const VALIDATION_LOG: &str = "validation.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:07}.ckpt"))
}

/// Keeps the header and the rows up to `step` of an existing CSV log.
fn truncate_log(path: &Path, step: u64) -> Result<Vec<String>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        match row_step {
            Some(s) if s <= step => kept.push(line),
            None if i == 0 => kept.push(line),
            _ => {}
        }
    }
    Ok(kept)
}

fn open_log(path: &Path, keep: &[String]) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for l in keep {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Mean PSNR of the model-free and refined outputs on up to `limit` samples.
pub fn validation_psnr(model: &Dehazer<f32>, samples: &[Sample], limit: usize) -> Result<(f64, f64)> {
    let n = if limit == 0 { samples.len() } else { limit.min(samples.len()) };
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut free, mut refine) = (0.0, 0.0);
    for s in &samples[..n] {
        let out = model.infer_any_size(&s.hazy)?;
        free += psnr(out.trace.last().0.tensor(), s.clean.tensor())?;
        refine += psnr(out.stages.j_refine.tensor(), s.clean.tensor())?;
    }
    Ok((free / n as f64, refine / n as f64))
}

/// Trains from scratch or from `opts.resume`, writing the loss log,
/// validation log and checkpoints under `opts.out_dir`.
pub fn train(
    model: &ModelConfig,
    loss: &LossWeights,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    opts: &RunOptions,
) -> Result<RunSummary> {
    let sampler = BatchSampler::new(train_set, cfg.batch_size, cfg.patch_size, cfg.seed)?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            log::info!("resuming from {} at step {}", path.display(), ckpt.step);
            Trainer::restore(&ckpt, model, loss, cfg)?
        }
        None => Trainer::new(model, loss, cfg)?,
    };
    let start = trainer.steps_done();
    let end = opts.stop_after.map_or(cfg.steps, |s| s.min(cfg.steps));
    let log_path = opts.out_dir.join(LOSS_LOG);
    let val_path = opts.out_dir.join(VALIDATION_LOG);
    let (kept, kept_val) = if opts.resume.is_some() {
        (truncate_log(&log_path, start)?, truncate_log(&val_path, start)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut header_written = !kept.is_empty();
    let mut log = open_log(&log_path, &kept)?;
    let mut val_log = open_log(&val_path, &kept_val)?;
    if kept_val.is_empty() {
        writeln!(val_log, "step,psnr_free,psnr_refine").map_err(|e| Error::io(&val_path, e))?;
    }
    let mut reports = Vec::new();
    let mut last_checkpoint = opts.resume.clone().unwrap_or_else(|| opts.out_dir.join(LATEST_CHECKPOINT));

    let mut on_step = |trainer: &mut Trainer, batch: Result<Batch>| -> Result<()> {
        let report = trainer.step(&batch?)?;
        let step = trainer.steps_done();
        if !header_written {
            writeln!(log, "{}", report.csv_header()).map_err(|e| Error::io(&log_path, e))?;
            header_written = true;
        }
        writeln!(log, "{}", report.csv_row(step)).map_err(|e| Error::io(&log_path, e))?;
        if step % 100 == 0 || step == 1 {
            log::info!("step {step}: total loss {:.5}", report.total());
        }
        reports.push((step, report));
        if step % cfg.checkpoint_interval == 0 || step == end {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            let ckpt = trainer.checkpoint(opts.config_snapshot.clone());
            let path = checkpoint_path(&opts.out_dir, step);
            ckpt.save(&path)?;
            ckpt.save(&opts.out_dir.join(LATEST_CHECKPOINT))?;
            last_checkpoint = path;
            if !val_set.is_empty() {
                let (free, refine) = validation_psnr(trainer.model(), val_set, cfg.validation_samples)?;
                log::info!("step {step}: validation PSNR model-free {free:.2} dB, refined {refine:.2} dB");
                writeln!(val_log, "{step},{free},{refine}").map_err(|e| Error::io(&val_path, e))?;
                val_log.flush().map_err(|e| Error::io(&val_path, e))?;
            }
        }
        Ok(())
    };

    if opts.strict {
        for step in start + 1..=end {
            on_step(&mut trainer, sampler.batch(step))?;
        }
    } else {
        thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel(2);
            let sampler = &sampler;
            scope.spawn(move || {
                for step in start + 1..=end {
                    if tx.send(sampler.batch(step)).is_err() {
                        break;
                    }
                }
            });
            for batch in rx.iter() {
                on_step(&mut trainer, batch)?;
            }
            Ok(())
        })?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(RunSummary {
        trainer,
        reports,
        last_checkpoint,
    })
}

/// Seed of the fixed discriminator used by [`grad_check`].
pub const GRAD_CHECK_SEED: u64 = 17;

/// Scalar function checked by [`grad_check`] and the inputs it expects.
#[derive(Clone, Debug)]
pub enum LossSelector {
    /// `[x, y]`.
    Pixel(PixelNorm),
    /// `[x, y]`, default extractor.
    Perceptual,
    /// `[fake]`, fixed discriminator.
    AdversarialGenerator,
    /// `[real, discriminator parameters...]` with a fixed fake batch.
    AdversarialDiscriminator { fake: Tensor<f64> },
    /// `[I, J, Ĵ_1, R̂_1, ..., Ĵ_K, R̂_K]`.
    LossU(LossWeights),
    /// `[t̂, t̂_refine, Ĵ_prelim, Ĵ_refine, J]` plus `t` when `with_transmission`.
    LossV { norm: PixelNorm, with_transmission: bool },
    /// `[J, t, A, w]`, reduced as `mean(w · op)`.
    Synthesize,
    /// `[I, t, A, w]`.
    Invert,
    /// `[I, J, w]`.
    Residual,
    /// `[R, J, A, w]`.
    TransmissionFromResidual,
    /// `[depth, w]`.
    TransmissionFromDepth { beta: f64 },
}

impl LossSelector {
    pub fn name(&self) -> &'static str {
        match self {
            LossSelector::Pixel(PixelNorm::AbsoluteError) => "pixel_loss (absolute)",
            LossSelector::Pixel(PixelNorm::SquaredError) => "pixel_loss (squared)",
            LossSelector::Perceptual => "perceptual_loss",
            LossSelector::AdversarialGenerator => "adversarial gen_loss",
            LossSelector::AdversarialDiscriminator { .. } => "adversarial disc_loss",
            LossSelector::LossU(_) => "loss_u",
            LossSelector::LossV { .. } => "loss_v",
            LossSelector::Synthesize => "synthesize_haze",
            LossSelector::Invert => "invert_scattering",
            LossSelector::Residual => "residual",
            LossSelector::TransmissionFromResidual => "transmission_from_residual",
            LossSelector::TransmissionFromDepth { .. } => "transmission_from_depth",
        }
    }

    /// The discriminator used by the adversarial selectors.
    pub fn discriminator() -> Discriminator<f64> {
        Discriminator::new(GRAD_CHECK_SEED)
    }

    fn build(&self, g: &Graph<f64>, v: &[Var]) -> Var {
        let k = PhysicsConstants::default();
        let weighted = |x: Var, w: Var| g.mean(g.mul(x, w));
        match self {
            LossSelector::Pixel(norm) => pixel_loss_graph(g, v[0], v[1], *norm),
            LossSelector::Perceptual => {
                perceptual_loss_graph(g, &RandomConvExtractor::<f64>::default(), v[0], v[1])
            }
            LossSelector::AdversarialGenerator => {
                let d = Self::discriminator();
                let p = d.params().bind_frozen(g);
                gen_loss_graph(g, &d, &p, v[0])
            }
            LossSelector::AdversarialDiscriminator { fake } => {
                let d = Self::discriminator();
                let p = Bound::from_vars(v[1..].to_vec());
                disc_loss_graph(g, &d, &p, v[0], &[g.constant(fake.clone())])
            }
            LossSelector::LossU(w) => {
                let iterates: Vec<(Var, Var)> = v[2..].chunks(2).map(|c| (c[0], c[1])).collect();
                let ext = RandomConvExtractor::<f64>::default();
                let d = Self::discriminator();
                let p = d.params().bind_frozen(g);
                let adv = Adversary {
                    discriminator: &d,
                    bound: &p,
                };
                loss_u_graph(g, &iterates, v[0], v[1], w, &ext, w.uses_adversary().then_some(&adv)).0
            }
            LossSelector::LossV { norm, with_transmission } => {
                let stages = StageVars {
                    airlight: v[0],
                    t_hat: v[0],
                    t_refine: v[1],
                    j_prelim: v[2],
                    j_refine: v[3],
                };
                let t = with_transmission.then(|| v[5]);
                loss_v_graph(g, &stages, t, v[4], *norm).0
            }
            LossSelector::Synthesize => weighted(ops::synthesize(g, v[0], v[1], v[2]), v[3]),
            LossSelector::Invert => weighted(ops::invert(g, v[0], v[1], v[2]), v[3]),
            LossSelector::Residual => weighted(ops::residual(g, v[0], v[1]), v[2]),
            LossSelector::TransmissionFromResidual => {
                weighted(ops::transmission_from_residual(g, v[0], v[1], v[2], &k), v[3])
            }
            LossSelector::TransmissionFromDepth { beta } => {
                weighted(ops::transmission_from_depth(g, v[0], *beta, &k), v[1])
            }
        }
    }

    fn arity(&self) -> Option<usize> {
        Some(match self {
            LossSelector::Pixel(_) | LossSelector::Perceptual => 2,
            LossSelector::AdversarialGenerator => 1,
            LossSelector::AdversarialDiscriminator { .. } => 1 + Self::discriminator().params().len(),
            LossSelector::LossU(_) => return None,
            LossSelector::LossV { with_transmission, .. } => 5 + *with_transmission as usize,
            LossSelector::Synthesize | LossSelector::Invert | LossSelector::TransmissionFromResidual => 4,
            LossSelector::Residual => 3,
            LossSelector::TransmissionFromDepth { .. } => 2,
        })
    }
}

/// Largest inputs [`grad_check`] accepts, in scalars.
pub const GRAD_CHECK_MAX_INPUTS: usize = 10_000;

/// Max over coordinates of the relative error between the analytic gradient
/// and central differences with step `eps`.
pub fn grad_check(selector: &LossSelector, point: &[Tensor<f64>], eps: f64) -> Result<f64> {
    let arity_ok = match selector.arity() {
        Some(n) => point.len() == n,
        None => point.len() >= 4 && point.len() % 2 == 0,
    };
    if !arity_ok {
        return Err(Error::InvalidArgument(format!(
            "{} got {} inputs",
            selector.name(),
            point.len()
        )));
    }
    let n: usize = point.iter().map(Tensor::len).sum();
    if n > GRAD_CHECK_MAX_INPUTS {
        return Err(Error::InvalidArgument(format!(
            "gradient check limited to {GRAD_CHECK_MAX_INPUTS} scalars, got {n}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    Ok(max_relative_error(&|g: &Graph<f64>, v: &[Var]| selector.build(g, v), point, eps))
}

/// Squared gradient norm of every parameter group after one loss evaluation,
/// for checking that no branch is cut off from the objective.
pub fn group_gradient_norms(
    model: &Dehazer<f64>,
    batch: &Batch,
    loss: &LossWeights,
) -> Result<Vec<(String, f64)>> {
    let g = Graph::<f64>::new();
    let image = g.constant(batch.hazy.cast());
    let clean = g.constant(batch.clean.cast());
    let t_gt = batch.transmission.as_ref().map(|t| g.constant(t.cast()));
    let [free, physics] = model.param_groups();
    let pf = free.bind(&g);
    let pp = physics.bind(&g);
    let fwd = model.forward_graph(&g, &pf, &pp, image);
    let ext = RandomConvExtractor::<f64>::default();
    let terms = total_loss_graph(&g, &fwd.iterates(), &fwd.stages, image, clean, t_gt, loss, &ext, None);
    let grads = g.backward(terms.total);
    let mut out = Vec::new();
    for (store, bound) in [(free, &pf), (physics, &pp)] {
        out.extend(layer_norms(store, bound, &grads));
    }
    Ok(out)
}

fn layer_norms(store: &ParamStore<f64>, bound: &Bound, grads: &crate::autograd::Gradients<f64>) -> Vec<(String, f64)> {
    store
        .names()
        .iter()
        .zip(bound.vars())
        .map(|(n, v)| (n.clone(), grads.get(*v).map_or(0.0, |t| t.sq_norm())))
        .collect()
}

