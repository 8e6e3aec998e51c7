//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! A red deterministic criterion (1, 2, 6, 7) fails the run. The training
//! outcome criteria (3a, 3, 4, 5) are reported without failing it, unless
//! `HAZENET_ACCEPTANCE_STRICT` is set. `HAZENET_ACCEPTANCE=1,2,...` selects
//! a subset.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hazenet_core::config::{DataConfig, SplitCounts};
use hazenet_core::data::{load_dataset, procedural_scene, LoadOptions};
use hazenet_core::eval::{evaluate, psnr, ssim, SSIM_C1};
use hazenet_core::haze_physics::{
    invert_scattering, residual_of, synthesize_haze, transmission_from_residual, AtmosphericLight, Image,
    TransmissionMap,
};
use hazenet_core::autograd::Graph;
use hazenet_core::nn::Bound;
use hazenet_core::train::{grad_check, train, LossSelector, RunOptions, RunSummary, LATEST_CHECKPOINT, LOSS_LOG};
use hazenet_core::{
    Checkpoint, Dehazer, LossWeights, ModelConfig, PhysicsConstants, PixelNorm, Sample, Shape, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Line {
    id: &'static str,
    title: &'static str,
    pass: Option<bool>,
    detail: String,
}

impl Line {
    fn print(&self) {
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A ",
        };
        println!("[{status}] {:<3} {}: {}", self.id, self.title, self.detail);
    }
}

fn record(lines: &mut Vec<Line>, id: &'static str, title: &'static str, pass: Option<bool>, detail: String) {
    let line = Line { id, title, pass, detail };
    line.print();
    lines.push(line);
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Image<f64> {
    Image::from_fn(h, w, |_, _, _, _| rng.random_range(lo..hi))
}

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, size: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(1, c, size, size), |_, _, _, _| rng.random_range(lo..hi))
}

fn physics_identities(lines: &mut Vec<Line>) {
    let k = PhysicsConstants::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut round_trip = 0.0f64;
    let mut recovery = 0.0f64;
    for _ in 0..1000 {
        let j = random_image(&mut rng, 8, 8, 0.0, 1.0);
        let t = TransmissionMap::new(random_tensor(&mut rng, 1, 8, 0.1, 1.0)).unwrap();
        let a = AtmosphericLight::rgb([0; 3].map(|_: u8| rng.random_range(0.6..1.0))).unwrap();
        let hazy = synthesize_haze(&j, &t, &a).unwrap();
        let back = invert_scattering(&hazy, &t, &a, &k).unwrap();
        round_trip = round_trip.max(back.tensor().max_abs_diff(j.tensor()));

        // guard-safe region: t in [0.15, 0.95] and every channel at least 0.1 from A
        let a = AtmosphericLight::gray(rng.random_range(0.7..1.0)).unwrap();
        let j = random_image(&mut rng, 8, 8, 0.0, 0.59);
        let t = TransmissionMap::new(random_tensor(&mut rng, 1, 8, 0.15, 0.95)).unwrap();
        let hazy = synthesize_haze(&j, &t, &a).unwrap();
        let r = residual_of(&hazy, &j).unwrap();
        let est = transmission_from_residual(&r, &j, &a, &k).unwrap();
        recovery = recovery.max(est.tensor().max_abs_diff(t.tensor()));
    }
    let secs = start.elapsed().as_secs_f64();
    record(
        lines,
        "1",
        "physics identities",
        Some(round_trip < 1e-6 && recovery < 1e-5 && secs < 10.0),
        format!(
            "1000 round trips max |ΔJ| {round_trip:.2e} (< 1e-6); residual→t max |Δt| {recovery:.2e} (< 1e-5); {secs:.2}s (< 10 s)"
        ),
    );
}

const KINK_MARGIN: f64 = 1e-3;

/// Offsets with magnitude in `[lo, hi)` and random sign.
fn away(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Smallest |pre-activation| of the checking discriminator over `images`,
/// with its default parameters or with `params`.
fn kink_margin(params: Option<&[Tensor<f64>]>, images: &[&Tensor<f64>]) -> f64 {
    let d = LossSelector::discriminator();
    let g = Graph::<f64>::new();
    let p = match params {
        Some(ps) => Bound::from_vars(ps.iter().map(|t| g.constant(t.clone())).collect()),
        None => d.params().bind_frozen(&g),
    };
    let mut margin = f64::INFINITY;
    for x in images {
        for v in d.pre_activations(&g, &p, g.constant((*x).clone())) {
            margin = g.value(v).data().iter().fold(margin, |m, a| m.min(a.abs()));
        }
    }
    margin
}

/// A random point at least `KINK_MARGIN` away from every PReLU kink of the
/// discriminator, for the functions that pass through it.
fn interior_point(selector: &LossSelector, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    loop {
        let p = candidate_point(selector, rng);
        let margin = match selector {
            LossSelector::AdversarialGenerator => kink_margin(None, &[&p[0]]),
            LossSelector::AdversarialDiscriminator { fake } => kink_margin(Some(&p[1..]), &[&p[0], fake]),
            LossSelector::LossU(w) if w.uses_adversary() => kink_margin(None, &[&p[2], &p[4]]),
            _ => f64::INFINITY,
        };
        if margin >= KINK_MARGIN {
            return p;
        }
    }
}

fn candidate_point(selector: &LossSelector, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = 6;
    let img = |rng: &mut ChaCha8Rng| random_tensor(rng, 3, s, 0.05, 0.95);
    match selector {
        LossSelector::Pixel(_) => {
            // keep |x − y| away from the kink of |·|
            let x = img(rng);
            let y = Tensor::from_fn(x.shape(), |n, c, h, w| {
                let d = rng.random_range(0.02..0.3);
                let v = x.at(n, c, h, w);
                if v > 0.5 { v - d } else { v + d }
            });
            vec![x, y]
        }
        LossSelector::Perceptual => vec![img(rng), img(rng)],
        LossSelector::AdversarialGenerator => vec![img(rng)],
        LossSelector::AdversarialDiscriminator { .. } => {
            let d = LossSelector::discriminator();
            let mut point = vec![img(rng)];
            for (_, p) in d.params().iter() {
                let scale = 0.5 * p.data().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-2);
                let q = Tensor::from_fn(p.shape(), |n, c, h, w| p.at(n, c, h, w) + rng.random_range(-scale..scale));
                point.push(q);
            }
            point
        }
        LossSelector::LossU(_) => {
            // every L1 difference (Ĵ − J, R̂ − (J − I), R̂ − (Ĵ − I)) is kept away from zero
            let i = img(rng);
            let j = img(rng);
            let mut point = vec![i.clone(), j.clone()];
            for _ in 0..2 {
                let dj = away(rng, j.shape(), 0.02, 0.08);
                let dr = away(rng, j.shape(), 0.15, 0.3);
                let jk = Tensor::from_fn(j.shape(), |n, c, h, w| j.at(n, c, h, w) + dj.at(n, c, h, w));
                let rk = Tensor::from_fn(j.shape(), |n, c, h, w| j.at(n, c, h, w) - i.at(n, c, h, w) + dr.at(n, c, h, w));
                point.push(jk);
                point.push(rk);
            }
            point
        }
        LossSelector::LossV { with_transmission, .. } => {
            let t = random_tensor(rng, 1, s, 0.3, 0.7);
            let j = img(rng);
            let near = |rng: &mut ChaCha8Rng, x: &Tensor<f64>| {
                let d = away(rng, x.shape(), 0.02, 0.25);
                Tensor::from_fn(x.shape(), |n, c, h, w| x.at(n, c, h, w) + d.at(n, c, h, w))
            };
            let mut point = vec![near(rng, &t), near(rng, &t), near(rng, &j), near(rng, &j), j];
            if *with_transmission {
                point.push(t);
            }
            point
        }
        LossSelector::Synthesize => vec![
            img(rng),
            random_tensor(rng, 1, s, 0.1, 0.95),
            random_tensor(rng, 3, 1, 0.6, 1.0),
            random_tensor(rng, 1, s, -1.0, 1.0),
        ],
        LossSelector::Invert => {
            // a hazy image made from an interior clean image keeps the inverse unclamped
            let j = random_tensor(rng, 3, s, 0.1, 0.9);
            let t = random_tensor(rng, 1, s, 0.2, 0.95);
            let a = random_tensor(rng, 3, 1, 0.6, 1.0);
            let i = Tensor::from_fn(j.shape(), |n, c, h, w| {
                let tt = t.at(n, 0, h, w);
                j.at(n, c, h, w) * tt + a.at(0, c, 0, 0) * (1.0 - tt)
            });
            vec![i, t, a, random_tensor(rng, 3, s, -1.0, 1.0)]
        }
        LossSelector::Residual => vec![img(rng), img(rng), random_tensor(rng, 3, s, -1.0, 1.0)],
        LossSelector::TransmissionFromResidual => {
            let a = random_tensor(rng, 3, 1, 0.75, 1.0);
            let j = random_tensor(rng, 3, s, 0.0, 0.6);
            let t = random_tensor(rng, 1, s, 0.2, 0.9);
            let r = Tensor::from_fn(j.shape(), |n, c, h, w| {
                (1.0 - t.at(n, 0, h, w)) * (j.at(n, c, h, w) - a.at(0, c, 0, 0))
            });
            vec![r, j, a, random_tensor(rng, 1, s, -1.0, 1.0)]
        }
        LossSelector::TransmissionFromDepth { .. } => {
            vec![random_tensor(rng, 1, s, 0.05, 2.0), random_tensor(rng, 1, s, -1.0, 1.0)]
        }
    }
}

fn gradient_suite(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fake = random_tensor(&mut rng, 3, 6, 0.05, 0.95);
    let selectors = [
        LossSelector::Pixel(PixelNorm::AbsoluteError),
        LossSelector::Pixel(PixelNorm::SquaredError),
        LossSelector::Perceptual,
        LossSelector::AdversarialGenerator,
        LossSelector::AdversarialDiscriminator { fake },
        LossSelector::LossU(LossWeights::default()),
        LossSelector::LossV {
            norm: PixelNorm::AbsoluteError,
            with_transmission: true,
        },
        LossSelector::LossV {
            norm: PixelNorm::SquaredError,
            with_transmission: false,
        },
        LossSelector::Synthesize,
        LossSelector::Invert,
        LossSelector::Residual,
        LossSelector::TransmissionFromResidual,
        LossSelector::TransmissionFromDepth { beta: 1.0 },
    ];
    let mut worst_overall = 0.0f64;
    let mut parts = Vec::new();
    for sel in &selectors {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let point = interior_point(sel, &mut rng);
            let err = grad_check(sel, &point, 1e-4).expect("well-formed gradient check");
            worst = worst.max(err);
        }
        worst_overall = worst_overall.max(worst);
        parts.push(format!("{} {worst:.1e}", sel.name()));
    }
    let secs = start.elapsed().as_secs_f64();
    record(
        lines,
        "2",
        "gradient suite",
        Some(worst_overall < 1e-3 && secs < 120.0),
        format!(
            "{} functions × 50 points, max rel err {worst_overall:.2e} (< 1e-3), {secs:.1}s (< 120 s) [{}]",
            selectors.len(),
            parts.join(", ")
        ),
    );
}

fn mean_free_psnr(model: &Dehazer<f32>, samples: &[Sample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let out = model.infer_any_size(&s.hazy).unwrap();
            psnr(out.trace.last().0.tensor(), s.clean.tensor()).unwrap()
        })
        .sum();
    total / samples.len() as f64
}

fn synthetic_split(root: &Path, counts: SplitCounts, airlight: Option<f64>) -> (Vec<Sample>, Vec<Sample>) {
    let mut data = DataConfig {
        root: root.to_path_buf(),
        image_size: [64, 64],
        counts,
        ..Default::default()
    };
    if let Some(a) = airlight {
        data.airlight_range = [a, a];
    }
    let sets = data.synthesize(&PhysicsConstants::default()).unwrap();
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for ds in &sets {
        let samples = load_dataset(ds, &LoadOptions::default()).unwrap();
        match ds.manifest.split {
            hazenet_core::Split::Train => train_set = samples,
            hazenet_core::Split::Test => test_set = samples,
            hazenet_core::Split::Val => {}
        }
    }
    (train_set, test_set)
}

fn run(
    loss: &LossWeights,
    cfg: &TrainConfig,
    train_set: &[Sample],
    out_dir: &Path,
    resume: Option<PathBuf>,
    stop_after: Option<u64>,
) -> RunSummary {
    let opts = RunOptions {
        out_dir: out_dir.to_path_buf(),
        resume,
        strict: true,
        config_snapshot: serde_json::json!({ "train": cfg, "loss": loss }),
        stop_after,
    };
    train(&ModelConfig::default(), loss, cfg, train_set, &[], &opts).unwrap()
}

fn single_pair_overfit(lines: &mut Vec<Line>, dir: &Path) {
    let counts = SplitCounts { train: 1, val: 0, test: 0 };
    let (train_set, _) = synthetic_split(&dir.join("data"), counts, None);
    let mut loss = LossWeights::default();
    loss.alphas[2] = 0.0;
    let cfg = TrainConfig {
        steps: 500,
        batch_size: 1,
                ..Default::default()
    };
    let summary = run(&loss, &cfg, &train_set, &dir.join("run"), None, None);
    let p = mean_free_psnr(summary.trainer.model(), &train_set);
    let hazy = psnr(train_set[0].hazy.tensor(), train_set[0].clean.tensor()).unwrap();
    record(
        lines,
        "3a",
        "single-pair overfit",
        Some(p > 30.0),
        format!("one 64×64 pair, 500 steps: PSNR(Ĵ_K) {p:.2} dB (> 30; hazy input {hazy:.2} dB)"),
    );
}

/// Returns the final checkpoint for the follow-on run.
fn overfit_oracle(lines: &mut Vec<Line>, dir: &Path) -> PathBuf {
    let start = Instant::now();
    let counts = SplitCounts { train: 8, val: 0, test: 0 };
    let (train_set, _) = synthetic_split(&dir.join("data"), counts, None);
    let mut loss = LossWeights::default();
    loss.alphas[2] = 0.0;
    let cfg = TrainConfig {
        steps: 2000,
        ..Default::default()
    };
    let summary = run(&loss, &cfg, &train_set, &dir.join("run"), None, None);
    let secs = start.elapsed().as_secs_f64();
    let totals: Vec<f64> = summary.reports.iter().map(|(_, r)| r.total()).collect();
    let ratio = totals[totals.len() - 1] / totals[0];
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (head, tail) = (avg(&totals[..100]), avg(&totals[totals.len() - 100..]));
    let hazy: f64 = train_set
        .iter()
        .map(|s| psnr(s.hazy.tensor(), s.clean.tensor()).unwrap())
        .sum::<f64>()
        / train_set.len() as f64;
    let p = mean_free_psnr(summary.trainer.model(), &train_set);
    record(
        lines,
        "3",
        "overfit oracle",
        Some(p > 25.0 && ratio < 0.2 && secs < 1800.0),
        format!(
            "8 pairs 64×64, 2000 steps: train PSNR(Ĵ_K) {p:.2} dB (> 25; hazy input {hazy:.2} dB); \
             loss step 2000 / step 1 = {:.4}/{:.4} = {ratio:.3} (< 0.2); \
             100-step mean loss {head:.4} → {tail:.4}; {:.0} s (< 1800 s)",
            totals[totals.len() - 1],
            totals[0],
            secs
        ),
    );
    summary.last_checkpoint
}

fn progressive_refinement(lines: &mut Vec<Line>, dir: &Path, resume: PathBuf) {
    let start = Instant::now();
    let counts = SplitCounts { train: 200, val: 0, test: 20 };
    let (train_set, test_set) = synthetic_split(&dir.join("data"), counts, Some(0.9));
    let loss = LossWeights::default();
    let cfg = TrainConfig {
        steps: 2000 + 20_000,
        patch_size: 32,
        checkpoint_interval: 2000,
        ..Default::default()
    };
    let summary = run(&loss, &cfg, &train_set, &dir.join("run"), Some(resume), None);
    let secs = start.elapsed().as_secs_f64();
    let model = summary.trainer.model();
    let eval = evaluate(model, &test_set, Some(&dir.join("eval"))).unwrap();
    let iters: Vec<f64> = eval.mean.iterations.iter().map(|m| m.0).collect();
    let monotone = iters.windows(2).all(|w| w[1] >= w[0] - 0.1);
    let improves = iters[iters.len() - 1] > iters[0];
    let shown: Vec<String> = iters.iter().map(|v| format!("{v:.2}")).collect();
    let hazy: f64 = test_set
        .iter()
        .map(|s| psnr(s.hazy.tensor(), s.clean.tensor()).unwrap())
        .sum::<f64>()
        / test_set.len() as f64;
    record(
        lines,
        "4",
        "progressive refinement",
        Some(monotone && improves),
        format!(
            "200 train / 20 held-out 64×64, 20k steps after the overfit run ({secs:.0} s): \
             held-out PSNR by iteration [{}] dB (hazy {hazy:.2} dB); iter K > iter 1: {improves}; \
             each step ≥ previous − 0.1 dB: {monotone}",
            shown.join(", ")
        ),
    );

    let (free, refine) = (eval.mean.free.0, eval.mean.refine.0);
    let all_stages = eval.records.iter().all(|r| {
        [r.free, r.prelim, r.refine].iter().all(|m| m.0.is_finite() && m.1.is_finite())
    });
    record(
        lines,
        "5",
        "stage reporting",
        Some(all_stages && (refine - free).abs() <= 3.0),
        format!(
            "three stage metrics for all {} samples: {all_stages}; held-out PSNR free {free:.2}, prelim {:.2}, refine {refine:.2} dB; \
             |refine − free| = {:.2} dB (≤ 3)",
            eval.records.len(),
            eval.mean.prelim.0,
            (refine - free).abs()
        ),
    );

    let mut airlight_err = 0.0f64;
    for s in &test_set {
        let out = model.infer_any_size(&s.hazy).unwrap();
        for v in out.stages.airlight.values() {
            airlight_err = airlight_err.max((f64::from(*v) - 0.9).abs());
        }
    }
    record(
        lines,
        "4a",
        "airlight recovery",
        Some(airlight_err <= 0.1),
        format!("held-out max |Â − 0.9| = {airlight_err:.3} (≤ 0.1)"),
    );
}

fn metric_oracles(lines: &mut Vec<Line>) {
    let shape = Shape::new(1, 3, 16, 16);
    let zeros = Tensor::<f64>::zeros(shape);
    let p20 = psnr(&Tensor::full(shape, 0.1), &zeros).unwrap();
    let p0 = psnr(&Tensor::full(shape, 1.0), &zeros).unwrap() + 0.0;
    let (c, d) = (0.3, 0.7);
    let closed = (2.0 * c * d + SSIM_C1) / (c * c + d * d + SSIM_C1);
    let s = ssim(&Tensor::full(shape, c), &Tensor::full(shape, d)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, 3, 16, 0.0, 1.0);
    let same = ssim(&x, &x).unwrap();
    let pass = (p20 - 20.0).abs() < 1e-9 && p0.abs() < 1e-9 && (s - closed).abs() < 1e-6 && same == 1.0;
    record(
        lines,
        "6",
        "metric oracles",
        Some(pass),
        format!(
            "PSNR at MSE 0.01 = {p20:.12} dB, at MSE 1 = {p0:.12} dB (1e-9); SSIM constants {s:.9} vs {closed:.9} (1e-6); SSIM identical = {same}"
        ),
    );
}

fn reproducibility(lines: &mut Vec<Line>, dir: &Path) {
    let model = ModelConfig {
        iterations: 2,
        widths: [4, 8, 8],
        residual_width: 4,
        airlight_widths: [4, 4],
        refine_width: 4,
        refine_blocks: 1,
        ..Default::default()
    };
    let samples: Vec<Sample> = (0..4)
        .map(|i| {
            let j = procedural_scene(400 + i, 32, 32);
            let t = TransmissionMap::new(Tensor::full(Shape::new(1, 1, 32, 32), 0.5f32)).unwrap();
            let a = AtmosphericLight::gray(0.85f32).unwrap();
            let h = synthesize_haze(&j, &t, &a).unwrap();
            Sample::new(format!("r{i}"), h, j, Some(t), Some(a)).unwrap()
        })
        .collect();
    let loss = LossWeights::default();
    let cfg = TrainConfig {
        steps: 30,
        batch_size: 2,
        patch_size: 16,
        learning_rate: 1e-3,
        checkpoint_interval: 10,
        ..Default::default()
    };
    let go = |name: &str, resume: Option<PathBuf>, stop_after: Option<u64>| {
        let opts = RunOptions {
            out_dir: dir.join(name),
            resume,
            strict: true,
            config_snapshot: serde_json::json!({ "model": model }),
            stop_after,
        };
        train(&model, &loss, &cfg, &samples, &[], &opts).unwrap();
    };
    go("a", None, None);
    go("b", None, None);
    let log = |name: &str| fs::read(dir.join(name).join(LOSS_LOG)).unwrap();
    let same_logs = log("a") == log("b");

    go("c", None, Some(10));
    let interrupted = Checkpoint::load(&dir.join("c").join(LATEST_CHECKPOINT)).unwrap().step;
    go("c", Some(dir.join("c").join(LATEST_CHECKPOINT)), None);
    let resumed_log = log("c") == log("a");
    let ckpt = |name: &str| fs::read(dir.join(name).join(LATEST_CHECKPOINT)).unwrap();
    let resumed_ckpt = ckpt("c") == ckpt("a");
    let rows = String::from_utf8(log("a")).unwrap().lines().count() - 1;
    record(
        lines,
        "7",
        "reproducibility",
        Some(same_logs && resumed_log && resumed_ckpt && interrupted == 10 && rows == 30),
        format!(
            "two strict runs byte-identical loss logs: {same_logs}; resume at step {interrupted} reproduces steps 11–30: \
             log {resumed_log}, final checkpoint {resumed_ckpt}"
        ),
    );
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("HAZENET_ACCEPTANCE").ok().map(|s| s.split(',').map(str::to_string).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let tmp = TempDir::new().unwrap();
    let mut lines = Vec::new();
    println!("acceptance suite");
    if wanted("1") {
        physics_identities(&mut lines);
    }
    if wanted("2") {
        gradient_suite(&mut lines);
    }
    if wanted("3a") {
        single_pair_overfit(&mut lines, &tmp.path().join("pair"));
    }
    if wanted("3") || wanted("4") || wanted("5") {
        let ckpt = overfit_oracle(&mut lines, &tmp.path().join("overfit"));
        if wanted("4") || wanted("5") {
            progressive_refinement(&mut lines, &tmp.path().join("progressive"), ckpt);
        }
    }
    if wanted("6") {
        metric_oracles(&mut lines);
    }
    if wanted("7") {
        reproducibility(&mut lines, tmp.path());
    }
    if wanted("8") {
        record(
            &mut lines,
            "8",
            "benchmark tables",
            None,
            "absolute PSNR/SSIM on the public benchmarks need the full datasets and long GPU training; not run".into(),
        );
    }
    let red: Vec<&str> = lines.iter().filter(|l| l.pass == Some(false)).map(|l| l.id).collect();
    println!("{} criteria checked, {} red", lines.iter().filter(|l| l.pass.is_some()).count(), red.len());
    let strict = std::env::var_os("HAZENET_ACCEPTANCE_STRICT").is_some();
    let training = ["3a", "3", "4", "5"];
    let fatal: Vec<&str> = red.iter().copied().filter(|id| strict || !training.contains(id)).collect();
    if !fatal.is_empty() {
        println!("failing on: {}", fatal.join(", "));
        std::process::exit(1);
    }
    if !red.is_empty() {
        println!("red training criteria reported, not fatal: {}", red.join(", "));
    }
}
