//! PSNR / SSIM and the per-iteration, per-stage evaluation harness.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{write_rgb, Sample};
use crate::error::{Error, Result};
use crate::model::Dehazer;
use crate::tensor::{Scalar, Tensor};

/// PSNR reported for identical images, and the upper bound of every PSNR.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const STAGES: [&str; 3] = ["free", "prelim", "refine"];

fn same_shape<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("metric inputs differ: {} vs {}", x.shape(), y.shape())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape(x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.to_f64_lossy() - b.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / x.len().max(1) as f64)
}

/// `−10·log10(MSE)` for unit peak, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over every valid 11×11 Gaussian window,
/// averaged over channels and batch items.
pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape(x, y)?;
    let s = x.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {}×{}",
            s.h, s.w
        )));
    }
    let k = gaussian_window();
    let plane = s.plane();
    let mut total = 0.0;
    for p in 0..s.n * s.c {
        let a: Vec<f64> = x.data()[p * plane..(p + 1) * plane].iter().map(|v| v.to_f64_lossy()).collect();
        let b: Vec<f64> = y.data()[p * plane..(p + 1) * plane].iter().map(|v| v.to_f64_lossy()).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&a, s.h, s.w, &k);
        let mu_b = filter_valid(&b, s.h, s.w, &k);
        let aa = filter_valid(&prod(&a, &a), s.h, s.w, &k);
        let bb = filter_valid(&prod(&b, &b), s.h, s.w, &k);
        let ab = filter_valid(&prod(&a, &b), s.h, s.w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / (s.n * s.c) as f64)
}

/// Metrics of one sample: every iteration of the model-free component and
/// the three stage outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub iterations: Vec<(f64, f64)>,
    pub free: (f64, f64),
    pub prelim: (f64, f64),
    pub refine: (f64, f64),
}

impl EvalRecord {
    fn columns(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.iterations.iter().map(|m| m.0).collect();
        v.extend(self.iterations.iter().map(|m| m.1));
        v.extend([self.free.0, self.free.1, self.prelim.0, self.prelim.1, self.refine.0, self.refine.1]);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub records: Vec<EvalRecord>,
    /// Column-wise arithmetic mean of the records, labelled `MEAN`.
    pub mean: EvalRecord,
}

impl EvalSummary {
    pub fn csv_header(k: usize) -> String {
        let mut h = String::from("id");
        for i in 1..=k {
            let _ = write!(h, ",psnr_iter{i}");
        }
        for i in 1..=k {
            let _ = write!(h, ",ssim_iter{i}");
        }
        h.push_str(",psnr_free,ssim_free,psnr_prelim,ssim_prelim,psnr_refine,ssim_refine");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.mean.iterations.len());
        out.push('\n');
        for r in self.records.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&r.id);
            for v in r.columns() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn mean_record(records: &[EvalRecord], k: usize) -> EvalRecord {
    let n = records.len() as f64;
    let avg = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    EvalRecord {
        id: "MEAN".into(),
        iterations: (0..k)
            .map(|i| (avg(&|r| r.iterations[i].0), avg(&|r| r.iterations[i].1)))
            .collect(),
        free: (avg(&|r| r.free.0), avg(&|r| r.free.1)),
        prelim: (avg(&|r| r.prelim.0), avg(&|r| r.prelim.1)),
        refine: (avg(&|r| r.refine.0), avg(&|r| r.refine.1)),
    }
}

/// Runs the full pipeline on every sample in order. With `out_dir`, writes
/// `results.csv` and the three stage outputs as `<out_dir>/<stage>/<id>.png`.
pub fn evaluate(model: &Dehazer<f32>, samples: &[Sample], out_dir: Option<&Path>) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let k = model.config().iterations;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.infer_any_size(&s.hazy)?;
        let clean = s.clean.tensor();
        let metrics = |t: &Tensor<f32>| -> Result<(f64, f64)> { Ok((psnr(t, clean)?, ssim(t, clean)?)) };
        let iterations = out
            .trace
            .iter()
            .map(|(j, _)| metrics(j.tensor()))
            .collect::<Result<Vec<_>>>()?;
        let free = *iterations.last().expect("K >= 1");
        let record = EvalRecord {
            id: s.id.clone(),
            iterations,
            free,
            prelim: metrics(out.stages.j_prelim.tensor())?,
            refine: metrics(out.stages.j_refine.tensor())?,
        };
        if let Some(dir) = out_dir {
            let images = [
                out.trace.last().0.tensor(),
                out.stages.j_prelim.tensor(),
                out.stages.j_refine.tensor(),
            ];
            for (stage, t) in STAGES.iter().zip(images) {
                write_rgb(&dir.join(stage).join(format!("{}.png", s.id)), t, 0)?;
            }
        }
        log::debug!("evaluated {}: refine {:.2} dB", record.id, record.refine.0);
        records.push(record);
    }
    let summary = EvalSummary {
        mean: mean_record(&records, k),
        records,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("results.csv");
        fs::write(&path, summary.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}
