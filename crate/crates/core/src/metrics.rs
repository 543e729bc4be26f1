//! PSNR and SSIM on `[0, 1]` images, plus directory evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::{self, ensure_same_dims, Image};
use crate::synth::gaussian_kernel;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Below this MSE the PSNR is capped.
pub const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims("mse", a.dims(), b.dims())?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 1.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5) over the
/// fully covered positions, computed per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_dims("ssim", a.dims(), b.dims())?;
    let (h, w) = a.dims();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall { height: h, width: w, min: SSIM_WINDOW });
    }
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|f| filter_valid(f, h, w, &k));
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Separable correlation keeping only fully covered positions.
fn filter_valid(f: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().zip(&f[r * w + c..r * w + c + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalResult {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = compensated_sum(rows.iter().map(|r| r.psnr)) / n;
        let mean_ssim = compensated_sum(rows.iter().map(|r| r.ssim)) / n;
        Self { rows, mean_psnr, mean_ssim }
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// `filename,psnr_db,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("filename,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.name, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "mean,{:.6},{:.6}", self.mean_psnr, self.mean_ssim);
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<width$}  {:>9}  {:>7}\n", "image", "PSNR(dB)", "SSIM");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>9.3}  {:>7.4}", r.name, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "{:<width$}  {:>9.3}  {:>7.4}", "mean", self.mean_psnr, self.mean_ssim);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_file(path, self.to_csv().as_bytes())
    }
}

pub fn evaluate_pair(name: &str, pred: &Image, gt: &Image) -> Result<EvalRow> {
    Ok(EvalRow { name: name.to_string(), psnr: psnr(pred, gt)?, ssim: ssim(pred, gt)? })
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect())
}

/// Scores every PNG present in both directories, in file name order.
pub fn evaluate_dirs(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<EvalResult> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let pred = png_names(pred_dir)?;
    let gt = png_names(gt_dir)?;
    let common: Vec<&String> = pred.intersection(&gt).collect();
    if common.is_empty() {
        return Err(Error::NameMismatch(format!(
            "no common PNG file names in {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let unmatched = pred.len() + gt.len() - 2 * common.len();
    if unmatched > 0 {
        log::warn!("{unmatched} files without a counterpart are ignored");
    }
    let rows = common
        .into_iter()
        .map(|name| {
            let p = image::read_rgb(pred_dir.join(name))?;
            let g = image::read_rgb(gt_dir.join(name))?;
            evaluate_pair(name, &p, &g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_rows(rows))
}
