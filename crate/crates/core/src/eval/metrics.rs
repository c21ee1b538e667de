//! Image fidelity metrics on `[0, 1]` images and hard-label Dice scores.

use crate::error::{input, RemicError, Result};
use crate::image::Image;

/// Value reported instead of infinity for (near-)identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(input(format!("metric inputs have {} and {} elements", a.len(), b.len())));
    }
    Ok(())
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `‖a − truth‖₂ / ‖truth‖₂`.
pub fn nrmse(a: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(a, truth)?;
    let den = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(RemicError::UndefinedNormalization);
    }
    let num = a.iter().zip(truth).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(num / den)
}

pub fn psnr(a: &[f64], b: &[f64], data_range: f64) -> Result<f64> {
    if data_range <= 0.0 {
        return Err(input("PSNR data range must be positive"));
    }
    let m = mse(a, b)?;
    let r2 = data_range * data_range;
    if m < r2 * 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (r2 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every window position that fits inside the image.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|j| win[j] * x[y * w + x0 + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|j| win[j] * rows[(y0 + j) * ow + x0]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5) over valid positions.
///
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize, data_range: f64) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != height * width {
        return Err(input(format!("{} pixels for a {height}x{width} image", a.len())));
    }
    let mut size = SSIM_WINDOW.min(height).min(width);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let win = gaussian_window(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (mu_a, oh, ow) = filter_valid(a, height, width, &win);
    let (mu_b, _, _) = filter_valid(b, height, width, &win);
    let (aa, _, _) = filter_valid(&prod(a, a), height, width, &win);
    let (bb, _, _) = filter_valid(&prod(b, b), height, width, &win);
    let (ab, _, _) = filter_valid(&prod(a, b), height, width, &win);
    let n = oh * ow;
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// The four image metrics of one prediction against ground truth, with data range 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub mae: f64,
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageMetrics {
    pub fn compute(pred: &Image, truth: &Image) -> Result<Self> {
        if (pred.height, pred.width) != (truth.height, truth.width) {
            return Err(input("prediction and ground truth differ in size"));
        }
        let (a, b) = (pred.as_f64(), truth.as_f64());
        Ok(Self {
            mae: mae(&a, &b)?,
            nrmse: nrmse(&a, &b)?,
            psnr: psnr(&a, &b, 1.0)?,
            ssim: ssim(&a, &b, truth.height, truth.width, 1.0)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    pub per_class: Vec<f64>,
    /// Mean over foreground classes (all classes when `L = 1`).
    pub mean: f64,
}

/// Per-class `2|P ∩ T| / (|P| + |T|)`; a class absent from both maps scores 1.
pub fn dice_score(pred: &[u32], target: &[u32], num_classes: usize) -> Result<DiceScores> {
    if pred.len() != target.len() {
        return Err(input("label maps differ in size"));
    }
    if num_classes == 0 {
        return Err(input("dice needs at least one class"));
    }
    if let Some(&bad) = pred.iter().chain(target).find(|&&l| l as usize >= num_classes) {
        return Err(input(format!("label {bad} outside 0..{num_classes}")));
    }
    let mut inter = vec![0usize; num_classes];
    let mut np = vec![0usize; num_classes];
    let mut nt = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(target) {
        np[p as usize] += 1;
        nt[t as usize] += 1;
        if p == t {
            inter[p as usize] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|l| {
            let den = np[l] + nt[l];
            if den == 0 {
                1.0
            } else {
                2.0 * inter[l] as f64 / den as f64
            }
        })
        .collect();
    let fg = if num_classes > 1 { &per_class[1..] } else { &per_class[..] };
    let mean = fg.iter().sum::<f64>() / fg.len() as f64;
    Ok(DiceScores { per_class, mean })
}
