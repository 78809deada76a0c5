//! Attack success rate and image-quality scores.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRecord {
    pub id: String,
    pub label: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
}

/// Fraction of initially correct samples whose prediction the attack moved
/// off the true label. `None` when no sample was classified correctly.
pub fn attack_success_rate(records: &[EvalRecord]) -> Result<Option<f64>> {
    if records.is_empty() {
        return Err(Error::invalid("no evaluation records"));
    }
    let (flipped, correct) = records
        .iter()
        .filter(|r| r.clean_prediction == r.label)
        .fold((0usize, 0usize), |(f, c), r| {
            (f + usize::from(r.adversarial_prediction != r.label), c + 1)
        });
    Ok((correct > 0).then(|| flipped as f64 / correct as f64))
}

/// Top-1 accuracy of the given predictions.
pub fn accuracy(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    if labels.is_empty() || labels.len() != predictions.len() {
        return Err(Error::invalid("accuracy needs equally many, non-zero labels and predictions"));
    }
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit peak; infinite for identical
/// images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * data[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11x11 Gaussian
/// windows (sigma 1.5, unit dynamic range).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, h, w, &k);
    let mu_y = filter_valid(y, h, w, &k);
    let e_xx = filter_valid(&xx, h, w, &k);
    let e_yy = filter_valid(&yy, h, w, &k);
    let e_xy = filter_valid(&xy, h, w, &k);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// PSNR and SSIM of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScores {
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn quality(reference: &GrayImage, distorted: &GrayImage) -> Result<QualityScores> {
    Ok(QualityScores {
        psnr_db: psnr(reference, distorted)?,
        ssim: ssim(reference, distorted)?,
    })
}
