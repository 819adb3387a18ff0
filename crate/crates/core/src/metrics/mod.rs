//! Evaluation metrics.
//!
//! Division-by-zero in the dB metrics (PSNR, SNR, SNR improvement) yields
//! `f64::INFINITY` rather than an error so batch evaluation can proceed.

mod lines;
mod spectral;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use lines::{
    angular_error_deg, fit_line_tls, matched_angular_errors, sequential_line_fit, sequential_line_fit_with,
    LineFitParams, LineModel,
};
pub use spectral::{arv, mf, rmse_arv, rmse_mf};

use crate::error::{MidError, Result};
use crate::numerics::Tensor;

/// Mean power `(1/L)·Σ|x|²`.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "metric")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

fn db_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Peak signal-to-noise ratio in dB; identical inputs give `+∞`.
pub fn psnr(clean: &Tensor, test: &Tensor, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(MidError::Config(format!("max_value must be > 0, got {max_value}")));
    }
    Ok(db_ratio(max_value * max_value, mse(clean, test)?))
}

/// The two factors of global-statistics SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimTerms {
    pub luminance: f64,
    pub contrast_structure: f64,
}

impl SsimTerms {
    pub fn value(&self) -> f64 {
        self.luminance * self.contrast_structure
    }
}

/// SSIM factors from whole-image means, variances and covariance with
/// `C1 = (0.01·max)²`, `C2 = (0.03·max)²`.
pub fn ssim_terms(clean: &Tensor, test: &Tensor, max_value: f64) -> Result<SsimTerms> {
    clean.expect_same_shape(test, "ssim")?;
    if clean.rank() != 2 {
        return Err(MidError::shape("ssim", "[H, W]", clean.shape()));
    }
    if !(max_value > 0.0) {
        return Err(MidError::Config(format!("max_value must be > 0, got {max_value}")));
    }
    let n = clean.len() as f64;
    let mu_x = clean.mean();
    let mu_y = test.mean();
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (x, y) in clean.data().iter().zip(test.data()) {
        let (dx, dy) = (x - mu_x, y - mu_y);
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let c1 = (0.01 * max_value).powi(2);
    let c2 = (0.03 * max_value).powi(2);
    Ok(SsimTerms {
        luminance: (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1),
        contrast_structure: (2.0 * cxy + c2) / (vx + vy + c2),
    })
}

pub fn ssim(clean: &Tensor, test: &Tensor, max_value: f64) -> Result<f64> {
    ssim_terms(clean, test, max_value).map(|t| t.value())
}

/// Area under the recall-vs-error curve on `[0, e_max]`, normalized so a
/// perfect method scores 1.
///
/// Recall at threshold `e` is the fraction of errors `<= e`. The curve is a
/// step function, so its knots include both sides of every jump and the
/// trapezoid sum over them is the exact area. Non-finite errors (unmatched
/// models) are never recalled.
pub fn recall_auc(errors: &[f64], e_max: f64) -> Result<f64> {
    if !(e_max > 0.0 && e_max.is_finite()) {
        return Err(MidError::Config(format!("e_max must be > 0, got {e_max}")));
    }
    if errors.is_empty() {
        return Err(MidError::Config("recall_auc needs at least one error".into()));
    }
    if let Some(e) = errors.iter().find(|e| **e < 0.0 || e.is_nan()) {
        return Err(MidError::Config(format!("angular errors must be >= 0, got {e}")));
    }
    let n = errors.len() as f64;
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| *e < e_max).collect();
    sorted.sort_by(f64::total_cmp);

    // knots (e_i, recall) with a vertical jump at every error
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut hits = 0usize;
    for &e in &sorted {
        knots.push((e, hits as f64 / n));
        hits += 1;
        knots.push((e, hits as f64 / n));
    }
    knots.push((e_max, hits as f64 / n));

    let area: f64 = knots
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok(area / e_max)
}

/// Mean over scenes of the fraction of errors strictly below `threshold`.
pub fn maa(errors_per_scene: &[Vec<f64>], threshold: f64) -> Result<f64> {
    if errors_per_scene.is_empty() || errors_per_scene.iter().any(|s| s.is_empty()) {
        return Err(MidError::Config("mAA needs non-empty scenes".into()));
    }
    let total: f64 = errors_per_scene
        .iter()
        .map(|scene| scene.iter().filter(|&&e| e < threshold).count() as f64 / scene.len() as f64)
        .sum();
    Ok(total / errors_per_scene.len() as f64)
}

/// `10·log10(P_noisy/P_noise) − 10·log10(P_denoise/P_noise)`.
pub fn snr_improvement(noisy: &Tensor, denoised: &Tensor, noise_ref: &Tensor) -> Result<f64> {
    noisy.expect_same_shape(denoised, "snr_improvement")?;
    if noisy.len() != noise_ref.len() {
        return Err(MidError::shape(
            "snr_improvement",
            format!("{} samples", noisy.len()),
            noise_ref.shape(),
        ));
    }
    let p_noise = power(noise_ref.data());
    if !(p_noise > 0.0) {
        return Err(MidError::Config("reference noise has zero power".into()));
    }
    let p_noisy = power(noisy.data());
    let p_den = power(denoised.data());
    if p_den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p_noisy / p_noise).log10() - 10.0 * (p_den / p_noise).log10())
}

pub fn rmse(clean: &Tensor, test: &Tensor) -> Result<f64> {
    if clean.len() != test.len() {
        return Err(MidError::shape(
            "rmse",
            format!("{} samples", clean.len()),
            test.shape(),
        ));
    }
    let s: f64 = clean
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((s / clean.len() as f64).sqrt())
}

/// Proxy SNR (dB) and CNR of a denoised image relative to its noisy input.
///
/// `P_s` is the denoised power and `P_n` the power of `noisy − denoised`;
/// CNR is `(mean(denoised) − mean(noisy)) / std(noisy)`.
pub fn snr_cnr(noisy: &Tensor, denoised: &Tensor) -> Result<(f64, f64)> {
    noisy.expect_same_shape(denoised, "snr_cnr")?;
    let p_s = power(denoised.data());
    let resid = noisy.sub(denoised)?;
    let p_n = power(resid.data());
    let snr = db_ratio(p_s, p_n);
    let mu_noisy = noisy.mean();
    let var = noisy.data().iter().map(|v| (v - mu_noisy).powi(2)).sum::<f64>() / noisy.len() as f64;
    if !(var > 0.0) {
        return Err(MidError::Config("CNR undefined: noisy image has zero variance".into()));
    }
    let cnr = (denoised.mean() - mu_noisy) / var.sqrt();
    Ok((snr, cnr))
}

/// Named scalar metrics for one run plus provenance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub seed: u64,
    pub config_hash: u64,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// Mean and std of the finite entries, plus how many were finite.
pub fn finite_mean_std(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}
