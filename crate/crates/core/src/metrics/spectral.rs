//! Windowed sEMG features: average rectified value and mean frequency.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{MidError, Result};
use crate::numerics::Tensor;

fn windows(signal: &Tensor, window: usize) -> Result<std::slice::ChunksExact<'_, f64>> {
    if window == 0 || signal.len() < window {
        return Err(MidError::Config(format!(
            "window {window} does not fit a signal of {} samples",
            signal.len()
        )));
    }
    Ok(signal.data().chunks_exact(window))
}

/// Mean absolute value of each full, non-overlapping window.
pub fn arv(signal: &Tensor, window: usize) -> Result<Tensor> {
    let vals: Vec<f64> = windows(signal, window)?
        .map(|w| w.iter().map(|v| v.abs()).sum::<f64>() / window as f64)
        .collect();
    Tensor::from_vec(vals)
}

/// Power-weighted mean frequency of each window, `Σ f_k P_k / Σ P_k` over the
/// one-sided spectrum without the DC bin.
pub fn mf(signal: &Tensor, window: usize, sample_rate: f64) -> Result<Tensor> {
    if !(sample_rate > 0.0) {
        return Err(MidError::Config(format!("sample_rate must be > 0, got {sample_rate}")));
    }
    if window < 2 {
        return Err(MidError::Config(
            "mean frequency needs windows of at least 2 samples".into(),
        ));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut out = Vec::new();
    for (wi, w) in windows(signal, window)?.enumerate() {
        for (b, &v) in buf.iter_mut().zip(w) {
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(window / 2 + 1).skip(1) {
            let p = c.norm_sqr();
            num += k as f64 * sample_rate / window as f64 * p;
            den += p;
        }
        if !(den > 0.0) {
            return Err(MidError::NonFinite(format!("window {wi} has no non-DC power")));
        }
        out.push(num / den);
    }
    Tensor::from_vec(out)
}

fn rmse_vec(a: &Tensor, b: &Tensor) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

/// RMSE between the windowed ARV sequences of two signals.
pub fn rmse_arv(clean: &Tensor, denoised: &Tensor, window: usize) -> Result<f64> {
    clean.expect_same_shape(denoised, "rmse_arv")?;
    Ok(rmse_vec(&arv(clean, window)?, &arv(denoised, window)?))
}

/// RMSE between the windowed MF sequences of two signals.
pub fn rmse_mf(clean: &Tensor, denoised: &Tensor, window: usize, sample_rate: f64) -> Result<f64> {
    clean.expect_same_shape(denoised, "rmse_mf")?;
    Ok(rmse_vec(
        &mf(clean, window, sample_rate)?,
        &mf(denoised, window, sample_rate)?,
    ))
}
