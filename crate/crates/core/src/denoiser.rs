//! Iterative denoising: estimate the step, then subtract predicted
//! increments (or prune predicted outliers) one step at a time down to zero.

use std::collections::HashSet;

use crate::checkpoint::Checkpoint;
use crate::error::{MidError, Result};
use crate::networks::{NoiseEstimator, NoiseMode, NoisePredictor, StepEstimator, StepPredictor};
use crate::noise::TrajectorySample;
use crate::numerics::Tensor;

/// Default removal threshold for classification mode.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Continuous step estimate to a step index: round half away from zero, then
/// clamp to `[0, T]`.
pub fn step_index(normalized: f64, total_steps: usize) -> usize {
    let r = (normalized * total_steps as f64).round();
    if r.is_nan() || r <= 0.0 {
        0
    } else {
        (r as usize).min(total_steps)
    }
}

/// Result of a regression-mode denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub output: Tensor,
    pub t_hat: usize,
    /// State after each subtraction, from `s_{t̂−1}` down to `s_0`.
    pub trace: Vec<Tensor>,
    /// L2 norm of the subtracted increment at each step, same order.
    pub residual_norms: Vec<f64>,
}

/// Result of a classification-mode run: indices into the input point list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPartition {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub t_hat: usize,
    /// Number of points still kept after each step.
    pub kept_per_step: Vec<usize>,
}

/// Ψ/Φ pair driving iterative denoising. Either network may be swapped for an
/// oracle.
#[derive(Debug, Clone)]
pub struct Denoiser<P, N> {
    pub psi: P,
    pub phi: N,
    pub total_steps: usize,
    pub threshold: f64,
}

impl<'a> Denoiser<&'a StepPredictor, &'a NoisePredictor> {
    pub fn from_checkpoint(ckpt: &'a Checkpoint) -> Self {
        Denoiser {
            psi: &ckpt.psi,
            phi: &ckpt.phi,
            total_steps: ckpt.process.total_steps,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn points_tensor(points: &[[f64; 2]], idx: &[usize]) -> Result<Tensor> {
    Tensor::new(vec![idx.len(), 2], idx.iter().flat_map(|&i| points[i]).collect())
}

impl<P: StepEstimator, N: NoiseEstimator> Denoiser<P, N> {
    pub fn new(psi: P, phi: N, total_steps: usize) -> Self {
        Denoiser {
            psi,
            phi,
            total_steps,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn estimate_step(&self, s: &Tensor) -> Result<usize> {
        Ok(step_index(self.psi.predict_step(s)?, self.total_steps))
    }

    fn expect_mode(&self, mode: NoiseMode) -> Result<()> {
        if self.phi.mode() != mode {
            return Err(MidError::Config(format!(
                "noise predictor works in {:?} mode, this operation needs {mode:?}",
                self.phi.mode()
            )));
        }
        Ok(())
    }

    fn subtract(&self, s: &Tensor, t: usize) -> Result<(Tensor, f64)> {
        let eps = self.phi.predict_noise(s, t, self.total_steps)?;
        let next = s.sub(&eps)?;
        if !next.all_finite() {
            return Err(MidError::NonFinite(format!("denoised state at step {t}")));
        }
        Ok((next, eps.l2_norm()))
    }

    /// Iterative denoising `s_{t−1} = s_t − Φ(s_t, t)` for `t = t̂ … 1`.
    pub fn denoise(&self, s: &Tensor) -> Result<DenoiseOutput> {
        self.expect_mode(NoiseMode::Regression)?;
        let t_hat = self.estimate_step(s)?;
        let mut cur = s.clone();
        let mut trace = Vec::with_capacity(t_hat);
        let mut residual_norms = Vec::with_capacity(t_hat);
        for t in (1..=t_hat).rev() {
            let (next, norm) = self.subtract(&cur, t)?;
            trace.push(next.clone());
            residual_norms.push(norm);
            cur = next;
        }
        Ok(DenoiseOutput {
            output: cur,
            t_hat,
            trace,
            residual_norms,
        })
    }

    /// Single subtraction `s − Φ(s, t̂)`; identity when `t̂ = 0`.
    pub fn denoise_oneshot(&self, s: &Tensor) -> Result<DenoiseOutput> {
        self.expect_mode(NoiseMode::Regression)?;
        let t_hat = self.estimate_step(s)?;
        if t_hat == 0 {
            return Ok(DenoiseOutput {
                output: s.clone(),
                t_hat,
                trace: Vec::new(),
                residual_norms: Vec::new(),
            });
        }
        let (out, norm) = self.subtract(s, t_hat)?;
        Ok(DenoiseOutput {
            trace: vec![out.clone()],
            output: out,
            t_hat,
            residual_norms: vec![norm],
        })
    }

    /// Iterative pruning: for `t = t̂ … 1`, drop every remaining point whose
    /// noise probability exceeds the threshold. Dropped points never return.
    pub fn denoise_points(&self, points: &[[f64; 2]]) -> Result<PointPartition> {
        self.prune(points, false)
    }

    /// Single pruning pass at `t̂`.
    pub fn denoise_points_oneshot(&self, points: &[[f64; 2]]) -> Result<PointPartition> {
        self.prune(points, true)
    }

    fn prune(&self, points: &[[f64; 2]], oneshot: bool) -> Result<PointPartition> {
        self.expect_mode(NoiseMode::Classification)?;
        if points.is_empty() {
            return Ok(PointPartition::default());
        }
        let all: Vec<usize> = (0..points.len()).collect();
        let t_hat = self.estimate_step(&points_tensor(points, &all)?)?;
        let mut kept = all;
        let mut removed = Vec::new();
        let mut kept_per_step = Vec::new();
        let steps: Vec<usize> = if oneshot {
            (1..=t_hat).rev().take(1).collect()
        } else {
            (1..=t_hat).rev().collect()
        };
        for t in steps {
            if kept.is_empty() {
                kept_per_step.push(0);
                continue;
            }
            let probs = self
                .phi
                .predict_noise(&points_tensor(points, &kept)?, t, self.total_steps)?;
            if probs.len() != kept.len() {
                return Err(MidError::shape(
                    "noise probabilities",
                    format!("[{}]", kept.len()),
                    probs.shape(),
                ));
            }
            let mut next = Vec::with_capacity(kept.len());
            for (&i, &p) in kept.iter().zip(probs.data()) {
                if p.is_nan() {
                    return Err(MidError::NonFinite(format!(
                        "noise probability of point {i} at step {t}"
                    )));
                }
                if p > self.threshold {
                    removed.push(i);
                } else {
                    next.push(i);
                }
            }
            kept = next;
            kept_per_step.push(kept.len());
        }
        removed.sort_unstable();
        Ok(PointPartition {
            kept,
            removed,
            t_hat,
            kept_per_step,
        })
    }
}

/// Ψ oracle that reports a fixed true step.
#[derive(Debug, Clone, Copy)]
pub struct TrueStep {
    pub t: usize,
    pub total_steps: usize,
}

impl StepEstimator for TrueStep {
    fn predict_step(&self, _s: &Tensor) -> Result<f64> {
        Ok(self.t as f64 / self.total_steps as f64)
    }
}

/// Φ oracle replaying the realized increments of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryReplay {
    pub steps: Vec<TrajectorySample>,
}

impl NoiseEstimator for TrajectoryReplay {
    fn mode(&self) -> NoiseMode {
        NoiseMode::Regression
    }

    fn predict_noise(&self, s: &Tensor, t: usize, _total_steps: usize) -> Result<Tensor> {
        let step = self
            .steps
            .get(t.wrapping_sub(1))
            .ok_or_else(|| MidError::Config(format!("no recorded step {t}")))?;
        step.eps_eff.expect_same_shape(s, "trajectory replay")?;
        Ok(step.eps_eff.clone())
    }
}

/// Φ oracle that outputs 1 on known injected points and 0 elsewhere,
/// matching points by exact coordinates.
#[derive(Debug, Clone)]
pub struct LabelReplay {
    injected: HashSet<[u64; 2]>,
}

impl LabelReplay {
    pub fn new(injected: &[[f64; 2]]) -> Self {
        LabelReplay {
            injected: injected.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect(),
        }
    }
}

impl NoiseEstimator for LabelReplay {
    fn mode(&self) -> NoiseMode {
        NoiseMode::Classification
    }

    fn predict_noise(&self, s: &Tensor, _t: usize, _total_steps: usize) -> Result<Tensor> {
        let labels = s
            .data()
            .chunks_exact(2)
            .map(|p| f64::from(u8::from(self.injected.contains(&[p[0].to_bits(), p[1].to_bits()]))))
            .collect();
        Tensor::from_vec(labels)
    }
}
