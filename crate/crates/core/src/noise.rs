//! Forward noising processes and their additive linearization.
//!
//! Every step produces a [`TrajectorySample`] whose `eps_eff` is the realized
//! increment `s_t − s_prev`. For non-linear kinds this is the first-order
//! (Taylor) effective noise: the Jacobian is folded into the target that the
//! noise predictor learns, so the denoiser only ever subtracts.
//!
//! Regression states are snapped to a fixed-point lattice of spacing
//! [`STATE_LATTICE`]. On that lattice (|values| < 2^22) sums and differences
//! of two states are exact in `f64`, so `s_t − eps_eff` recovers `s_prev`
//! bit-for-bit whenever `s_prev` is itself on the lattice. Everything
//! produced by [`crate::datagen`] is.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MidError, Result};
use crate::metrics::power;
use crate::numerics::Tensor;

/// Magnitudes at or below this value make Gaussian and log-normal steps a
/// no-op (zero-noise test mode).
pub const ZERO_NOISE_MAGNITUDE: f64 = 1e-300;

/// Spacing of the fixed-point lattice regression states are snapped to.
pub const STATE_LATTICE: f64 = 1.0 / (1u64 << 30) as f64;

/// Rounds every value onto the state lattice.
pub fn snap_to_lattice(t: &Tensor) -> Tensor {
    t.map(snap)
}

fn snap(v: f64) -> f64 {
    (v / STATE_LATTICE).round() * STATE_LATTICE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianAdditive,
    MultiplicativeLog,
    PoissonLike,
    OutlierPoints,
    SignalInterference,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::GaussianAdditive,
        NoiseKind::MultiplicativeLog,
        NoiseKind::PoissonLike,
        NoiseKind::OutlierPoints,
        NoiseKind::SignalInterference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::GaussianAdditive => "gaussian-additive",
            NoiseKind::MultiplicativeLog => "multiplicative-log",
            NoiseKind::PoissonLike => "poisson-like",
            NoiseKind::OutlierPoints => "outlier-points",
            NoiseKind::SignalInterference => "signal-interference",
        }
    }

    /// Whether the noise predictor regresses increments (true) or classifies
    /// points (false).
    pub fn is_regression(self) -> bool {
        self != NoiseKind::OutlierPoints
    }
}

/// Declarative description of a forward noising process.
///
/// `per_step_magnitude[t-1]` is the per-step σ (Gaussian, log-normal), the
/// photon scale λ (poisson-like), the number of injected points (outliers),
/// or the SNR decrement in dB (interference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProcessSpec {
    pub kind: NoiseKind,
    pub total_steps: usize,
    pub per_step_magnitude: Vec<f64>,
    /// Outlier sampling box `[x_min, y_min, x_max, y_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 4]>,
    /// Interference waveform, same length as the signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Vec<f64>>,
    /// Signal power the interference SNR is measured against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_power: Option<f64>,
    /// SNR (dB) before the first decrement is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_snr_db: Option<f64>,
}

impl NoiseProcessSpec {
    fn bare(kind: NoiseKind, per_step_magnitude: Vec<f64>) -> Self {
        NoiseProcessSpec {
            kind,
            total_steps: per_step_magnitude.len(),
            per_step_magnitude,
            bounds: None,
            template: None,
            reference_power: None,
            initial_snr_db: None,
        }
    }

    /// Gaussian process whose cumulative std after `total_steps` is
    /// `sigma_total` (constant per-step σ = sigma_total / √T).
    pub fn gaussian(total_steps: usize, sigma_total: f64) -> Self {
        let sigma = sigma_total / (total_steps as f64).sqrt();
        Self::bare(NoiseKind::GaussianAdditive, vec![sigma; total_steps])
    }

    pub fn multiplicative_log(total_steps: usize, sigma_total: f64) -> Self {
        let sigma = sigma_total / (total_steps as f64).sqrt();
        Self::bare(NoiseKind::MultiplicativeLog, vec![sigma; total_steps])
    }

    pub fn poisson_like(total_steps: usize, photon_scale: f64) -> Self {
        Self::bare(NoiseKind::PoissonLike, vec![photon_scale; total_steps])
    }

    pub fn outlier_points(total_steps: usize, points_per_step: usize, bounds: [f64; 4]) -> Self {
        let mut s = Self::bare(NoiseKind::OutlierPoints, vec![points_per_step as f64; total_steps]);
        s.bounds = Some(bounds);
        s
    }

    pub fn signal_interference(
        template: Vec<f64>,
        reference_power: f64,
        initial_snr_db: f64,
        decrements_db: Vec<f64>,
    ) -> Self {
        let mut s = Self::bare(NoiseKind::SignalInterference, decrements_db);
        s.template = Some(template);
        s.reference_power = Some(reference_power);
        s.initial_snr_db = Some(initial_snr_db);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(MidError::Config(format!("process ({}): {m}", self.kind.as_str())));
        if self.total_steps == 0 {
            return err("total_steps must be >= 1".into());
        }
        if self.per_step_magnitude.len() != self.total_steps {
            return err(format!(
                "per_step_magnitude has {} entries for total_steps = {}",
                self.per_step_magnitude.len(),
                self.total_steps
            ));
        }
        if let Some((i, m)) = self
            .per_step_magnitude
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return err(format!("per_step_magnitude[{i}] = {m} must be finite and > 0"));
        }
        match self.kind {
            NoiseKind::OutlierPoints => {
                if let Some(m) = self.per_step_magnitude.iter().find(|m| m.fract() != 0.0) {
                    return err(format!("point counts must be whole numbers, got {m}"));
                }
                match self.bounds {
                    Some([x0, y0, x1, y1]) if x0 < x1 && y0 < y1 => {}
                    _ => return err("bounds [x_min, y_min, x_max, y_max] with min < max required".into()),
                }
            }
            NoiseKind::SignalInterference => {
                let Some(tpl) = &self.template else {
                    return err("template required".into());
                };
                if tpl.is_empty() || !(power(tpl) > 0.0) {
                    return err("template must have positive power".into());
                }
                match self.reference_power {
                    Some(p) if p > 0.0 && p.is_finite() => {}
                    _ => return err("reference_power must be > 0".into()),
                }
                if !self.initial_snr_db.is_some_and(f64::is_finite) {
                    return err("initial_snr_db required".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Serializes to the repository's TOML config format.
    pub fn to_config_text(&self) -> String {
        toml::to_string(self).expect("spec is always representable")
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let spec: NoiseProcessSpec =
            toml::from_str(text).map_err(|e| MidError::Config(format!("process spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Interference amplitude (in template units) accumulated after `t` steps.
    fn interference_amplitude(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let snr = self.initial_snr_db.unwrap_or(0.0) - self.per_step_magnitude[..t].iter().sum::<f64>();
        let p_tpl = power(self.template.as_deref().unwrap_or(&[]));
        (self.reference_power.unwrap_or(0.0) / (p_tpl * 10f64.powf(snr / 10.0))).sqrt()
    }
}

/// One step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub s_prev: Tensor,
    pub s_t: Tensor,
    /// Realized increment, or per-point injection labels for outlier points.
    pub eps_eff: Tensor,
    pub t: usize,
    /// Negative inputs clamped to zero by the poisson-like kind.
    pub clamped: usize,
}

/// Advances `s_prev` by step `t` of the process.
pub fn noise_step<R: Rng + ?Sized>(
    s_prev: &Tensor,
    t: usize,
    spec: &NoiseProcessSpec,
    rng: &mut R,
) -> Result<TrajectorySample> {
    if t == 0 || t > spec.total_steps {
        return Err(MidError::Config(format!("step {t} outside 1..={}", spec.total_steps)));
    }
    let magnitude = spec.per_step_magnitude[t - 1];
    let mut clamped = 0;
    let s_t = match spec.kind {
        NoiseKind::GaussianAdditive => {
            if magnitude <= ZERO_NOISE_MAGNITUDE {
                s_prev.clone()
            } else {
                s_prev.map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    snap(v + magnitude * z)
                })
            }
        }
        NoiseKind::MultiplicativeLog => {
            if magnitude <= ZERO_NOISE_MAGNITUDE {
                s_prev.clone()
            } else {
                s_prev.map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    snap(v * (magnitude * z).exp())
                })
            }
        }
        NoiseKind::PoissonLike => s_prev.map(|v| {
            let v = if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            };
            let mean = magnitude * v;
            let k = if mean > 0.0 {
                Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean)
            } else {
                0.0
            };
            snap(k / magnitude)
        }),
        NoiseKind::OutlierPoints => {
            if s_prev.rank() != 2 || s_prev.shape()[1] != 2 {
                return Err(MidError::shape("outlier-points step", "[N, 2]", s_prev.shape()));
            }
            let [x0, y0, x1, y1] = spec.bounds.expect("validated");
            let n_new = magnitude as usize;
            let n_old = s_prev.shape()[0];
            let mut data = s_prev.data().to_vec();
            for _ in 0..n_new {
                data.push(rng.random_range(x0..x1));
                data.push(rng.random_range(y0..y1));
            }
            let mut labels = vec![0.0; n_old];
            labels.extend(std::iter::repeat_n(1.0, n_new));
            return Ok(TrajectorySample {
                s_prev: s_prev.clone(),
                s_t: Tensor::new(vec![n_old + n_new, 2], data)?,
                eps_eff: Tensor::from_vec(labels)?,
                t,
                clamped: 0,
            });
        }
        NoiseKind::SignalInterference => {
            let tpl = spec.template.as_deref().expect("validated");
            if tpl.len() != s_prev.len() {
                return Err(MidError::shape(
                    "signal-interference step",
                    format!("{} samples (template length)", tpl.len()),
                    s_prev.shape(),
                ));
            }
            let alpha = spec.interference_amplitude(t) - spec.interference_amplitude(t - 1);
            let mut out = s_prev.clone();
            for (v, &w) in out.data_mut().iter_mut().zip(tpl) {
                *v = snap(*v + alpha * w);
            }
            out
        }
    };
    let eps_eff = s_t.sub(s_prev)?;
    Ok(TrajectorySample {
        s_prev: s_prev.clone(),
        s_t,
        eps_eff,
        t,
        clamped,
    })
}

/// Applies steps `1..=t` to `s0`; `t = 0` returns `s0` unchanged.
pub fn noise_to<R: Rng + ?Sized>(s0: &Tensor, t: usize, spec: &NoiseProcessSpec, rng: &mut R) -> Result<Tensor> {
    if t > spec.total_steps {
        return Err(MidError::Config(format!("step {t} outside 0..={}", spec.total_steps)));
    }
    let mut s = s0.clone();
    for k in 1..=t {
        s = noise_step(&s, k, spec, rng)?.s_t;
    }
    Ok(s)
}

/// Materializes the full trajectory `s_0 -> s_T` as `T` samples.
pub fn trajectory<R: Rng + ?Sized>(s0: &Tensor, spec: &NoiseProcessSpec, rng: &mut R) -> Result<Vec<TrajectorySample>> {
    let mut out: Vec<TrajectorySample> = Vec::with_capacity(spec.total_steps);
    for t in 1..=spec.total_steps {
        let prev = out.last().map_or(s0, |s| &s.s_t);
        let sample = noise_step(prev, t, spec, rng)?;
        out.push(sample);
    }
    Ok(out)
}

/// Labels for an outlier-points state: 1 for every point injected by any
/// step, i.e. every index at or past the original point count.
pub fn injected_labels(n_original: usize, n_total: usize) -> Vec<f64> {
    (0..n_total).map(|i| if i >= n_original { 1.0 } else { 0.0 }).collect()
}

/// Returns `signal + α·interference` with α chosen so that
/// `10·log10(P_signal / P_{α·interference}) == snr_db`.
pub fn mix_at_snr(signal: &Tensor, interference: &Tensor, snr_db: f64) -> Result<Tensor> {
    signal.expect_same_shape(interference, "mix_at_snr")?;
    let p_i = power(interference.data());
    if !(p_i > 0.0) {
        return Err(MidError::Config("interference has zero power".into()));
    }
    let alpha = interference_scale(power(signal.data()), p_i, snr_db);
    signal.zip_map(interference, |s, i| s + alpha * i)
}

/// Amplitude factor that puts an interference of power `p_interference` at
/// `snr_db` below a signal of power `p_signal`.
pub fn interference_scale(p_signal: f64, p_interference: f64, snr_db: f64) -> f64 {
    (p_signal / (p_interference * 10f64.powf(snr_db / 10.0))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ramp(n: usize) -> Tensor {
        snap_to_lattice(&Tensor::from_vec((0..n).map(|i| 0.1 + 0.8 * i as f64 / n as f64).collect()).unwrap())
    }

    #[test]
    fn zero_noise_mode_is_identity() {
        let spec = NoiseProcessSpec::bare(NoiseKind::GaussianAdditive, vec![1e-300; 3]);
        let s = Tensor::from_vec(vec![0.0, 1e-7, 0.3]).unwrap();
        let sample = noise_step(&s, 2, &spec, &mut rng(0)).unwrap();
        assert_eq!(sample.s_t, s);
        assert!(sample.eps_eff.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn step_out_of_range_rejected() {
        let spec = NoiseProcessSpec::gaussian(4, 0.1);
        let s = ramp(4);
        assert!(noise_step(&s, 0, &spec, &mut rng(0)).is_err());
        assert!(noise_step(&s, 5, &spec, &mut rng(0)).is_err());
        assert!(noise_to(&s, 5, &spec, &mut rng(0)).is_err());
    }

    #[test]
    fn noise_to_zero_is_identity() {
        let spec = NoiseProcessSpec::gaussian(4, 0.1);
        let s = ramp(5);
        assert_eq!(noise_to(&s, 0, &spec, &mut rng(3)).unwrap(), s);
    }

    #[test]
    fn noise_to_equals_iterated_steps() {
        let spec = NoiseProcessSpec::poisson_like(5, 50.0);
        let s0 = ramp(16);
        let direct = noise_to(&s0, 5, &spec, &mut rng(9)).unwrap();
        let mut r = rng(9);
        let mut s = s0;
        for t in 1..=5 {
            s = noise_step(&s, t, &spec, &mut r).unwrap().s_t;
        }
        assert_eq!(direct, s);
    }

    #[test]
    fn bookkeeping_is_exact_for_regression_kinds() {
        let n = 64;
        let template: Vec<f64> = (0..n).map(|i| (i as f64 * 0.4).sin()).collect();
        let specs = [
            NoiseProcessSpec::gaussian(6, 0.3),
            NoiseProcessSpec::multiplicative_log(6, 0.3),
            NoiseProcessSpec::poisson_like(6, 20.0),
            NoiseProcessSpec::signal_interference(template, 0.2, 5.0, vec![2.0; 6]),
        ];
        for spec in &specs {
            spec.validate().unwrap();
            let traj = trajectory(&ramp(n), spec, &mut rng(4)).unwrap();
            for s in &traj {
                let resid = s.s_t.sub(&s.s_prev).unwrap().sub(&s.eps_eff).unwrap();
                assert!(resid.data().iter().all(|&r| r == 0.0), "{:?}", spec.kind);
                assert_eq!(s.s_t.sub(&s.eps_eff).unwrap(), s.s_prev, "{:?}", spec.kind);
            }
        }
    }

    #[test]
    fn outliers_are_appended_and_labelled() {
        let spec = NoiseProcessSpec::outlier_points(3, 5, [0.0, 0.0, 1.0, 1.0]);
        let pts = Tensor::new(vec![10, 2], vec![0.5; 20]).unwrap();
        let s = noise_step(&pts, 1, &spec, &mut rng(1)).unwrap();
        assert_eq!(s.s_t.shape(), &[15, 2]);
        assert_eq!(s.eps_eff.sum(), 5.0);
        assert!(s.eps_eff.data()[10..].iter().all(|&l| l == 1.0));
        assert_eq!(&s.s_t.data()[..20], pts.data());
        assert!(s.s_t.data()[20..].iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn poisson_clamps_negative_inputs() {
        let spec = NoiseProcessSpec::poisson_like(1, 10.0);
        let s = Tensor::from_vec(vec![-0.5, 0.5, -1.0]).unwrap();
        let out = noise_step(&s, 1, &spec, &mut rng(2)).unwrap();
        assert_eq!(out.clamped, 2);
        assert_eq!(out.s_t.data()[0], 0.0);
        assert_eq!(out.s_t.data()[2], 0.0);
    }

    #[test]
    fn interference_follows_snr_schedule() {
        let n = 200;
        let template: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let spec = NoiseProcessSpec::signal_interference(template, 0.5, 0.0, vec![3.0, 2.0, 1.0]);
        let s0 = Tensor::zeros(&[n]);
        for t in 1..=3 {
            let st = noise_to(&s0, t, &spec, &mut rng(0)).unwrap();
            let snr = 10.0 * (0.5 / power(st.data())).log10();
            let expected = -[3.0, 5.0, 6.0][t - 1];
            assert!((snr - expected).abs() < 1e-6, "t={t}: {snr} vs {expected}");
        }
    }

    #[test]
    fn same_seed_same_trajectory_different_seed_differs() {
        let spec = NoiseProcessSpec::gaussian(3, 0.2);
        let a = trajectory(&ramp(8), &spec, &mut rng(5)).unwrap();
        let b = trajectory(&ramp(8), &spec, &mut rng(5)).unwrap();
        let c = trajectory(&ramp(8), &spec, &mut rng(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].s_t, c[0].s_t);
    }

    #[test]
    fn mix_at_snr_definitions() {
        let sig = Tensor::from_vec((0..100).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let itf = Tensor::from_vec((0..100).map(|i| ((i * 7 % 13) as f64) - 6.0).collect()).unwrap();
        for (snr, ratio) in [(0.0, 1.0), (-10.0, 10.0)] {
            let mixed = mix_at_snr(&sig, &itf, snr).unwrap();
            let scaled = mixed.sub(&sig).unwrap();
            let r = power(scaled.data()) / power(sig.data());
            assert!((r - ratio).abs() < 1e-12 * ratio, "{snr}: {r}");
        }
        assert!(mix_at_snr(&sig, &Tensor::zeros(&[100]), 0.0).is_err());
    }

    #[test]
    fn spec_validation_and_text_round_trip() {
        let spec = NoiseProcessSpec::outlier_points(4, 3, [0.0, 0.0, 1.0, 1.0]);
        let text = spec.to_config_text();
        assert_eq!(NoiseProcessSpec::from_config_text(&text).unwrap(), spec);

        let mut bad = NoiseProcessSpec::gaussian(3, 0.1);
        bad.per_step_magnitude.pop();
        assert!(bad.validate().is_err());
        let mut neg = NoiseProcessSpec::gaussian(3, 0.1);
        neg.per_step_magnitude[1] = -1.0;
        assert!(neg.validate().is_err());
        assert!(NoiseProcessSpec::from_config_text(
            "kind = \"gaussian-additive\"\ntotal_steps = 1\nper_step_magnitude = [0.1]\nbogus = 1\n"
        )
        .is_err());
    }
}
