//! Synthetic corpora with full ground truth: multi-line point scenes,
//! procedural grayscale textures, and surrogate sEMG / ECG signal pairs.
//!
//! Every generator is a pure function of its spec and the generator state.
//! Image and signal outputs are snapped onto the noise-state lattice so
//! trajectories started from them reverse exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{MidError, Result};
use crate::metrics::LineModel;
use crate::noise::snap_to_lattice;
use crate::numerics::Tensor;

const MIN_SEGMENT_LENGTH: f64 = 0.1;
const MAX_LINE_RETRIES: usize = 1000;

/// Multi-line scene recipe in the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_lines: usize,
    /// Inclusive range of points sampled per line.
    pub points_per_line: [usize; 2],
    /// Range the per-line perpendicular jitter std is drawn from.
    pub inlier_noise_std: [f64; 2],
    /// Range the outlier share of all points is drawn from.
    pub outlier_fraction: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_lines: 2,
            points_per_line: [40, 100],
            inlier_noise_std: [0.007, 0.008],
            outlier_fraction: [0.40, 0.60],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(MidError::Config(format!("scene spec: {m}")));
        if !(1..=10).contains(&self.n_lines) {
            return err("n_lines must be in 1..=10");
        }
        let [p0, p1] = self.points_per_line;
        if !(40 <= p0 && p0 <= p1 && p1 <= 100) {
            return err("points_per_line must lie within [40, 100]");
        }
        let [s0, s1] = self.inlier_noise_std;
        if !(0.007 <= s0 && s0 <= s1 && s1 <= 0.008) {
            return err("inlier_noise_std must lie within [0.007, 0.008]");
        }
        let [f0, f1] = self.outlier_fraction;
        if !(0.40 <= f0 && f0 <= f1 && f1 <= 0.60) {
            return err("outlier_fraction must lie within [0.40, 0.60]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLine {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub noise_std: f64,
    pub n_points: usize,
}

impl GroundTruthLine {
    pub fn model(&self) -> LineModel {
        LineModel::through(self.start, self.end).expect("segments have positive length")
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    /// Endpoints and midpoint, used to match estimated lines.
    pub fn probe_points(&self) -> Vec<[f64; 2]> {
        let mid = [0.5 * (self.start[0] + self.end[0]), 0.5 * (self.start[1] + self.end[1])];
        vec![self.start, mid, self.end]
    }
}

/// Points with per-point outlier labels (1 = outlier) and source lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    /// Source line of each inlier; `None` for outliers.
    pub line_ids: Vec<Option<usize>>,
    pub lines: Vec<GroundTruthLine>,
}

impl Scene {
    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// The scene with its outliers removed.
    pub fn inliers_only(&self) -> Scene {
        let keep: Vec<usize> = (0..self.points.len()).filter(|&i| self.labels[i] == 0).collect();
        Scene {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            labels: vec![0; keep.len()],
            line_ids: keep.iter().map(|&i| self.line_ids[i]).collect(),
            lines: self.lines.clone(),
        }
    }

    pub fn truth_for_matching(&self) -> Vec<(LineModel, Vec<[f64; 2]>)> {
        self.lines.iter().map(|l| (l.model(), l.probe_points())).collect()
    }

    /// CSV with header `x,y,label`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,label\n");
        for (p, l) in self.points.iter().zip(&self.labels) {
            writeln!(s, "{},{},{}", p[0], p[1], l).unwrap();
        }
        s
    }

    /// Ground-truth sidecar: everything except the point list.
    pub fn ground_truth_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            lines: &'a [GroundTruthLine],
            labels: &'a [u8],
            line_ids: &'a [Option<usize>],
        }
        serde_json::to_string_pretty(&Sidecar {
            lines: &self.lines,
            labels: &self.labels,
            line_ids: &self.line_ids,
        })
        .expect("plain data serializes")
    }
}

/// Parses `x,y[,label]` CSV (header required). Missing labels read as 0.
pub fn points_from_csv(text: &str) -> Result<(Vec<[f64; 2]>, Vec<u8>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MidError::Malformed("empty point CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "x" || cols[1] != "y" {
        return Err(MidError::Malformed(format!(
            "point CSV header must start with x,y; got {header:?}"
        )));
    }
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .ok_or_else(|| MidError::Malformed(format!("row {}: missing column {i}", ln + 2)))?
                .parse::<f64>()
                .map_err(|e| MidError::Malformed(format!("row {}: {e}", ln + 2)))
        };
        pts.push([num(0)?, num(1)?]);
        labels.push(if f.len() > 2 { num(2)? as u8 } else { 0 });
    }
    Ok((pts, labels))
}

pub fn points_to_tensor(points: &[[f64; 2]]) -> Result<Tensor> {
    Tensor::new(vec![points.len(), 2], points.iter().flatten().copied().collect())
}

pub fn tensor_to_points(t: &Tensor) -> Result<Vec<[f64; 2]>> {
    if t.rank() != 2 || t.shape()[1] != 2 {
        return Err(MidError::shape("point set", "[N, 2]", t.shape()));
    }
    Ok(t.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Clips the infinite line through `p` with direction `angle` to the unit
/// square.
fn clip_to_unit_square(p: [f64; 2], angle: f64) -> Option<([f64; 2], [f64; 2])> {
    let d = [angle.cos(), angle.sin()];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..2 {
        if d[k].abs() < 1e-12 {
            if !(0.0..=1.0).contains(&p[k]) {
                return None;
            }
            continue;
        }
        let a = (0.0 - p[k]) / d[k];
        let b = (1.0 - p[k]) / d[k];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (lo < hi).then(|| {
        (
            [p[0] + lo * d[0], p[1] + lo * d[1]],
            [p[0] + hi * d[0], p[1] + hi * d[1]],
        )
    })
}

/// Draws one scene: random chords of the unit square populated with
/// perpendicularly jittered points, plus uniform outliers making up the drawn
/// fraction of all points. Point order is shuffled.
pub fn gen_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let mut points = Vec::new();
    let mut line_ids = Vec::new();
    let mut lines = Vec::with_capacity(spec.n_lines);
    for li in 0..spec.n_lines {
        let mut segment = None;
        for _ in 0..MAX_LINE_RETRIES {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let angle = rng.random_range(0.0..PI);
            if let Some((a, b)) = clip_to_unit_square(p, angle) {
                if (b[0] - a[0]).hypot(b[1] - a[1]) >= MIN_SEGMENT_LENGTH {
                    segment = Some((a, b));
                    break;
                }
            }
        }
        let (start, end) = segment.ok_or_else(|| {
            MidError::Internal(format!(
                "no line of length >= {MIN_SEGMENT_LENGTH} after {MAX_LINE_RETRIES} draws"
            ))
        })?;
        let n = rng.random_range(spec.points_per_line[0]..=spec.points_per_line[1]);
        let sigma = if spec.inlier_noise_std[0] < spec.inlier_noise_std[1] {
            rng.random_range(spec.inlier_noise_std[0]..=spec.inlier_noise_std[1])
        } else {
            spec.inlier_noise_std[0]
        };
        let gt = GroundTruthLine {
            start,
            end,
            noise_std: sigma,
            n_points: n,
        };
        let normal = gt.model().normal;
        for _ in 0..n {
            let u: f64 = rng.random();
            let z: f64 = rng.sample(StandardNormal);
            points.push([
                start[0] + u * (end[0] - start[0]) + sigma * z * normal[0],
                start[1] + u * (end[1] - start[1]) + sigma * z * normal[1],
            ]);
            line_ids.push(Some(li));
        }
        lines.push(gt);
    }
    let n_in = points.len();
    let f = if spec.outlier_fraction[0] < spec.outlier_fraction[1] {
        rng.random_range(spec.outlier_fraction[0]..=spec.outlier_fraction[1])
    } else {
        spec.outlier_fraction[0]
    };
    let n_out = (f / (1.0 - f) * n_in as f64).round() as usize;
    for _ in 0..n_out {
        points.push([rng.random(), rng.random()]);
        line_ids.push(None);
    }
    let mut labels: Vec<u8> = (0..points.len()).map(|i| u8::from(i >= n_in)).collect();

    // Fisher-Yates, keeping the three arrays aligned
    for i in (1..points.len()).rev() {
        let j = rng.random_range(0..=i);
        points.swap(i, j);
        labels.swap(i, j);
        line_ids.swap(i, j);
    }
    Ok(Scene {
        points,
        labels,
        line_ids,
        lines,
    })
}

/// Smooth procedural texture in `[0, 1]`, shape `[height, width]`: a few
/// low-frequency sinusoidal gratings plus random step edges, min-max
/// normalized.
pub fn gen_texture_image<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Result<Tensor> {
    if width == 0 || height == 0 {
        return Err(MidError::Config(format!(
            "image dims must be positive, got {width}x{height}"
        )));
    }
    struct Grating {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: f64,
    }
    struct Edge {
        nx: f64,
        ny: f64,
        c: f64,
        amp: f64,
    }
    let gratings: Vec<Grating> = (0..4)
        .map(|_| {
            let cycles = rng.random_range(0.5..3.0);
            let theta = rng.random_range(0.0..PI);
            Grating {
                fx: cycles * theta.cos(),
                fy: cycles * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp: rng.random_range(0.5..1.0),
            }
        })
        .collect();
    let edges: Vec<Edge> = (0..2)
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let (nx, ny) = (theta.cos(), theta.sin());
            let (px, py) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Edge {
                nx,
                ny,
                c: nx * px + ny * py,
                amp: sign * rng.random_range(0.3..0.8),
            }
        })
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let mut val = 0.0;
            for g in &gratings {
                val += g.amp * (2.0 * PI * (g.fx * u + g.fy * v) + g.phase).sin();
            }
            for e in &edges {
                if e.nx * u + e.ny * v > e.c {
                    val += e.amp;
                }
            }
            data.push(val);
        }
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in &mut data {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.5 };
    }
    Ok(snap_to_lattice(&Tensor::new(vec![height, width], data)?))
}

/// Surrogate sEMG / ECG recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub sample_rate: f64,
    pub duration_s: f64,
    /// sEMG pass band in Hz.
    pub semg_band: [f64; 2],
    /// Muscle burst rate of the sEMG amplitude envelope, Hz.
    pub burst_rate_hz: f64,
    /// Nominal heart rate, beats per second.
    pub ecg_rate_hz: f64,
    /// Relative spread of the per-signal heart rate.
    pub rate_jitter: f64,
    /// Relative spread of per-beat amplitudes.
    pub amplitude_jitter: f64,
    /// Mixing SNRs in dB.
    pub snr_db: Vec<f64>,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            sample_rate: 1000.0,
            duration_s: 4.0,
            semg_band: [20.0, 450.0],
            burst_rate_hz: 0.5,
            ecg_rate_hz: 1.2,
            rate_jitter: 0.1,
            amplitude_jitter: 0.1,
            snr_db: vec![-5.0, -7.0, -9.0, -11.0, -13.0, -15.0],
        }
    }
}

impl SignalSpec {
    pub fn n_samples(&self) -> usize {
        (self.sample_rate * self.duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        let ok = self.sample_rate > 0.0
            && self.duration_s > 0.0
            && self.n_samples() >= 16
            && 0.0 < self.semg_band[0]
            && self.semg_band[0] < self.semg_band[1]
            && self.semg_band[1] <= nyquist
            && self.burst_rate_hz > 0.0
            && self.ecg_rate_hz > 0.0
            && (0.0..1.0).contains(&self.rate_jitter)
            && (0.0..1.0).contains(&self.amplitude_jitter)
            && self.snr_db.iter().all(|s| s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MidError::Config(format!("invalid signal spec {self:?}")))
        }
    }
}

/// Unmixed surrogate components.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub clean_semg: Tensor,
    pub interference_ecg: Tensor,
    /// Beat period of the ECG surrogate in samples.
    pub ecg_period_samples: f64,
}

/// One heartbeat: P, Q, R, S, T bumps around the R peak at `t = 0` seconds.
fn ecg_beat(t: f64) -> f64 {
    const WAVES: [(f64, f64, f64); 5] = [
        (0.15, -0.20, 0.025),
        (-0.10, -0.03, 0.008),
        (1.00, 0.00, 0.010),
        (-0.15, 0.03, 0.008),
        (0.30, 0.25, 0.040),
    ];
    WAVES
        .iter()
        .map(|(a, mu, w)| a * (-0.5 * ((t - mu) / w).powi(2)).exp())
        .sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Band-limited, burst-modulated noise (sEMG surrogate) and a periodic beat
/// train (ECG surrogate). Both are zero-mean.
pub fn gen_signal_pair<R: Rng + ?Sized>(spec: &SignalSpec, rng: &mut R) -> Result<SignalPair> {
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate;

    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < spec.semg_band[0] || f > spec.semg_band[1] {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut semg: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let sd = (semg.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let phase = rng.random_range(0.0..PI);
    for (i, v) in semg.iter_mut().enumerate() {
        let env = 0.3 + 0.7 * (PI * spec.burst_rate_hz * i as f64 / fs + phase).sin().powi(2);
        *v = *v / sd * env;
    }
    remove_mean(&mut semg);

    let rate = spec.ecg_rate_hz * (1.0 + spec.rate_jitter * rng.random_range(-1.0..1.0));
    let period = 1.0 / rate;
    let mut ecg = vec![0.0; n];
    let mut beat_t = rng.random_range(0.0..period) - period;
    let end_t = n as f64 / fs + period;
    while beat_t < end_t {
        let amp = 1.0 + spec.amplitude_jitter * rng.random_range(-1.0..1.0);
        let lo = (((beat_t - 0.4) * fs).floor().max(0.0)) as usize;
        let hi = (((beat_t + 0.5) * fs).ceil().max(0.0) as usize).min(n);
        for (i, v) in ecg.iter_mut().enumerate().take(hi).skip(lo) {
            *v += amp * ecg_beat(i as f64 / fs - beat_t);
        }
        beat_t += period;
    }
    remove_mean(&mut ecg);

    Ok(SignalPair {
        clean_semg: snap_to_lattice(&Tensor::from_vec(semg)?),
        interference_ecg: snap_to_lattice(&Tensor::from_vec(ecg)?),
        ecg_period_samples: period * fs,
    })
}

/// 8-bit binary PGM (P5) of an image in `[0, max_value]`, clamped.
pub fn to_pgm(image: &Tensor, max_value: f64) -> Result<Vec<u8>> {
    if image.rank() != 2 {
        return Err(MidError::shape("pgm export", "[H, W]", image.shape()));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| ((v / max_value).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn outlier_count_follows_fraction_of_total() {
        let spec = SceneSpec {
            n_lines: 1,
            points_per_line: [100, 100],
            inlier_noise_std: [0.007, 0.007],
            outlier_fraction: [0.5, 0.5],
        };
        let scene = gen_scene(&spec, &mut rng(0)).unwrap();
        assert_eq!(scene.points.len(), 200);
        assert_eq!(scene.n_outliers(), 100);
    }

    #[test]
    fn labels_partition_points() {
        let scene = gen_scene(&SceneSpec::default(), &mut rng(1)).unwrap();
        assert_eq!(scene.labels.len(), scene.points.len());
        assert_eq!(scene.line_ids.len(), scene.points.len());
        for (l, id) in scene.labels.iter().zip(&scene.line_ids) {
            assert_eq!(*l == 1, id.is_none());
        }
        let n_in: usize = scene.lines.iter().map(|l| l.n_points).sum();
        assert_eq!(n_in + scene.n_outliers(), scene.points.len());
        assert!(scene.lines.iter().all(|l| l.length() >= MIN_SEGMENT_LENGTH));
        let frac = scene.n_outliers() as f64 / scene.points.len() as f64;
        assert!((0.39..=0.61).contains(&frac), "{frac}");
    }

    #[test]
    fn inlier_residual_std_matches_drawn_sigma() {
        let spec = SceneSpec {
            n_lines: 1,
            ..SceneSpec::default()
        };
        let mut r = rng(2);
        let (mut sum_ratio_sq, mut count) = (0.0, 0usize);
        while count < 10_000 {
            let scene = gen_scene(&spec, &mut r).unwrap();
            let gt = &scene.lines[0];
            let model = gt.model();
            for (p, id) in scene.points.iter().zip(&scene.line_ids) {
                if id.is_some() {
                    let d = model.normal[0] * p[0] + model.normal[1] * p[1] - model.offset;
                    sum_ratio_sq += (d / gt.noise_std).powi(2);
                    count += 1;
                }
            }
        }
        let ratio = (sum_ratio_sq / count as f64).sqrt();
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn scene_spec_ranges_enforced() {
        let bad = SceneSpec {
            outlier_fraction: [0.3, 0.5],
            ..SceneSpec::default()
        };
        assert!(gen_scene(&bad, &mut rng(0)).is_err());
        let bad = SceneSpec {
            n_lines: 11,
            ..SceneSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let scene = gen_scene(&SceneSpec::default(), &mut rng(3)).unwrap();
        let (pts, labels) = points_from_csv(&scene.to_csv()).unwrap();
        assert_eq!(pts, scene.points);
        assert_eq!(labels, scene.labels);
        assert!(points_from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn texture_in_unit_range_and_deterministic() {
        let a = gen_texture_image(16, 12, &mut rng(4)).unwrap();
        let b = gen_texture_image(16, 12, &mut rng(4)).unwrap();
        assert_eq!(a.shape(), &[12, 16]);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gen_texture_image(0, 4, &mut rng(4)).is_err());
    }

    fn lag1_autocorr(img: &Tensor) -> f64 {
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let mu = img.mean();
        let d = img.data();
        let var: f64 = d.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d.len() as f64;
        let (mut acc, mut n) = (0.0, 0);
        for y in 0..h {
            for x in 0..w - 1 {
                acc += (d[y * w + x] - mu) * (d[y * w + x + 1] - mu);
                n += 1;
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                acc += (d[y * w + x] - mu) * (d[(y + 1) * w + x] - mu);
                n += 1;
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn textures_are_spatially_correlated() {
        for seed in 0..100 {
            let img = gen_texture_image(16, 16, &mut rng(seed)).unwrap();
            let r = lag1_autocorr(&img);
            assert!(r > 0.5, "seed {seed}: lag-1 autocorrelation {r}");
        }
    }

    #[test]
    fn ecg_autocorrelation_peaks_at_period() {
        for seed in 0..5 {
            let pair = gen_signal_pair(&SignalSpec::default(), &mut rng(seed)).unwrap();
            let x = pair.interference_ecg.data();
            let p = pair.ecg_period_samples;
            let (lo, hi) = ((0.5 * p) as usize, (1.5 * p) as usize);
            let ac = |lag: usize| -> f64 {
                x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / (x.len() - lag) as f64
            };
            let best = (lo..hi).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
            assert!((best as f64 - p).abs() <= 1.0, "seed {seed}: peak {best} vs period {p}");
        }
    }

    #[test]
    fn signals_zero_mean_positive_power() {
        let pair = gen_signal_pair(&SignalSpec::default(), &mut rng(9)).unwrap();
        for s in [&pair.clean_semg, &pair.interference_ecg] {
            let scale = s.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(s.mean().abs() <= 1e-6 * scale);
            assert!(crate::metrics::power(s.data()) > 0.0);
        }
    }

    #[test]
    fn pgm_header() {
        let img = Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap();
        let pgm = to_pgm(&img, 1.0).unwrap();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[0, 128, 255, 255, 0, 64]);
    }
}
