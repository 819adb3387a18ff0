//! Step-prediction network Ψ, noise-prediction network Φ, and their losses.
//!
//! Two input families share one contract:
//!
//! - grid inputs (`[H, W]` images, or `[L]` signals treated as `[1, L]`) use
//!   3×3 convolutions; Φ regresses a per-element increment of the input
//!   shape.
//! - point sets (`[N, 2]`) get a fixed per-point descriptor (centered
//!   coordinates, log k-NN distances, local linearity) followed by shared
//!   per-point layers and mean pooling; Φ outputs one noise probability per
//!   point from the point's own embedding concatenated with the pooled
//!   context, so it is permutation-equivariant.
//!
//! The step is fed to Φ as `t / T` through a `concat-step-embedding` layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MidError, Result};
use crate::numerics::{Layer, LayerCache, LayerSpec, Param, Stack, StackCache, Tensor};

/// Probability clamp applied before taking logs in the BCE loss.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    Image,
    Signal,
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Regression,
    Classification,
}

/// Desk-scale architecture description, embedded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input: InputKind,
    /// Image height; 1 for signals; ignored for points.
    #[serde(default)]
    pub height: usize,
    /// Image width or signal length; ignored for points.
    #[serde(default)]
    pub width: usize,
    /// Convolution channels (grid inputs).
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Dense hidden width.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_channels() -> usize {
    16
}

fn default_hidden() -> usize {
    32
}

impl ArchSpec {
    pub fn image(height: usize, width: usize) -> Self {
        ArchSpec {
            input: InputKind::Image,
            height,
            width,
            channels: default_channels(),
            hidden: default_hidden(),
        }
    }

    pub fn signal(length: usize) -> Self {
        ArchSpec {
            input: InputKind::Signal,
            height: 1,
            width: length,
            channels: default_channels(),
            hidden: default_hidden(),
        }
    }

    pub fn points() -> Self {
        ArchSpec {
            input: InputKind::Points,
            height: 0,
            width: 0,
            channels: default_channels(),
            hidden: default_hidden(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid_ok = match self.input {
            InputKind::Image => self.height > 0 && self.width > 0,
            InputKind::Signal => self.height == 1 && self.width > 0,
            InputKind::Points => true,
        };
        if !grid_ok || self.channels == 0 || self.hidden == 0 {
            return Err(MidError::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn noise_mode(&self) -> NoiseMode {
        match self.input {
            InputKind::Points => NoiseMode::Classification,
            _ => NoiseMode::Regression,
        }
    }

    /// Shape a state tensor must have.
    pub fn state_shape_ok(&self, shape: &[usize]) -> bool {
        match self.input {
            InputKind::Image => shape == [self.height, self.width],
            InputKind::Signal => shape == [self.width],
            InputKind::Points => shape.len() == 2 && shape[1] == 2,
        }
    }

    fn expected_shape(&self) -> String {
        match self.input {
            InputKind::Image => format!("[{}, {}]", self.height, self.width),
            InputKind::Signal => format!("[{}]", self.width),
            InputKind::Points => "[N, 2]".into(),
        }
    }

    fn check_state(&self, s: &Tensor, what: &str) -> Result<()> {
        if self.state_shape_ok(s.shape()) {
            Ok(())
        } else {
            Err(MidError::shape(what, self.expected_shape(), s.shape()))
        }
    }

    /// State as network input: `[H, W, 1]` for grids, descriptors for points.
    fn encode(&self, s: &Tensor) -> Result<Tensor> {
        match self.input {
            InputKind::Image | InputKind::Signal => s.clone().reshape(&[self.height, self.width, 1]),
            InputKind::Points => point_descriptors(s),
        }
    }
}

/// Neighbor ranks whose log-distances enter the point descriptor.
const KNN_RANKS: [usize; 4] = [2, 4, 8, 16];
/// Neighborhood size for the linearity feature.
const LINEARITY_K: usize = 8;
/// Width of the per-point descriptor.
pub const POINT_FEATURES: usize = 2 + KNN_RANKS.len() + 1;

/// Fixed per-point descriptor of an `[N, 2]` set, shape `[N, POINT_FEATURES]`:
/// centered coordinates, scaled log distances to the 2nd/4th/8th/16th
/// nearest neighbors, and the normalized smallest-eigenvalue share of the
/// local scatter (0 on a line, 1 for isotropic neighborhoods).
pub fn point_descriptors(points: &Tensor) -> Result<Tensor> {
    if points.rank() != 2 || points.shape()[1] != 2 {
        return Err(MidError::shape("point descriptors", "[N, 2]", points.shape()));
    }
    let p = points.data();
    let n = points.shape()[0];
    let mut out = Vec::with_capacity(n * POINT_FEATURES);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, yi) = (p[2 * i], p[2 * i + 1]);
        dists.clear();
        for j in (0..n).filter(|&j| j != i) {
            let (dx, dy) = (p[2 * j] - xi, p[2 * j + 1] - yi);
            dists.push((dx * dx + dy * dy, j));
        }
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push(xi - 0.5);
        out.push(yi - 0.5);
        for &k in &KNN_RANKS {
            let d = dists.get(k - 1).or(dists.last()).map_or(1.0, |d| d.0.sqrt());
            out.push(((d + 1e-6).ln() + 4.0) / 2.0);
        }
        let nb = &dists[..dists.len().min(LINEARITY_K)];
        let mut lin = 1.0;
        if nb.len() >= 2 {
            let m = nb.len() as f64 + 1.0;
            let (mut mx, mut my) = (xi, yi);
            for &(_, j) in nb {
                mx += p[2 * j];
                my += p[2 * j + 1];
            }
            mx /= m;
            my /= m;
            let (mut sxx, mut syy, mut sxy) = ((xi - mx).powi(2), (yi - my).powi(2), (xi - mx) * (yi - my));
            for &(_, j) in nb {
                let (dx, dy) = (p[2 * j] - mx, p[2 * j + 1] - my);
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            let tr = sxx + syy;
            if tr > 0.0 {
                let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
                let small = 0.5 * (tr - disc);
                lin = (2.0 * small / tr).clamp(0.0, 1.0);
            }
        }
        out.push(lin);
    }
    Tensor::new(vec![n, POINT_FEATURES], out)
}

/// Ψ: maps a state to `t̂ / T` in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPredictor {
    pub arch: ArchSpec,
    pub net: Stack,
}

pub struct StepCache {
    stack: StackCache,
}

impl StepPredictor {
    pub fn new<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (c, h) = (arch.channels, arch.hidden);
        let specs: Vec<LayerSpec> = match arch.input {
            InputKind::Image | InputKind::Signal => vec![
                LayerSpec::Conv2d3x3 {
                    in_channels: 1,
                    out_channels: c,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d3x3 {
                    in_channels: c,
                    out_channels: c,
                },
                LayerSpec::Relu,
                LayerSpec::MeanPoolOverPoints,
                LayerSpec::Dense { input: c, output: h },
                LayerSpec::Relu,
                LayerSpec::Dense { input: h, output: 1 },
                LayerSpec::Sigmoid,
            ],
            InputKind::Points => vec![
                LayerSpec::Dense {
                    input: POINT_FEATURES,
                    output: h,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { input: h, output: h },
                LayerSpec::Relu,
                LayerSpec::MeanPoolOverPoints,
                LayerSpec::Dense { input: h, output: h },
                LayerSpec::Relu,
                LayerSpec::Dense { input: h, output: 1 },
                LayerSpec::Sigmoid,
            ],
        };
        Ok(StepPredictor {
            arch: arch.clone(),
            net: Stack::new(&specs, "psi", rng),
        })
    }

    pub fn forward_train(&self, s: &Tensor) -> Result<(f64, StepCache)> {
        self.arch.check_state(s, "step predictor input")?;
        let x = self.arch.encode(s)?;
        let (out, stack) = self.net.forward(&x, None)?;
        Ok((out.data()[0], StepCache { stack }))
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, cache: &StepCache, d_out: f64) -> Result<Vec<Tensor>> {
        let up = Tensor::new(vec![1], vec![d_out])?;
        Ok(self.net.backward(&cache.stack, &up)?.1)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.net.params_mut()
    }
}

/// Φ: predicts the step increment (regression) or per-point noise
/// probability (classification).
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor {
    pub arch: ArchSpec,
    pub mode: NoiseMode,
    /// Whole network for grids; per-point encoder for point sets.
    pub encoder: Stack,
    pub pool: Option<Layer>,
    /// Per-point head over `[embedding, pooled context]` (point sets only).
    pub head: Option<Stack>,
}

pub struct NoiseCache {
    encoder: StackCache,
    pool: Option<LayerCache>,
    head: Option<StackCache>,
    out_shape: Vec<usize>,
}

impl NoisePredictor {
    pub fn new<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (c, h) = (arch.channels, arch.hidden);
        let mode = arch.noise_mode();
        match arch.input {
            InputKind::Image | InputKind::Signal => {
                let specs = [
                    LayerSpec::ConcatStepEmbedding,
                    LayerSpec::Conv2d3x3 {
                        in_channels: 2,
                        out_channels: c,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d3x3 {
                        in_channels: c,
                        out_channels: c,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d3x3 {
                        in_channels: c,
                        out_channels: 1,
                    },
                ];
                Ok(NoisePredictor {
                    arch: arch.clone(),
                    mode,
                    encoder: Stack::new(&specs, "phi", rng),
                    pool: None,
                    head: None,
                })
            }
            InputKind::Points => {
                let enc = [
                    LayerSpec::ConcatStepEmbedding,
                    LayerSpec::Dense {
                        input: POINT_FEATURES + 1,
                        output: h,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: h, output: h },
                    LayerSpec::Relu,
                ];
                let head = [
                    LayerSpec::Dense {
                        input: 2 * h,
                        output: h,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense { input: h, output: 1 },
                    LayerSpec::Sigmoid,
                ];
                Ok(NoisePredictor {
                    arch: arch.clone(),
                    mode,
                    encoder: Stack::new(&enc, "phi.enc", rng),
                    pool: Some(Layer::new(LayerSpec::MeanPoolOverPoints, "phi.pool", rng)),
                    head: Some(Stack::new(&head, "phi.head", rng)),
                })
            }
        }
    }

    pub fn forward_train(&self, s: &Tensor, t: usize, total_steps: usize) -> Result<(Tensor, NoiseCache)> {
        self.arch.check_state(s, "noise predictor input")?;
        if t == 0 || t > total_steps {
            return Err(MidError::Config(format!("step {t} outside 1..={total_steps}")));
        }
        let step = t as f64 / total_steps as f64;
        let x = self.arch.encode(s)?;
        let (emb, enc_cache) = self.encoder.forward(&x, Some(step))?;
        match (&self.pool, &self.head) {
            (Some(pool), Some(head)) => {
                let n = emb.shape()[0];
                let h = emb.shape()[1];
                let (ctx, pool_cache) = pool.forward(&emb, None)?;
                let mut joined = Vec::with_capacity(n * 2 * h);
                for row in emb.data().chunks_exact(h) {
                    joined.extend_from_slice(row);
                    joined.extend_from_slice(ctx.data());
                }
                let joined = Tensor::new(vec![n, 2 * h], joined)?;
                let (probs, head_cache) = head.forward(&joined, None)?;
                let out = probs.reshape(&[n])?;
                Ok((
                    out,
                    NoiseCache {
                        encoder: enc_cache,
                        pool: Some(pool_cache),
                        head: Some(head_cache),
                        out_shape: vec![n],
                    },
                ))
            }
            _ => {
                let out = emb.reshape(s.shape())?;
                Ok((
                    out,
                    NoiseCache {
                        encoder: enc_cache,
                        pool: None,
                        head: None,
                        out_shape: s.shape().to_vec(),
                    },
                ))
            }
        }
    }

    /// Parameter gradients (in [`NoisePredictor::params`] order) given
    /// `d loss / d output`.
    pub fn backward(&self, cache: &NoiseCache, upstream: &Tensor) -> Result<Vec<Tensor>> {
        if upstream.shape() != cache.out_shape.as_slice() {
            return Err(MidError::Internal(format!(
                "noise predictor backward: upstream {:?} vs output {:?}",
                upstream.shape(),
                cache.out_shape
            )));
        }
        match (&self.pool, &self.head, &cache.pool, &cache.head) {
            (Some(pool), Some(head), Some(pool_cache), Some(head_cache)) => {
                let n = upstream.len();
                let up = upstream.clone().reshape(&[n, 1])?;
                let (g_joined, head_grads) = head.backward(head_cache, &up)?;
                let h = g_joined.shape()[1] / 2;
                let mut g_emb = Vec::with_capacity(n * h);
                let mut g_ctx = vec![0.0; h];
                for row in g_joined.data().chunks_exact(2 * h) {
                    g_emb.extend_from_slice(&row[..h]);
                    for (a, b) in g_ctx.iter_mut().zip(&row[h..]) {
                        *a += b;
                    }
                }
                let (g_from_pool, _) = pool.backward(pool_cache, &Tensor::new(vec![h], g_ctx)?)?;
                let mut g_emb = Tensor::new(vec![n, h], g_emb)?;
                g_emb.add_assign(&g_from_pool)?;
                let (_, enc_grads) = self.encoder.backward(&cache.encoder, &g_emb)?;
                Ok(enc_grads.into_iter().chain(head_grads).collect())
            }
            (None, None, None, None) => {
                let out_shape = self.encoder.output_shape(&[self.arch.height, self.arch.width, 1])?;
                let up = upstream.clone().reshape(&out_shape)?;
                Ok(self.encoder.backward(&cache.encoder, &up)?.1)
            }
            _ => Err(MidError::Internal(
                "noise predictor cache does not match network layout".into(),
            )),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.encoder.params().chain(self.head.iter().flat_map(|h| h.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.encoder
            .params_mut()
            .chain(self.head.iter_mut().flat_map(|h| h.params_mut()))
    }
}

/// Anything that can estimate the normalized step of a state.
pub trait StepEstimator {
    /// Estimated `t / T`.
    fn predict_step(&self, s: &Tensor) -> Result<f64>;
}

/// Anything that can predict the step-`t` noise of a state.
pub trait NoiseEstimator {
    fn mode(&self) -> NoiseMode;
    fn predict_noise(&self, s: &Tensor, t: usize, total_steps: usize) -> Result<Tensor>;
}

impl<T: StepEstimator + ?Sized> StepEstimator for &T {
    fn predict_step(&self, s: &Tensor) -> Result<f64> {
        (**self).predict_step(s)
    }
}

impl<T: NoiseEstimator + ?Sized> NoiseEstimator for &T {
    fn mode(&self) -> NoiseMode {
        (**self).mode()
    }

    fn predict_noise(&self, s: &Tensor, t: usize, total_steps: usize) -> Result<Tensor> {
        (**self).predict_noise(s, t, total_steps)
    }
}

impl StepEstimator for StepPredictor {
    fn predict_step(&self, s: &Tensor) -> Result<f64> {
        self.forward_train(s).map(|(v, _)| v)
    }
}

impl NoiseEstimator for NoisePredictor {
    fn mode(&self) -> NoiseMode {
        self.mode
    }

    fn predict_noise(&self, s: &Tensor, t: usize, total_steps: usize) -> Result<Tensor> {
        self.forward_train(s, t, total_steps).map(|(v, _)| v)
    }
}

/// Adds `scale * grads` into the parameters' gradient buffers.
pub fn accumulate_grads<'a>(params: impl Iterator<Item = &'a mut Param>, grads: &[Tensor], scale: f64) -> Result<()> {
    let mut n = 0;
    for (p, g) in params.zip(grads) {
        p.accumulate(g, scale)?;
        n += 1;
    }
    if n != grads.len() {
        return Err(MidError::Internal(format!(
            "{} gradients for {n} parameters",
            grads.len()
        )));
    }
    Ok(())
}

/// `(t/T − t̂)²`.
pub fn loss_step(t: usize, total_steps: usize, t_hat: f64) -> f64 {
    let target = t as f64 / total_steps as f64;
    (target - t_hat).powi(2)
}

/// `d loss_step / d t̂`.
pub fn loss_step_grad(t: usize, total_steps: usize, t_hat: f64) -> f64 {
    2.0 * (t_hat - t as f64 / total_steps as f64)
}

/// Mean squared error between actual and predicted increments.
pub fn loss_noise_mse(eps: &Tensor, eps_hat: &Tensor) -> Result<f64> {
    eps.expect_same_shape(eps_hat, "loss_noise_mse")?;
    let s: f64 = eps
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(s / eps.len() as f64)
}

/// `d loss_noise_mse / d eps_hat`.
pub fn loss_noise_mse_grad(eps: &Tensor, eps_hat: &Tensor) -> Result<Tensor> {
    let n = eps.len() as f64;
    eps_hat.zip_map(eps, |p, e| 2.0 * (p - e) / n)
}

/// Binary cross-entropy with probabilities clamped to `[1e-12, 1 − 1e-12]`.
pub fn loss_noise_bce(labels: &Tensor, probs: &Tensor) -> Result<f64> {
    labels.expect_same_shape(probs, "loss_noise_bce")?;
    let s: f64 = labels
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&y, &p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / labels.len() as f64)
}

/// `d loss_noise_bce / d probs`; zero where the clamp is active.
pub fn loss_noise_bce_grad(labels: &Tensor, probs: &Tensor) -> Result<Tensor> {
    let n = labels.len() as f64;
    probs.zip_map(labels, |p, y| {
        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
            0.0
        } else {
            -(y / p - (1.0 - y) / (1.0 - p)) / n
        }
    })
}

/// Multi-task objective with unit weights.
pub fn loss_total(loss_noise: f64, loss_step: f64) -> f64 {
    loss_noise + loss_step
}
