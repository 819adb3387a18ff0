//! Fixed layer vocabulary with hand-written forward and backward passes.
//!
//! Forward and backward are pure: `forward` returns a cache and `backward`
//! returns the input gradient together with one gradient tensor per layer
//! parameter. Accumulating those into [`Param::grad`] is the caller's job
//! (see [`Stack`]), so a frozen layer can be evaluated from many threads.
//!
//! Layout conventions:
//! - `dense` acts on the last axis: `[.., in] -> [.., out]`, weight `[in, out]`.
//! - `conv2d-3x3` is channel-last: `[H, W, Cin] -> [H, W, Cout]`, zero padding,
//!   stride 1, weight `[3, 3, Cin, Cout]`.
//! - `mean-pool-over-points` averages every leading axis: `[.., C] -> [C]`.
//! - `concat-step-embedding` appends the normalized step as one extra feature
//!   on the last axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{MidError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    #[serde(rename = "dense")]
    Dense { input: usize, output: usize },
    #[serde(rename = "conv2d-3x3")]
    Conv2d3x3 { in_channels: usize, out_channels: usize },
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "sigmoid")]
    Sigmoid,
    #[serde(rename = "mean-pool-over-points")]
    MeanPoolOverPoints,
    #[serde(rename = "concat-step-embedding")]
    ConcatStepEmbedding,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d3x3 { .. } => "conv2d-3x3",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::MeanPoolOverPoints => "mean-pool-over-points",
            LayerSpec::ConcatStepEmbedding => "concat-step-embedding",
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: String| Err(MidError::shape(format!("layer {}", self.name()), expected, input));
        match *self {
            LayerSpec::Dense { input: i, output: o } => match input.last() {
                Some(&last) if last == i => {
                    let mut out = input.to_vec();
                    *out.last_mut().unwrap() = o;
                    Ok(out)
                }
                _ => bad(format!("[.., {i}]")),
            },
            LayerSpec::Conv2d3x3 {
                in_channels,
                out_channels,
            } => {
                if input.len() == 3 && input[2] == in_channels {
                    Ok(vec![input[0], input[1], out_channels])
                } else {
                    bad(format!("[H, W, {in_channels}]"))
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::MeanPoolOverPoints => {
                if input.len() >= 2 {
                    Ok(vec![input[input.len() - 1]])
                } else {
                    bad("[N, C] or [H, W, C]".into())
                }
            }
            LayerSpec::ConcatStepEmbedding => match input.last() {
                Some(_) => {
                    let mut out = input.to_vec();
                    *out.last_mut().unwrap() += 1;
                    Ok(out)
                }
                None => bad("rank >= 1".into()),
            },
        }
    }
}

/// A trainable tensor with its gradient and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// `grad += scale * g`.
    pub fn accumulate(&mut self, g: &Tensor, scale: f64) -> Result<()> {
        self.grad.expect_same_shape(g, &self.name)?;
        for (a, b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Glorot/Xavier uniform sample in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

/// Values saved by `forward` for the matching `backward` call.
#[derive(Debug, Clone)]
pub struct LayerCache {
    spec: LayerSpec,
    input: Tensor,
    output: Tensor,
}

impl LayerCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
}

impl Layer {
    /// Creates a layer with Glorot-initialized weights and zero biases.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, name: &str, rng: &mut R) -> Self {
        let params = match spec {
            LayerSpec::Dense { input, output } => vec![
                Param::new(
                    format!("{name}.weight"),
                    glorot_uniform(rng, &[input, output], input, output),
                ),
                Param::new(format!("{name}.bias"), Tensor::zeros(&[output])),
            ],
            LayerSpec::Conv2d3x3 {
                in_channels,
                out_channels,
            } => vec![
                Param::new(
                    format!("{name}.weight"),
                    glorot_uniform(
                        rng,
                        &[3, 3, in_channels, out_channels],
                        9 * in_channels,
                        9 * out_channels,
                    ),
                ),
                Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            ],
            _ => Vec::new(),
        };
        Layer { spec, params }
    }

    /// `step` is the normalized step in `[0, 1]`; only `concat-step-embedding`
    /// reads it.
    pub fn forward(&self, x: &Tensor, step: Option<f64>) -> Result<(Tensor, LayerCache)> {
        let out_shape = self.spec.output_shape(x.shape())?;
        let output = match self.spec {
            LayerSpec::Dense { input, output } => {
                let (w, b) = (&self.params[0].value, &self.params[1].value);
                let rows = x.len() / input;
                let mut out = vec![0.0; rows * output];
                for r in 0..rows {
                    let xr = &x.data()[r * input..(r + 1) * input];
                    let orow = &mut out[r * output..(r + 1) * output];
                    orow.copy_from_slice(b.data());
                    for (i, &xi) in xr.iter().enumerate() {
                        let wrow = &w.data()[i * output..(i + 1) * output];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xi * wv;
                        }
                    }
                }
                Tensor::new(out_shape, out)?
            }
            LayerSpec::Conv2d3x3 {
                in_channels,
                out_channels,
            } => conv3x3_forward(
                x,
                &self.params[0].value,
                &self.params[1].value,
                in_channels,
                out_channels,
            )?,
            LayerSpec::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            LayerSpec::Sigmoid => x.map(sigmoid),
            LayerSpec::MeanPoolOverPoints => {
                let c = x.shape()[x.rank() - 1];
                let n = x.len() / c;
                let mut acc = vec![0.0; c];
                for row in x.data().chunks_exact(c) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                let inv = 1.0 / n as f64;
                Tensor::new(out_shape, acc.into_iter().map(|a| a * inv).collect())?
            }
            LayerSpec::ConcatStepEmbedding => {
                let step =
                    step.ok_or_else(|| MidError::Config("concat-step-embedding requires a step value".into()))?;
                if !(0.0..=1.0).contains(&step) {
                    return Err(MidError::Config(format!("normalized step {step} outside [0, 1]")));
                }
                let c = x.shape()[x.rank() - 1];
                let mut out = Vec::with_capacity(x.len() / c * (c + 1));
                for row in x.data().chunks_exact(c) {
                    out.extend_from_slice(row);
                    out.push(step);
                }
                Tensor::new(out_shape, out)?
            }
        };
        let cache = LayerCache {
            spec: self.spec,
            input: x.clone(),
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Vector-Jacobian product of the forward map at the cached point.
    pub fn backward(&self, cache: &LayerCache, upstream: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        if cache.spec != self.spec {
            return Err(MidError::Internal(format!(
                "cache from a {} layer passed to a {} layer",
                cache.spec.name(),
                self.spec.name()
            )));
        }
        if upstream.shape() != cache.output.shape() {
            return Err(MidError::Internal(format!(
                "{} backward: upstream shape {:?} does not match cached output {:?}",
                self.spec.name(),
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let x = &cache.input;
        let g = upstream.data();
        match self.spec {
            LayerSpec::Dense { input, output } => {
                let w = &self.params[0].value;
                let rows = x.len() / input;
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; input * output];
                let mut gb = vec![0.0; output];
                for r in 0..rows {
                    let xr = &x.data()[r * input..(r + 1) * input];
                    let gr = &g[r * output..(r + 1) * output];
                    for (b, &gv) in gb.iter_mut().zip(gr) {
                        *b += gv;
                    }
                    let gxr = &mut gx[r * input..(r + 1) * input];
                    for i in 0..input {
                        let wrow = &w.data()[i * output..(i + 1) * output];
                        let gwrow = &mut gw[i * output..(i + 1) * output];
                        let mut s = 0.0;
                        for o in 0..output {
                            s += wrow[o] * gr[o];
                            gwrow[o] += xr[i] * gr[o];
                        }
                        gxr[i] = s;
                    }
                }
                Ok((
                    Tensor::new(x.shape().to_vec(), gx)?,
                    vec![Tensor::new(vec![input, output], gw)?, Tensor::new(vec![output], gb)?],
                ))
            }
            LayerSpec::Conv2d3x3 {
                in_channels,
                out_channels,
            } => conv3x3_backward(x, &self.params[0].value, upstream, in_channels, out_channels),
            LayerSpec::Relu => {
                let gx = x.zip_map(upstream, |xv, gv| if xv > 0.0 { gv } else { 0.0 })?;
                Ok((gx, Vec::new()))
            }
            LayerSpec::Sigmoid => {
                let gx = cache.output.zip_map(upstream, |p, gv| gv * p * (1.0 - p))?;
                Ok((gx, Vec::new()))
            }
            LayerSpec::MeanPoolOverPoints => {
                let c = g.len();
                let n = x.len() / c;
                let inv = 1.0 / n as f64;
                let mut gx = Vec::with_capacity(x.len());
                for _ in 0..n {
                    gx.extend(g.iter().map(|v| v * inv));
                }
                Ok((Tensor::new(x.shape().to_vec(), gx)?, Vec::new()))
            }
            LayerSpec::ConcatStepEmbedding => {
                let c = x.shape()[x.rank() - 1];
                let mut gx = Vec::with_capacity(x.len());
                for row in g.chunks_exact(c + 1) {
                    gx.extend_from_slice(&row[..c]);
                }
                Ok((Tensor::new(x.shape().to_vec(), gx)?, Vec::new()))
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep the open interval even where exp saturates
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn conv3x3_forward(x: &Tensor, w: &Tensor, b: &Tensor, ci: usize, co: usize) -> Result<Tensor> {
    let (h, wd) = (x.shape()[0], x.shape()[1]);
    let input = x.data();
    let wt = w.data();
    let mut out = vec![0.0; h * wd * co];
    for y in 0..h {
        for xx in 0..wd {
            let o = &mut out[(y * wd + xx) * co..(y * wd + xx + 1) * co];
            o.copy_from_slice(b.data());
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = xx as isize + kx as isize - 1;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let p = (iy as usize * wd + ix as usize) * ci;
                    let inp = &input[p..p + ci];
                    let wbase = (ky * 3 + kx) * ci * co;
                    for (c, &v) in inp.iter().enumerate() {
                        let wrow = &wt[wbase + c * co..wbase + (c + 1) * co];
                        for (oo, &wv) in o.iter_mut().zip(wrow) {
                            *oo += v * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, wd, co], out)
}

fn conv3x3_backward(x: &Tensor, w: &Tensor, upstream: &Tensor, ci: usize, co: usize) -> Result<(Tensor, Vec<Tensor>)> {
    let (h, wd) = (x.shape()[0], x.shape()[1]);
    let input = x.data();
    let wt = w.data();
    let g = upstream.data();
    let mut gx = vec![0.0; input.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; co];
    for y in 0..h {
        for xx in 0..wd {
            let go = &g[(y * wd + xx) * co..(y * wd + xx + 1) * co];
            for (b, &v) in gb.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = xx as isize + kx as isize - 1;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let p = (iy as usize * wd + ix as usize) * ci;
                    let wbase = (ky * 3 + kx) * ci * co;
                    for c in 0..ci {
                        let v = input[p + c];
                        let wrow = &wt[wbase + c * co..wbase + (c + 1) * co];
                        let gwrow = &mut gw[wbase + c * co..wbase + (c + 1) * co];
                        let mut s = 0.0;
                        for o in 0..co {
                            s += wrow[o] * go[o];
                            gwrow[o] += v * go[o];
                        }
                        gx[p + c] += s;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        vec![Tensor::new(w.shape().to_vec(), gw)?, Tensor::new(vec![co], gb)?],
    ))
}

/// Caches of one [`Stack::forward`] call.
#[derive(Debug, Clone)]
pub struct StackCache {
    caches: Vec<LayerCache>,
}

impl StackCache {
    pub fn output(&self) -> Option<&Tensor> {
        self.caches.last().map(|c| c.output())
    }
}

/// Parameter gradients of one [`Stack::backward`] call, one entry per
/// parameter in [`Stack::params`] order.
pub type StackGrads = Vec<Tensor>;

/// A sequential composition of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], prefix: &str, rng: &mut R) -> Self {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::new(*s, &format!("{prefix}.{i}"), rng))
            .collect();
        Stack { layers }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec.output_shape(&shape))
    }

    pub fn forward(&self, x: &Tensor, step: Option<f64>) -> Result<(Tensor, StackCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur, step)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, StackCache { caches }))
    }

    /// Forward pass without keeping caches.
    pub fn infer(&self, x: &Tensor, step: Option<f64>) -> Result<Tensor> {
        self.forward(x, step).map(|(out, _)| out)
    }

    pub fn backward(&self, cache: &StackCache, upstream: &Tensor) -> Result<(Tensor, StackGrads)> {
        if cache.caches.len() != self.layers.len() {
            return Err(MidError::Internal(format!(
                "stack cache has {} entries for {} layers",
                cache.caches.len(),
                self.layers.len()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter().zip(&cache.caches).rev() {
            let (gx, pg) = layer.backward(c, &g)?;
            per_layer.push(pg);
            g = gx;
        }
        per_layer.reverse();
        Ok((g, per_layer.into_iter().flatten().collect()))
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn relu_forward_and_backward() {
        let l = Layer::new(LayerSpec::Relu, "r", &mut rng());
        let (y, _) = l
            .forward(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]).unwrap(), None)
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let (_, cache) = l.forward(&Tensor::from_vec(vec![-1.0, 2.0]).unwrap(), None).unwrap();
        let (gx, pg) = l.backward(&cache, &Tensor::from_vec(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0]);
        assert!(pg.is_empty());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let l = Layer::new(LayerSpec::Relu, "r", &mut rng());
        let (_, cache) = l.forward(&Tensor::from_vec(vec![0.0]).unwrap(), None).unwrap();
        let (gx, _) = l.backward(&cache, &Tensor::from_vec(vec![5.0]).unwrap()).unwrap();
        assert_eq!(gx.data(), &[0.0]);
    }

    #[test]
    fn dense_identity_passes_through() {
        let mut l = Layer::new(LayerSpec::Dense { input: 3, output: 3 }, "d", &mut rng());
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        l.params[0].value = eye;
        let x = Tensor::from_vec(vec![0.5, -2.0, 7.0]).unwrap();
        let (y, _) = l.forward(&x, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_weight_grad_is_outer_product() {
        let l = Layer::new(LayerSpec::Dense { input: 2, output: 3 }, "d", &mut rng());
        let x = Tensor::from_vec(vec![2.0, -1.0]).unwrap();
        let (_, cache) = l.forward(&x, None).unwrap();
        let up = Tensor::from_vec(vec![1.0, 0.5, -3.0]).unwrap();
        let (_, pg) = l.backward(&cache, &up).unwrap();
        let expected: Vec<f64> = [2.0, -1.0]
            .iter()
            .flat_map(|xi| up.data().iter().map(move |g| xi * g))
            .collect();
        assert_eq!(pg[0].data(), expected.as_slice());
        assert_eq!(pg[1].data(), up.data());
    }

    #[test]
    fn mean_pool_ignores_point_order() {
        let l = Layer::new(LayerSpec::MeanPoolOverPoints, "p", &mut rng());
        let a = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let (ya, _) = l.forward(&a, None).unwrap();
        let (yb, _) = l.forward(&b, None).unwrap();
        for (p, q) in ya.data().iter().zip(yb.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
        assert_eq!(ya.data(), &[3.0, 4.0]);
    }

    #[test]
    fn step_embedding_appends_feature() {
        let l = Layer::new(LayerSpec::ConcatStepEmbedding, "e", &mut rng());
        let x = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let (y, _) = l.forward(&x, Some(0.25)).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[3.0, 0.25, 4.0, 0.25]);
        assert!(l.forward(&x, None).is_err());
        assert!(l.forward(&x, Some(1.5)).is_err());
    }

    #[test]
    fn shape_mismatch_names_layer_and_shapes() {
        let l = Layer::new(
            LayerSpec::Conv2d3x3 {
                in_channels: 2,
                out_channels: 4,
            },
            "c",
            &mut rng(),
        );
        let err = l.forward(&Tensor::zeros(&[4, 4, 3]), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d-3x3"), "{msg}");
        assert!(msg.contains("[4, 4, 3]"), "{msg}");
        assert!(msg.contains("[H, W, 2]"), "{msg}");
    }

    #[test]
    fn mismatched_cache_is_internal_error() {
        let relu = Layer::new(LayerSpec::Relu, "r", &mut rng());
        let sig = Layer::new(LayerSpec::Sigmoid, "s", &mut rng());
        let (_, cache) = relu.forward(&Tensor::from_vec(vec![1.0]).unwrap(), None).unwrap();
        let err = sig.backward(&cache, &Tensor::from_vec(vec![1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, MidError::Internal(_)));
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        for x in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let p = sigmoid(x);
            assert!(p > 0.0 && p < 1.0, "sigmoid({x}) = {p}");
        }
    }

    #[test]
    fn conv_bias_only_on_zero_input() {
        let mut l = Layer::new(
            LayerSpec::Conv2d3x3 {
                in_channels: 1,
                out_channels: 2,
            },
            "c",
            &mut rng(),
        );
        l.params[1].value = Tensor::from_vec(vec![0.5, -1.0]).unwrap();
        let (y, _) = l.forward(&Tensor::zeros(&[3, 4, 1]), None).unwrap();
        assert_eq!(y.shape(), &[3, 4, 2]);
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.5, -1.0]);
        }
    }

    #[test]
    fn glorot_bound_respected() {
        let t = glorot_uniform(&mut rng(), &[10, 20], 10, 20);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }
}
