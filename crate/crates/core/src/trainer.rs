//! Noise-addition training of Ψ and Φ.
//!
//! Each epoch draws a fresh forward trajectory for every clean sample, then
//! visits every `(sample, t)` pair exactly once in a seeded random order,
//! `batch_size` pairs per optimizer step. Both networks are updated after
//! every batch from the mean gradients of their own loss.
//!
//! All randomness is derived from `(seed, epoch, sample)`, so an epoch's
//! outcome depends only on the checkpoint it starts from. That is what makes
//! resuming a run bit-identical to never stopping it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{MidError, Result};
use crate::hash::{derive_seed, fnv1a64};
use crate::networks::{
    accumulate_grads, loss_noise_bce, loss_noise_bce_grad, loss_noise_mse, loss_noise_mse_grad, loss_step,
    loss_step_grad, loss_total, ArchSpec, NoiseMode, NoisePredictor, StepPredictor,
};
use crate::noise::{injected_labels, trajectory, NoiseProcessSpec};
use crate::numerics::{AdamW, Tensor};

const STREAM_INIT: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

fn default_epochs() -> usize {
    150
}

fn default_batch_size() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamW,
    #[serde(default)]
    pub seed: u64,
    /// Call the epoch observer every this many epochs; 0 never calls it.
    #[serde(default)]
    pub eval_every: usize,
    pub process: NoiseProcessSpec,
    pub arch: ArchSpec,
}

impl TrainConfig {
    pub fn new(process: NoiseProcessSpec, arch: ArchSpec) -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            optimizer: AdamW::default(),
            seed: 0,
            eval_every: 0,
            process,
            arch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MidError::Config("batch_size must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.process.validate()?;
        self.arch.validate()?;
        let regression = self.process.kind.is_regression();
        if regression != (self.arch.noise_mode() == NoiseMode::Regression) {
            return Err(MidError::Config(format!(
                "process kind {} does not fit a {:?} architecture",
                self.process.kind.as_str(),
                self.arch.input
            )));
        }
        Ok(())
    }

    /// Hash identifying a training run. The epoch budget is left out so a
    /// run that is stopped and resumed with a larger budget keeps its hash.
    pub fn run_hash(&self) -> u64 {
        let mut c = self.clone();
        c.epochs = 0;
        c.eval_every = 0;
        fnv1a64(toml::to_string(&c).expect("config is always representable").as_bytes())
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub loss_step: f64,
    pub loss_noise: f64,
    pub loss_total: f64,
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,loss_step,loss_noise,loss_total";

/// Loss history as CSV with a header row and LF line endings.
pub fn loss_history_csv(history: &[EpochReport]) -> String {
    let mut out = String::from(LOSS_HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.loss_step, r.loss_noise, r.loss_total
        ));
    }
    out
}

/// Freshly initialized networks for `config`.
pub fn init_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_INIT]));
    let psi = StepPredictor::new(&config.arch, &mut rng)?;
    let phi = NoisePredictor::new(&config.arch, &mut rng)?;
    Ok(Checkpoint {
        config_hash: config.run_hash(),
        process: config.process.clone(),
        arch: config.arch.clone(),
        epochs_completed: 0,
        step_counter: 0,
        seed: config.seed,
        psi,
        phi,
    })
}

/// One `(sample, t)` training pair.
struct Pair {
    sample: usize,
    t: usize,
    state: Tensor,
    target: Tensor,
}

struct PairGrads {
    loss_step: f64,
    loss_noise: f64,
    psi: Vec<Tensor>,
    phi: Vec<Tensor>,
}

fn check_data(data: &[Tensor], arch: &ArchSpec) -> Result<()> {
    for (i, s) in data.iter().enumerate() {
        if !arch.state_shape_ok(s.shape()) {
            return Err(MidError::shape(
                format!("training sample {i}"),
                format!("{:?} input", arch.input),
                s.shape(),
            ));
        }
    }
    Ok(())
}

fn build_pairs(data: &[Tensor], ckpt: &Checkpoint, epoch: u64) -> Result<Vec<Pair>> {
    let process = &ckpt.process;
    let regression = process.kind.is_regression();
    let per_sample: Vec<Vec<Pair>> = data
        .par_iter()
        .enumerate()
        .map(|(i, s0)| -> Result<Vec<Pair>> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ckpt.seed, &[STREAM_TRAJECTORY, epoch, i as u64]));
            let traj = trajectory(s0, process, &mut rng)?;
            let n0 = s0.shape()[0];
            traj.into_iter()
                .map(|step| {
                    let target = if regression {
                        step.eps_eff
                    } else {
                        Tensor::from_vec(injected_labels(n0, step.s_t.shape()[0]))?
                    };
                    Ok(Pair {
                        sample: i,
                        t: step.t,
                        state: step.s_t,
                        target,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut pairs: Vec<Pair> = per_sample.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ckpt.seed, &[STREAM_SHUFFLE, epoch]));
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

fn pair_grads(ckpt: &Checkpoint, pair: &Pair) -> Result<PairGrads> {
    let total = ckpt.process.total_steps;
    let (t_hat, psi_cache) = ckpt.psi.forward_train(&pair.state)?;
    let ls = loss_step(pair.t, total, t_hat);
    let psi = ckpt.psi.backward(&psi_cache, loss_step_grad(pair.t, total, t_hat))?;

    let (pred, phi_cache) = ckpt.phi.forward_train(&pair.state, pair.t, total)?;
    let (ln, up) = match ckpt.phi.mode {
        NoiseMode::Regression => (
            loss_noise_mse(&pair.target, &pred)?,
            loss_noise_mse_grad(&pair.target, &pred)?,
        ),
        NoiseMode::Classification => (
            loss_noise_bce(&pair.target, &pred)?,
            loss_noise_bce_grad(&pair.target, &pred)?,
        ),
    };
    if !(ls.is_finite() && ln.is_finite()) {
        return Err(MidError::NonFinite(format!(
            "loss at sample {}, step {} (loss_step {ls}, loss_noise {ln})",
            pair.sample, pair.t
        )));
    }
    let phi = ckpt.phi.backward(&phi_cache, &up)?;
    Ok(PairGrads {
        loss_step: ls,
        loss_noise: ln,
        psi,
        phi,
    })
}

/// Runs one epoch over `data` (clean states), updating `ckpt` in place.
///
/// The epoch index, and with it every random draw, comes from
/// `ckpt.epochs_completed`.
pub fn train_epoch(data: &[Tensor], ckpt: &mut Checkpoint, config: &TrainConfig) -> Result<EpochReport> {
    check_data(data, &ckpt.arch)?;
    let epoch = ckpt.epochs_completed;
    let pairs = build_pairs(data, ckpt, epoch)?;
    let (mut sum_step, mut sum_noise) = (0.0, 0.0);
    for batch in pairs.chunks(config.batch_size) {
        let grads: Vec<PairGrads> = batch.par_iter().map(|p| pair_grads(ckpt, p)).collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        // Ordered reduction keeps the result independent of thread count.
        for g in &grads {
            sum_step += g.loss_step;
            sum_noise += g.loss_noise;
            accumulate_grads(ckpt.psi.params_mut(), &g.psi, scale)?;
            accumulate_grads(ckpt.phi.params_mut(), &g.phi, scale)?;
        }
        config.optimizer.step(ckpt.psi.params_mut())?;
        config.optimizer.step(ckpt.phi.params_mut())?;
        ckpt.step_counter += 1;
    }
    ckpt.epochs_completed += 1;
    let n = pairs.len().max(1) as f64;
    let (loss_step, loss_noise) = (sum_step / n, sum_noise / n);
    Ok(EpochReport {
        epoch: epoch + 1,
        loss_step,
        loss_noise,
        loss_total: loss_total(loss_noise, loss_step),
    })
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(data: &[Tensor], config: &TrainConfig) -> Result<(Checkpoint, Vec<EpochReport>)> {
    train_observed(data, config, |_, _| Ok(()))
}

/// As [`train`], calling `observer` after every `config.eval_every`-th epoch.
pub fn train_observed<F>(data: &[Tensor], config: &TrainConfig, observer: F) -> Result<(Checkpoint, Vec<EpochReport>)>
where
    F: FnMut(&EpochReport, &Checkpoint) -> Result<()>,
{
    let mut ckpt = init_checkpoint(config)?;
    let history = resume(data, &mut ckpt, config, observer)?;
    Ok((ckpt, history))
}

/// Continues training `ckpt` until it has completed `config.epochs` epochs.
pub fn resume<F>(
    data: &[Tensor],
    ckpt: &mut Checkpoint,
    config: &TrainConfig,
    mut observer: F,
) -> Result<Vec<EpochReport>>
where
    F: FnMut(&EpochReport, &Checkpoint) -> Result<()>,
{
    config.validate()?;
    if ckpt.config_hash != config.run_hash() {
        return Err(MidError::Config(format!(
            "checkpoint belongs to run {:#018x}, config describes run {:#018x}",
            ckpt.config_hash,
            config.run_hash()
        )));
    }
    if config.epochs > 0 && data.len() < config.batch_size {
        return Err(MidError::Config(format!(
            "batch_size {} exceeds the {} training samples",
            config.batch_size,
            data.len()
        )));
    }
    check_data(data, &ckpt.arch)?;
    let mut history = Vec::new();
    while (ckpt.epochs_completed as usize) < config.epochs {
        let report = train_epoch(data, ckpt, config)?;
        if config.eval_every > 0 && report.epoch % config.eval_every as u64 == 0 {
            observer(&report, ckpt)?;
        }
        history.push(report);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Layer;

    fn tiny_config(epochs: usize) -> TrainConfig {
        let arch = ArchSpec {
            channels: 2,
            hidden: 3,
            ..ArchSpec::image(4, 4)
        };
        TrainConfig {
            epochs,
            batch_size: 2,
            ..TrainConfig::new(NoiseProcessSpec::gaussian(3, 0.2), arch)
        }
    }

    fn tiny_data(n: usize) -> Vec<Tensor> {
        (0..n)
            .map(|i| Tensor::new(vec![4, 4], (0..16).map(|j| ((i + j) % 5) as f64 * 0.25).collect()).unwrap())
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let cfg = tiny_config(0);
        let (ckpt, hist) = train(&tiny_data(4), &cfg).unwrap();
        assert!(hist.is_empty());
        assert_eq!(ckpt, init_checkpoint(&cfg).unwrap());
    }

    #[test]
    fn history_length_and_step_counts() {
        let cfg = tiny_config(3);
        let data = tiny_data(5);
        let (ckpt, hist) = train(&data, &cfg).unwrap();
        assert_eq!(hist.len(), 3);
        // 5 samples x 3 steps = 15 pairs -> 8 batches of 2 per epoch
        let per_epoch = (5 * 3usize).div_ceil(2) as u64;
        assert_eq!(ckpt.step_counter, 3 * per_epoch);
        assert!(ckpt
            .psi
            .params()
            .chain(ckpt.phi.params())
            .all(|p| p.step_count == 3 * per_epoch));
    }

    #[test]
    fn zero_noise_with_zero_output_head_has_zero_noise_loss() {
        let mut cfg = tiny_config(1);
        cfg.process = NoiseProcessSpec::gaussian(3, 1e-300);
        let mut ckpt = init_checkpoint(&cfg).unwrap();
        let last: &mut Layer = ckpt.phi.encoder.layers.last_mut().unwrap();
        for p in &mut last.params {
            p.value.fill(0.0);
        }
        let report = train_epoch(&tiny_data(4), &mut ckpt, &cfg).unwrap();
        assert_eq!(report.loss_noise, 0.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = tiny_config(2);
        let (a, ha) = train(&tiny_data(4), &cfg).unwrap();
        let (b, hb) = train(&tiny_data(4), &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(ha, hb);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data(4);
        let (full, full_hist) = train(&data, &tiny_config(5)).unwrap();
        let (partial, mut hist) = train(&data, &tiny_config(2)).unwrap();
        let mut restored = Checkpoint::from_bytes(&partial.to_bytes()).unwrap();
        hist.extend(resume(&data, &mut restored, &tiny_config(5), |_, _| Ok(())).unwrap());
        assert_eq!(restored.to_bytes(), full.to_bytes());
        assert_eq!(hist, full_hist);
    }

    #[test]
    fn resume_rejects_foreign_checkpoint() {
        let data = tiny_data(4);
        let (mut ckpt, _) = train(&data, &tiny_config(1)).unwrap();
        let mut other = tiny_config(2);
        other.seed = 1;
        assert!(resume(&data, &mut ckpt, &other, |_, _| Ok(())).is_err());
    }

    #[test]
    fn config_errors_surface_before_training() {
        let mut cfg = tiny_config(1);
        cfg.batch_size = 10;
        assert!(train(&tiny_data(4), &cfg).is_err());
        let cfg = tiny_config(1);
        assert!(train(&vec![Tensor::zeros(&[3, 3]); 4], &cfg).is_err());
        let mut cfg = tiny_config(1);
        cfg.arch = ArchSpec::points();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let r = EpochReport {
            epoch: 1,
            loss_step: 0.5,
            loss_noise: 0.25,
            loss_total: 0.75,
        };
        assert_eq!(
            loss_history_csv(&[r]),
            "epoch,loss_step,loss_noise,loss_total\n1,0.5,0.25,0.75\n"
        );
    }
}
