//! Experiment configuration: a TOML file with `[data]`, `[process]`,
//! `[model]`, `[train]`, `[denoise]`, `[eval]` and `[ablate]` sections.
//!
//! Unknown keys are rejected with a message naming the key and the accepted
//! ones.

use std::path::Path;

use mid_core::datagen::{SceneSpec, SignalSpec};
use mid_core::hash::fnv1a64;
use mid_core::metrics::LineFitParams;
use mid_core::networks::{ArchSpec, InputKind};
use mid_core::noise::{NoiseKind, NoiseProcessSpec};
use mid_core::numerics::AdamW;
use mid_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Images,
    Scenes,
    Signals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    #[serde(default)]
    pub count: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub signal: SignalSpec,
}

fn default_side() -> usize {
    16
}

/// Process description in config terms. `magnitude` is the cumulative σ for
/// the Gaussian and log kinds, the photon scale for poisson-like, the points
/// injected per step for outliers and the per-step SNR decrement (dB) for
/// interference. `per_step_magnitude` overrides it with an explicit schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    pub kind: NoiseKind,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default)]
    pub magnitude: Option<f64>,
    #[serde(default)]
    pub per_step_magnitude: Option<Vec<f64>>,
    #[serde(default)]
    pub bounds: Option<[f64; 4]>,
    /// Interference only: SNR before the first step.
    #[serde(default)]
    pub initial_snr_db: Option<f64>,
}

fn default_total_steps() -> usize {
    10
}

impl ProcessSection {
    /// Builds the process spec. Interference needs the template waveform and
    /// reference power, which come from the data rather than the config.
    pub fn to_spec(&self, interference: Option<(Vec<f64>, f64)>) -> CliResult<NoiseProcessSpec> {
        let t = self.total_steps;
        if t == 0 {
            return Err(CliError::Config("[process] total_steps must be >= 1".into()));
        }
        let schedule = match (&self.per_step_magnitude, self.magnitude) {
            (Some(list), _) => list.clone(),
            (None, Some(m)) => match self.kind {
                NoiseKind::GaussianAdditive | NoiseKind::MultiplicativeLog => vec![m / (t as f64).sqrt(); t],
                _ => vec![m; t],
            },
            (None, None) => {
                return Err(CliError::Config(
                    "[process] needs `magnitude` or `per_step_magnitude`".into(),
                ))
            }
        };
        let mut spec = NoiseProcessSpec {
            kind: self.kind,
            total_steps: t,
            per_step_magnitude: schedule,
            bounds: None,
            template: None,
            reference_power: None,
            initial_snr_db: None,
        };
        match self.kind {
            NoiseKind::OutlierPoints => spec.bounds = Some(self.bounds.unwrap_or([0.0, 0.0, 1.0, 1.0])),
            NoiseKind::SignalInterference => {
                let (tpl, p_ref) =
                    interference.ok_or_else(|| CliError::Config("signal-interference needs signal data".into()))?;
                spec.template = Some(tpl);
                spec.reference_power = Some(p_ref);
                spec.initial_snr_db = Some(self.initial_snr_db.unwrap_or(20.0));
            }
            _ => {}
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: usize,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchSpec::points();
        ModelSection {
            channels: a.channels,
            hidden: a.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub optimizer: AdamW,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 150,
            batch_size: 8,
            eval_every: 1,
            optimizer: AdamW::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseSection {
    /// Classification removal threshold.
    pub threshold: f64,
}

impl Default for DenoiseSection {
    fn default() -> Self {
        DenoiseSection { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Peak value for PSNR / SSIM.
    pub max_value: f64,
    /// ARV / MF window length in samples.
    pub window: usize,
    pub sample_rate: f64,
    /// Recall-AUC angular cutoff, degrees.
    pub e_max: f64,
    pub line_fit: LineFitParams,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            max_value: 1.0,
            window: 250,
            sample_rate: 1000.0,
            e_max: 0.5,
            line_fit: LineFitParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Held-out inputs generated for the comparison.
    pub count: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { count: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub process: Option<ProcessSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub denoise: DenoiseSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.data;
        match d.kind {
            DataKind::Images if d.width == 0 || d.height == 0 => {
                return Err(CliError::Config("[data] width and height must be >= 1".into()))
            }
            DataKind::Scenes => d.scene.validate()?,
            DataKind::Signals => d.signal.validate()?,
            _ => {}
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Config("[train] batch_size must be >= 1".into()));
        }
        self.train.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.denoise.threshold) {
            return Err(CliError::Config("[denoise] threshold must be in [0, 1]".into()));
        }
        if let Some(p) = &self.process {
            let points = p.kind == NoiseKind::OutlierPoints;
            if points != (d.kind == DataKind::Scenes) {
                return Err(CliError::Config(format!(
                    "[process] kind {} cannot be applied to {:?} data",
                    p.kind.as_str(),
                    d.kind
                )));
            }
            if p.kind == NoiseKind::SignalInterference && d.kind != DataKind::Signals {
                return Err(CliError::Config(
                    "signal-interference applies to signal data only".into(),
                ));
            }
        }
        Ok(())
    }

    /// Hash of the canonical re-serialization, so formatting and comments in
    /// the file do not matter.
    pub fn hash(&self) -> u64 {
        fnv1a64(
            toml::to_string(self)
                .expect("config is always representable")
                .as_bytes(),
        )
    }

    pub fn arch(&self) -> ArchSpec {
        let base = match self.data.kind {
            DataKind::Images => ArchSpec::image(self.data.height, self.data.width),
            DataKind::Signals => ArchSpec::signal(self.data.signal.n_samples()),
            DataKind::Scenes => ArchSpec::points(),
        };
        ArchSpec {
            channels: self.model.channels,
            hidden: self.model.hidden,
            ..base
        }
    }

    pub fn process_section(&self) -> CliResult<&ProcessSection> {
        self.process
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no [process] section".into()))
    }

    pub fn train_config(&self, process: NoiseProcessSpec) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            seed: self.seed,
            eval_every: self.train.eval_every,
            process,
            arch: self.arch(),
        }
    }

    pub fn input_kind(&self) -> InputKind {
        self.arch().input
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[data]
kind = "images"
count = 4
[process]
kind = "gaussian-additive"
magnitude = 0.2
"#;

    #[test]
    fn minimal_config_and_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.epochs, 150);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.optimizer, AdamW::default());
        let spec = c.process_section().unwrap().to_spec(None).unwrap();
        assert_eq!(spec.total_steps, 10);
        let cum: f64 = spec.per_step_magnitude.iter().map(|s| s * s).sum();
        assert!((cum - 0.04).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_error_names_key_and_alternatives() {
        let err = Config::parse(&format!("{MINIMAL}\n[train]\nepochz = 3\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochz"), "{msg}");
        assert!(msg.contains("epochs"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_enum_value_lists_accepted_values() {
        let err = Config::parse("[data]\nkind = \"video\"\n").unwrap_err().to_string();
        assert!(err.contains("video") && err.contains("images"), "{err}");
    }

    #[test]
    fn mismatched_process_and_data() {
        let text = "[data]\nkind = \"images\"\n[process]\nkind = \"outlier-points\"\nmagnitude = 5\n";
        assert!(Config::parse(text).is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = Config::parse(MINIMAL).unwrap();
        let b = Config::parse(&MINIMAL.replace("count = 4", "count   =   4 # four")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::parse(&MINIMAL.replace("count = 4", "count = 5")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
