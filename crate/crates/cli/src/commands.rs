//! Subcommand implementations. Each takes parsed arguments and returns a
//! small outcome struct so tests can drive them without a subprocess.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mid_core::checkpoint::Checkpoint;
use mid_core::datagen::{gen_scene, gen_signal_pair, gen_texture_image, points_from_csv, points_to_tensor, to_pgm};
use mid_core::denoiser::Denoiser;
use mid_core::hash::{derive_seed, fnv1a64};
use mid_core::metrics::{self, power, psnr, rmse, rmse_arv, rmse_mf, snr_cnr, snr_improvement, ssim};
use mid_core::networks::NoiseMode;
use mid_core::noise::{noise_to, NoiseKind, NoiseProcessSpec};
use mid_core::numerics::Tensor;
use mid_core::trainer::{loss_history_csv, train_observed, EpochReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, DataKind};
use crate::error::{CliError, CliResult};
use crate::report::{column_summary, hex_hash, json_value, write_bytes, write_json, write_text, Table};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.midc";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";

const STREAM_ABLATE_ITEM: u64 = 0xab1a7e;
const STREAM_ABLATE_NOISE: u64 = 0xab1a7f;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

fn read_tensor(path: &Path) -> CliResult<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Tensor::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_points(path: &Path) -> CliResult<(Vec<[f64; 2]>, Vec<u8>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    points_from_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn points_csv(points: &[[f64; 2]]) -> String {
    let mut s = String::from("x,y\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    s
}

/// One generated corpus item.
pub enum Item {
    Image(Tensor),
    Scene(mid_core::datagen::Scene),
    Signal(mid_core::datagen::SignalPair),
}

/// Generates item `i` of the corpus described by `cfg` from `seed`.
pub fn gen_item(cfg: &Config, seed: u64) -> CliResult<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &cfg.data;
    Ok(match d.kind {
        DataKind::Images => Item::Image(gen_texture_image(d.width, d.height, &mut rng)?),
        DataKind::Scenes => Item::Scene(gen_scene(&d.scene, &mut rng)?),
        DataKind::Signals => Item::Signal(gen_signal_pair(&d.signal, &mut rng)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: usize,
    pub seed: u64,
    /// Role (`image`, `preview`, `points`, `truth`, `semg`, `ecg`) to path
    /// relative to the manifest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: DataKind,
    pub config_hash: String,
    pub seed: u64,
    pub items: Vec<ManifestItem>,
}

pub struct SynthOutcome {
    pub manifest: Manifest,
    /// FNV-1a of the manifest file bytes.
    pub manifest_hash: u64,
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> CliResult<SynthOutcome> {
    create_dir(out)?;
    let items: Vec<ManifestItem> = (0..cfg.data.count)
        .into_par_iter()
        .map(|i| -> CliResult<ManifestItem> {
            let seed = derive_seed(cfg.seed, &[i as u64]);
            let mut files = BTreeMap::new();
            let mut put = |role: &str, name: String, bytes: &[u8]| -> CliResult<()> {
                write_bytes(&out.join(&name), bytes)?;
                files.insert(role.to_string(), name);
                Ok(())
            };
            match gen_item(cfg, seed)? {
                Item::Image(img) => {
                    put("image", format!("image_{i:04}.midt"), &img.to_bytes())?;
                    put("preview", format!("image_{i:04}.pgm"), &to_pgm(&img, 1.0)?)?;
                }
                Item::Scene(scene) => {
                    put("points", format!("scene_{i:04}.csv"), scene.to_csv().as_bytes())?;
                    put(
                        "truth",
                        format!("scene_{i:04}.json"),
                        scene.ground_truth_json().as_bytes(),
                    )?;
                }
                Item::Signal(pair) => {
                    put("semg", format!("semg_{i:04}.midt"), &pair.clean_semg.to_bytes())?;
                    put("ecg", format!("ecg_{i:04}.midt"), &pair.interference_ecg.to_bytes())?;
                }
            }
            Ok(ManifestItem { index: i, seed, files })
        })
        .collect::<CliResult<_>>()?;
    let manifest = Manifest {
        kind: cfg.data.kind,
        config_hash: hex_hash(cfg.hash()),
        seed: cfg.seed,
        items,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(&out.join(MANIFEST_FILE), &text)?;
    Ok(SynthOutcome {
        manifest,
        manifest_hash: fnv1a64(text.as_bytes()),
    })
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("missing or unreadable manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Clean training states plus, for signal data, the interference source.
struct Corpus {
    states: Vec<Tensor>,
    interference: Option<(Vec<f64>, f64)>,
}

fn file_of<'a>(item: &'a ManifestItem, role: &str) -> CliResult<&'a str> {
    item.files
        .get(role)
        .map(String::as_str)
        .ok_or_else(|| CliError::Data(format!("manifest item {} has no `{role}` file", item.index)))
}

fn load_corpus(cfg: &Config, dir: &Path, manifest: &Manifest) -> CliResult<Corpus> {
    if manifest.kind != cfg.data.kind {
        return Err(CliError::Config(format!(
            "config expects {:?} data, {} holds {:?}",
            cfg.data.kind,
            dir.display(),
            manifest.kind
        )));
    }
    let arch = cfg.arch();
    let mut states = Vec::with_capacity(manifest.items.len());
    let mut interference = None;
    for item in &manifest.items {
        let s = match manifest.kind {
            DataKind::Images => read_tensor(&dir.join(file_of(item, "image")?))?,
            DataKind::Signals => {
                let s = read_tensor(&dir.join(file_of(item, "semg")?))?;
                if interference.is_none() {
                    let ecg = read_tensor(&dir.join(file_of(item, "ecg")?))?;
                    interference = Some((ecg.into_data(), 0.0));
                }
                s
            }
            DataKind::Scenes => {
                let (pts, labels) = read_points(&dir.join(file_of(item, "points")?))?;
                let inliers: Vec<[f64; 2]> = pts
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == 0)
                    .map(|(p, _)| *p)
                    .collect();
                points_to_tensor(&inliers).map_err(|e| CliError::Data(format!("scene {}: {e}", item.index)))?
            }
        };
        if !arch.state_shape_ok(s.shape()) {
            return Err(CliError::Config(format!(
                "item {} has shape {:?}, which the configured {:?} model cannot take",
                item.index,
                s.shape(),
                arch.input
            )));
        }
        states.push(s);
    }
    if let Some((_, p_ref)) = interference.as_mut() {
        *p_ref = states.iter().map(|s| power(s.data())).sum::<f64>() / states.len() as f64;
    }
    Ok(Corpus { states, interference })
}

fn corpus_in_memory(cfg: &Config) -> CliResult<Corpus> {
    let items: Vec<Item> = (0..cfg.data.count)
        .into_par_iter()
        .map(|i| gen_item(cfg, derive_seed(cfg.seed, &[i as u64])))
        .collect::<CliResult<_>>()?;
    let mut states = Vec::new();
    let mut interference = None;
    for item in items {
        match item {
            Item::Image(img) => states.push(img),
            Item::Scene(scene) => states.push(points_to_tensor(&scene.inliers_only().points)?),
            Item::Signal(pair) => {
                if interference.is_none() {
                    interference = Some((pair.interference_ecg.into_data(), 0.0));
                }
                states.push(pair.clean_semg);
            }
        }
    }
    if let Some((_, p_ref)) = interference.as_mut() {
        *p_ref = states.iter().map(|s| power(s.data())).sum::<f64>() / states.len().max(1) as f64;
    }
    Ok(Corpus { states, interference })
}

fn process_for(cfg: &Config, corpus: &Corpus) -> CliResult<NoiseProcessSpec> {
    cfg.process_section()?.to_spec(corpus.interference.clone())
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: Vec<EpochReport>,
}

fn run_training(
    cfg: &Config,
    corpus: &Corpus,
    log: &mut dyn FnMut(&EpochReport),
) -> CliResult<(Checkpoint, Vec<EpochReport>)> {
    let process = process_for(cfg, corpus)?;
    let tc = cfg.train_config(process);
    tc.validate()?;
    let (ckpt, history) = train_observed(&corpus.states, &tc, |r, _| {
        log(r);
        Ok(())
    })?;
    Ok((ckpt, history))
}

pub fn cmd_train(cfg: &Config, data: &Path, out: &Path, log: &mut dyn FnMut(&EpochReport)) -> CliResult<TrainOutcome> {
    let manifest = read_manifest(data)?;
    let corpus = load_corpus(cfg, data, &manifest)?;
    create_dir(out)?;
    let (ckpt, history) = run_training(cfg, &corpus, log)?;
    let path = out.join(CHECKPOINT_FILE);
    write_bytes(&path, &ckpt.to_bytes())?;
    write_text(&out.join(LOSS_HISTORY_FILE), &loss_history_csv(&history))?;
    Ok(TrainOutcome {
        checkpoint: path,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Iterative,
    Oneshot,
}

pub struct DenoiseOutcome {
    pub t_hat: usize,
    pub steps: usize,
    pub output: PathBuf,
}

pub fn cmd_denoise(
    ckpt_path: &Path,
    input: &Path,
    out: &Path,
    mode: Mode,
    threshold: f64,
    trace: bool,
) -> CliResult<DenoiseOutcome> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::Data(format!("{}: {e}", ckpt_path.display())))?;
    let is_points = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let ckpt_points = ckpt.phi.mode == NoiseMode::Classification;
    if is_points != ckpt_points {
        return Err(CliError::Config(format!(
            "checkpoint works in {:?} mode and cannot denoise {}",
            ckpt.phi.mode,
            input.display()
        )));
    }
    create_dir(out)?;
    let mut denoiser = Denoiser::from_checkpoint(&ckpt);
    denoiser.threshold = threshold;
    let common = json!({
        "mode": mode,
        "checkpoint_config_hash": hex_hash(ckpt.config_hash),
        "total_steps": ckpt.process.total_steps,
    });
    if is_points {
        let (points, _) = read_points(input)?;
        let part = match mode {
            Mode::Iterative => denoiser.denoise_points(&points)?,
            Mode::Oneshot => denoiser.denoise_points_oneshot(&points)?,
        };
        let kept: Vec<[f64; 2]> = part.kept.iter().map(|&i| points[i]).collect();
        let removed: Vec<[f64; 2]> = part.removed.iter().map(|&i| points[i]).collect();
        let output = out.join("denoised.csv");
        write_text(&output, &points_csv(&kept))?;
        write_text(&out.join("removed.csv"), &points_csv(&removed))?;
        let steps: Vec<_> = part
            .kept_per_step
            .iter()
            .enumerate()
            .map(|(k, n)| json!({ "t": part.t_hat - k, "kept": n }))
            .collect();
        let mut side = common;
        side["t_hat"] = json!(part.t_hat);
        side["steps"] = json!(steps);
        side["removed_indices"] = json!(part.removed);
        write_json(&out.join("denoised.json"), &side)?;
        return Ok(DenoiseOutcome {
            t_hat: part.t_hat,
            steps: part.kept_per_step.len(),
            output,
        });
    }

    let s = read_tensor(input)?;
    let result = match mode {
        Mode::Iterative => denoiser.denoise(&s)?,
        Mode::Oneshot => denoiser.denoise_oneshot(&s)?,
    };
    let output = out.join("denoised.midt");
    write_bytes(&output, &result.output.to_bytes())?;
    if result.output.rank() == 2 {
        write_bytes(&out.join("denoised.pgm"), &to_pgm(&result.output, 1.0)?)?;
    }
    if trace {
        let dir = out.join("trace");
        create_dir(&dir)?;
        for (k, state) in result.trace.iter().enumerate() {
            write_bytes(
                &dir.join(format!("step_{:03}.midt", result.t_hat - k)),
                &state.to_bytes(),
            )?;
        }
    }
    let steps: Vec<_> = result
        .residual_norms
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let t = if mode == Mode::Oneshot {
                result.t_hat
            } else {
                result.t_hat - k
            };
            json!({ "t": t, "residual_norm": json_value(*n) })
        })
        .collect();
    let mut side = common;
    side["t_hat"] = json!(result.t_hat);
    side["steps"] = json!(steps);
    write_json(&out.join("denoised.json"), &side)?;
    Ok(DenoiseOutcome {
        t_hat: result.t_hat,
        steps: result.trace.len(),
        output,
    })
}

/// Evaluation pairs file: `{"pairs": [{"clean": ..., "test": ..., ...}]}`,
/// paths relative to the file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsFile {
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    /// Optional row label; defaults to the index.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub clean: Option<String>,
    /// The denoised (or otherwise processed) output.
    pub test: String,
    #[serde(default)]
    pub noisy: Option<String>,
    /// Reference noise for SNR improvement.
    #[serde(default)]
    pub noise: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
pub enum Metric {
    Psnr,
    Ssim,
    Rmse,
    SnrImp,
    RmseArv,
    RmseMf,
    Snr,
    Cnr,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Rmse => "rmse",
            Metric::SnrImp => "snr_imp",
            Metric::RmseArv => "rmse_arv",
            Metric::RmseMf => "rmse_mf",
            Metric::Snr => "snr",
            Metric::Cnr => "cnr",
        }
    }
}

pub struct EvalOutcome {
    pub rows: Vec<Vec<f64>>,
    pub summary: serde_json::Value,
}

pub fn cmd_eval(cfg: &Config, pairs_path: &Path, metric_list: &[Metric], out: &Path) -> CliResult<EvalOutcome> {
    let text = std::fs::read_to_string(pairs_path).map_err(|e| CliError::io(pairs_path.display(), e))?;
    let pairs: PairsFile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", pairs_path.display())))?;
    let base = pairs_path.parent().unwrap_or(Path::new("."));
    let ev = &cfg.eval;
    let load = |p: &Option<String>, role: &str, i: usize| -> CliResult<Tensor> {
        let p = p
            .as_ref()
            .ok_or_else(|| CliError::Data(format!("pair {i} has no `{role}` file")))?;
        read_tensor(&base.join(p))
    };
    let rows: Vec<Vec<f64>> = pairs
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> CliResult<Vec<f64>> {
            let test = read_tensor(&base.join(&e.test))?;
            metric_list
                .iter()
                .map(|m| -> CliResult<f64> {
                    Ok(match m {
                        Metric::Psnr => psnr(&load(&e.clean, "clean", i)?, &test, ev.max_value)?,
                        Metric::Ssim => ssim(&load(&e.clean, "clean", i)?, &test, ev.max_value)?,
                        Metric::Rmse => rmse(&load(&e.clean, "clean", i)?, &test)?,
                        Metric::SnrImp => {
                            snr_improvement(&load(&e.noisy, "noisy", i)?, &test, &load(&e.noise, "noise", i)?)?
                        }
                        Metric::RmseArv => rmse_arv(&load(&e.clean, "clean", i)?, &test, ev.window)?,
                        Metric::RmseMf => rmse_mf(&load(&e.clean, "clean", i)?, &test, ev.window, ev.sample_rate)?,
                        Metric::Snr => snr_cnr(&load(&e.noisy, "noisy", i)?, &test)?.0,
                        Metric::Cnr => snr_cnr(&load(&e.noisy, "noisy", i)?, &test)?.1,
                    })
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    create_dir(out)?;
    let names: Vec<String> = metric_list.iter().map(|m| m.name().to_string()).collect();
    let mut header = vec!["pair".to_string()];
    header.extend(names.iter().cloned());
    let mut table = Table::new(&header);
    for (i, (row, e)) in rows.iter().zip(&pairs.pairs).enumerate() {
        table.row(&e.name.clone().unwrap_or_else(|| i.to_string()), row);
    }
    write_text(&out.join("metrics.csv"), table.as_str())?;
    let summary = json!({
        "count": rows.len(),
        "seed": cfg.seed,
        "config_hash": hex_hash(cfg.hash()),
        "metrics": column_summary(&names, &rows),
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(EvalOutcome { rows, summary })
}

pub struct AblationRow {
    pub t_hat: usize,
    pub psnr_noisy: f64,
    pub psnr_iterative: f64,
    pub psnr_oneshot: f64,
}

impl AblationRow {
    pub fn delta(&self) -> f64 {
        self.psnr_iterative - self.psnr_oneshot
    }
}

pub struct AblateOutcome {
    pub rows: Vec<AblationRow>,
    pub mean_delta: f64,
}

/// Runs iterative and one-shot denoising on the same held-out inputs.
/// Without `ckpt`, a model is trained from the configured corpus first.
pub fn cmd_ablate(
    cfg: &Config,
    ckpt_path: Option<&Path>,
    out: &Path,
    log: &mut dyn FnMut(&EpochReport),
) -> CliResult<AblateOutcome> {
    if cfg.data.kind == DataKind::Scenes {
        return Err(CliError::Config(
            "ablate compares PSNR and needs image or signal data".into(),
        ));
    }
    let ckpt = match ckpt_path {
        Some(p) => Checkpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => run_training(cfg, &corpus_in_memory(cfg)?, log)?.0,
    };
    if ckpt.process.kind == NoiseKind::OutlierPoints || !cfg.arch().state_shape_ok(&grid_shape(cfg)) {
        return Err(CliError::Config("checkpoint does not match the configured data".into()));
    }
    let denoiser = Denoiser::from_checkpoint(&ckpt);
    let process = &ckpt.process;
    let total = process.total_steps;
    let rows: Vec<AblationRow> = (0..cfg.ablate.count)
        .into_par_iter()
        .map(|i| -> CliResult<AblationRow> {
            let clean = match gen_item(cfg, derive_seed(cfg.seed, &[STREAM_ABLATE_ITEM, i as u64]))? {
                Item::Image(img) => img,
                Item::Signal(pair) => pair.clean_semg,
                Item::Scene(_) => unreachable!("rejected above"),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_ABLATE_NOISE, i as u64]));
            let noisy = noise_to(&clean, total, process, &mut rng)?;
            let iter = denoiser.denoise(&noisy)?;
            let one = denoiser.denoise_oneshot(&noisy)?;
            let mv = cfg.eval.max_value;
            Ok(AblationRow {
                t_hat: iter.t_hat,
                psnr_noisy: psnr(&clean, &noisy, mv)?,
                psnr_iterative: psnr(&clean, &iter.output, mv)?,
                psnr_oneshot: psnr(&clean, &one.output, mv)?,
            })
        })
        .collect::<CliResult<_>>()?;
    create_dir(out)?;
    let mut table = Table::new(&[
        "sample",
        "t_hat",
        "psnr_noisy",
        "psnr_iterative",
        "psnr_oneshot",
        "delta",
    ]);
    for (i, r) in rows.iter().enumerate() {
        table.row(
            &i.to_string(),
            &[
                r.t_hat as f64,
                r.psnr_noisy,
                r.psnr_iterative,
                r.psnr_oneshot,
                r.delta(),
            ],
        );
    }
    write_text(&out.join("ablation.csv"), table.as_str())?;
    let deltas: Vec<f64> = rows.iter().map(AblationRow::delta).collect();
    let (mean, std, n) = metrics::finite_mean_std(&deltas);
    let positive = deltas.iter().filter(|d| **d > 0.0).count();
    write_json(
        &out.join("ablation.json"),
        &json!({
            "count": rows.len(),
            "finite_count": n,
            "mean_delta": if n == 0 { serde_json::Value::Null } else { json_value(mean) },
            "std_delta": if n == 0 { serde_json::Value::Null } else { json_value(std) },
            "positive_deltas": positive,
            "seed": cfg.seed,
            "config_hash": hex_hash(cfg.hash()),
            "checkpoint_config_hash": hex_hash(ckpt.config_hash),
        }),
    )?;
    Ok(AblateOutcome { rows, mean_delta: mean })
}

fn grid_shape(cfg: &Config) -> Vec<usize> {
    match cfg.data.kind {
        DataKind::Images => vec![cfg.data.height, cfg.data.width],
        _ => vec![cfg.data.signal.n_samples()],
    }
}
