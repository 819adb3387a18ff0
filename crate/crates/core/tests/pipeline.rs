use mid_core::checkpoint::Checkpoint;
use mid_core::datagen::{gen_scene, gen_texture_image, points_to_tensor, SceneSpec};
use mid_core::denoiser::Denoiser;
use mid_core::hash::derive_seed;
use mid_core::networks::ArchSpec;
use mid_core::noise::{noise_to, NoiseProcessSpec};
use mid_core::numerics::Tensor;
use mid_core::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(11, stream))
}

fn images(stream: u64, n: usize, side: usize) -> Vec<Tensor> {
    (0..n)
        .map(|i| gen_texture_image(side, side, &mut rng(&[stream, i as u64])).unwrap())
        .collect()
}

#[test]
fn toy_gaussian_run_learns_step_and_lowers_loss() {
    let process = NoiseProcessSpec::gaussian(10, 0.2);
    let mut cfg = TrainConfig::new(process.clone(), ArchSpec::image(16, 16));
    cfg.epochs = 30;
    let (ckpt, history) = train(&images(1, 64, 16), &cfg).unwrap();
    assert_eq!(history.len(), 30);
    assert!(history[29].loss_total < history[0].loss_total, "{history:?}");

    let d = Denoiser::from_checkpoint(&ckpt);
    let held_out = images(2, 16, 16);
    let (mut low, mut high) = (0.0, 0.0);
    for (i, s0) in held_out.iter().enumerate() {
        let s1 = noise_to(s0, 1, &process, &mut rng(&[3, i as u64])).unwrap();
        let s10 = noise_to(s0, 10, &process, &mut rng(&[4, i as u64])).unwrap();
        low += d.estimate_step(&s1).unwrap() as f64;
        high += d.estimate_step(&s10).unwrap() as f64;
    }
    assert!(high > low, "mean t̂ at T {high} vs at 1 {low}");
}

#[test]
fn reloaded_checkpoint_denoises_identically() {
    let process = NoiseProcessSpec::gaussian(4, 0.2);
    let mut cfg = TrainConfig::new(
        process.clone(),
        ArchSpec {
            channels: 4,
            hidden: 8,
            ..ArchSpec::image(8, 8)
        },
    );
    cfg.epochs = 2;
    cfg.batch_size = 4;
    let (ckpt, _) = train(&images(5, 8, 8), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.midc");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();

    let noisy = noise_to(&images(6, 1, 8)[0], 4, &process, &mut rng(&[7])).unwrap();
    let a = Denoiser::from_checkpoint(&ckpt).denoise(&noisy).unwrap();
    let b = Denoiser::from_checkpoint(&loaded).denoise(&noisy).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.t_hat, b.t_hat);
    assert_eq!(a.output.shape(), noisy.shape());
}

#[test]
fn point_partition_is_consistent() {
    let spec = SceneSpec::default();
    let train_set: Vec<Tensor> = (0..8)
        .map(|i| points_to_tensor(&gen_scene(&spec, &mut rng(&[8, i])).unwrap().inliers_only().points).unwrap())
        .collect();
    let process = NoiseProcessSpec::outlier_points(5, 10, [0.0, 0.0, 1.0, 1.0]);
    let mut cfg = TrainConfig::new(
        process,
        ArchSpec {
            hidden: 8,
            ..ArchSpec::points()
        },
    );
    cfg.epochs = 2;
    let (ckpt, _) = train(&train_set, &cfg).unwrap();
    let d = Denoiser::from_checkpoint(&ckpt);
    let scene = gen_scene(&spec, &mut rng(&[9])).unwrap();
    let part = d.denoise_points(&scene.points).unwrap();

    let mut all: Vec<usize> = part.kept.iter().chain(&part.removed).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..scene.points.len()).collect::<Vec<_>>());
    assert!(part.removed.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(part.kept_per_step.len(), part.t_hat);
    assert!(part.kept_per_step.windows(2).all(|w| w[0] >= w[1]));
}
