//! Upper bound for outlier removal as a line-fitting preprocessor.
//!
//! Feeds the ground-truth inlier set (a perfect denoiser) to sequential line
//! fitting and counts the scenes where its recall-AUC strictly beats the raw
//! point set, across inlier tolerances and refinement rounds.
//!
//! `cargo run --release -p mid-core --example line_fit_ceiling`

use mid_core::datagen::{gen_scene, SceneSpec};
use mid_core::hash::derive_seed;
use mid_core::metrics::{matched_angular_errors, recall_auc, sequential_line_fit_with, LineFitParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SCENES: u64 = 200;

fn main() {
    let spec = SceneSpec::default();
    for tol in [0.01, 0.015, 0.02, 0.03, 0.05] {
        for refine in [0usize, 1, 3] {
            let params = LineFitParams {
                inlier_tol: tol,
                iterations: 500,
                refine_rounds: refine,
            };
            let (mut better, mut tie, mut worse) = (0, 0, 0);
            let (mut auc_raw, mut auc_clean) = (0.0, 0.0);
            for i in 0..SCENES {
                let scene = gen_scene(&spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(7, &[i]))).unwrap();
                let truth = scene.truth_for_matching();
                let fit = |pts: &[[f64; 2]]| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(8, &[i]));
                    let est = sequential_line_fit_with(pts, spec.n_lines, &params, &mut rng).unwrap();
                    recall_auc(&matched_angular_errors(&truth, &est), 0.5).unwrap()
                };
                let raw = fit(&scene.points);
                let clean = fit(&scene.inliers_only().points);
                auc_raw += raw;
                auc_clean += clean;
                match clean.partial_cmp(&raw) {
                    Some(std::cmp::Ordering::Greater) => better += 1,
                    Some(std::cmp::Ordering::Equal) => tie += 1,
                    _ => worse += 1,
                }
            }
            let n = SCENES as f64;
            println!(
                "tol {tol} refine {refine}: ground truth better {better}, tie {tie}, worse {worse} of {SCENES}; \
                 mean AUC raw {:.3}, clean {:.3}",
                auc_raw / n,
                auc_clean / n
            );
        }
    }
}
