//! 2D line models, sequential RANSAC, and angular-error matching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MidError, Result};

/// Line `{p : normal · p = offset}` with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineModel {
    pub normal: [f64; 2],
    pub offset: f64,
    /// Indices (into the input point list) supporting this line.
    pub inliers: Vec<usize>,
}

impl LineModel {
    /// Line through two distinct points.
    pub fn through(p: [f64; 2], q: [f64; 2]) -> Option<Self> {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = dx.hypot(dy);
        if !(len > 0.0) {
            return None;
        }
        let normal = [-dy / len, dx / len];
        Some(LineModel {
            normal,
            offset: normal[0] * p[0] + normal[1] * p[1],
            inliers: Vec::new(),
        })
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset).abs()
    }

    /// Direction angle in degrees, in `[0, 180)`.
    pub fn direction_deg(&self) -> f64 {
        let a = (-self.normal[0]).atan2(self.normal[1]).to_degrees();
        a.rem_euclid(180.0)
    }
}

/// Angle between two lines in degrees, in `[0, 90]`; direction flips do not
/// matter.
pub fn angular_error_deg(a: &LineModel, b: &LineModel) -> f64 {
    let cross = a.normal[0] * b.normal[1] - a.normal[1] * b.normal[0];
    let dot = a.normal[0] * b.normal[0] + a.normal[1] * b.normal[1];
    cross.abs().atan2(dot.abs()).to_degrees()
}

/// Total-least-squares line through the selected points.
pub fn fit_line_tls(points: &[[f64; 2]], idx: &[usize]) -> Option<LineModel> {
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &i in idx {
        mx += points[i][0];
        my += points[i][1];
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &i in idx {
        let (dx, dy) = (points[i][0] - mx, points[i][1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return None;
    }
    // principal direction of the scatter matrix
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let normal = [-theta.sin(), theta.cos()];
    Some(LineModel {
        normal,
        offset: normal[0] * mx + normal[1] * my,
        inliers: idx.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineFitParams {
    /// Max point-to-line distance counted as consensus.
    pub inlier_tol: f64,
    /// Two-point hypotheses drawn per model.
    pub iterations: usize,
    /// Least-squares refit / re-collect rounds on the winning consensus set.
    pub refine_rounds: usize,
}

impl Default for LineFitParams {
    fn default() -> Self {
        LineFitParams {
            inlier_tol: 0.02,
            iterations: 500,
            refine_rounds: 1,
        }
    }
}

/// Greedy sequential RANSAC with default hypothesis budget and refinement.
pub fn sequential_line_fit<R: Rng + ?Sized>(
    points: &[[f64; 2]],
    n_models: usize,
    inlier_tol: f64,
    rng: &mut R,
) -> Result<Vec<LineModel>> {
    let params = LineFitParams {
        inlier_tol,
        ..LineFitParams::default()
    };
    sequential_line_fit_with(points, n_models, &params, rng)
}

/// Repeats `n_models` times: draw two-point hypotheses, keep the one with
/// the largest consensus, refit it by least squares, and remove its inliers.
/// Stops early when fewer than two points remain.
pub fn sequential_line_fit_with<R: Rng + ?Sized>(
    points: &[[f64; 2]],
    n_models: usize,
    params: &LineFitParams,
    rng: &mut R,
) -> Result<Vec<LineModel>> {
    if points.len() < 2 {
        return Err(MidError::Config(format!(
            "line fitting needs >= 2 points, got {}",
            points.len()
        )));
    }
    if n_models == 0 || !(params.inlier_tol > 0.0) || params.iterations == 0 {
        return Err(MidError::Config(format!(
            "invalid line-fit settings: n_models={n_models}, {params:?}"
        )));
    }
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut models = Vec::new();
    let consensus = |line: &LineModel, pool: &[usize]| -> Vec<usize> {
        pool.iter()
            .copied()
            .filter(|&i| line.distance(points[i]) <= params.inlier_tol)
            .collect()
    };
    while models.len() < n_models && remaining.len() >= 2 {
        let mut best: Option<(LineModel, Vec<usize>)> = None;
        for _ in 0..params.iterations {
            let a = rng.random_range(0..remaining.len());
            let mut b = rng.random_range(0..remaining.len() - 1);
            if b >= a {
                b += 1;
            }
            let Some(line) = LineModel::through(points[remaining[a]], points[remaining[b]]) else {
                continue;
            };
            let support = consensus(&line, &remaining);
            if best.as_ref().is_none_or(|(_, s)| support.len() > s.len()) {
                best = Some((line, support));
            }
        }
        let Some((mut line, mut support)) = best else {
            break;
        };
        if support.len() < 2 {
            break;
        }
        for _ in 0..params.refine_rounds {
            let Some(refit) = fit_line_tls(points, &support) else {
                break;
            };
            let next = consensus(&refit, &remaining);
            line = refit;
            if next.len() < 2 || next == support {
                break;
            }
            support = next;
        }
        if let Some(refit) = fit_line_tls(points, &support) {
            line = refit;
        }
        line.inliers = support.clone();
        remaining.retain(|i| support.binary_search(i).is_err());
        models.push(line);
    }
    Ok(models)
}

/// Angular error of each ground-truth line against its matched estimate.
///
/// Pairs are matched one-to-one, greedily by the mean distance of the
/// ground-truth probe points to the estimated line. Ground-truth lines left
/// without an estimate get `+∞`.
pub fn matched_angular_errors(truth: &[(LineModel, Vec<[f64; 2]>)], estimates: &[LineModel]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, (_, probes)) in truth.iter().enumerate() {
        for (ei, est) in estimates.iter().enumerate() {
            let cost = probes.iter().map(|p| est.distance(*p)).sum::<f64>() / probes.len().max(1) as f64;
            pairs.push((cost, gi, ei));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut errors = vec![f64::INFINITY; truth.len()];
    let mut used_truth = vec![false; truth.len()];
    let mut used_est = vec![false; estimates.len()];
    for (_, gi, ei) in pairs {
        if used_truth[gi] || used_est[ei] {
            continue;
        }
        used_truth[gi] = true;
        used_est[ei] = true;
        errors[gi] = angular_error_deg(&truth[gi].0, &estimates[ei]);
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn angular_error_ignores_direction_flip() {
        let a = LineModel::through([0.0, 0.0], [1.0, 1.0]).unwrap();
        let b = LineModel::through([1.0, 1.0], [0.0, 0.0]).unwrap();
        assert!(angular_error_deg(&a, &b) < 1e-12);
        let c = LineModel::through([0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((angular_error_deg(&a, &c) - 45.0).abs() < 1e-12);
        let d = LineModel::through([0.0, 0.0], [-1.0, 1e-9]).unwrap();
        assert!(angular_error_deg(&c, &d) < 1e-6);
    }

    #[test]
    fn exact_collinear_points_recover_line() {
        let pts: Vec<[f64; 2]> = (0..50)
            .map(|i| {
                let s = i as f64 / 49.0;
                [0.1 + 0.7 * s, 0.2 + 0.3 * s]
            })
            .collect();
        let truth = LineModel::through([0.1, 0.2], [0.8, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = sequential_line_fit(&pts, 1, 0.01, &mut rng).unwrap();
        assert_eq!(fit.len(), 1);
        assert!(angular_error_deg(&fit[0], &truth) < 1e-9);
        assert_eq!(fit[0].inliers.len(), 50);
    }

    #[test]
    fn two_perpendicular_lines() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let s = i as f64 / 49.0;
            pts.push([0.1 + 0.8 * s, 0.3]);
            pts.push([0.6, 0.05 + 0.9 * s]);
        }
        let h = LineModel::through([0.0, 0.3], [1.0, 0.3]).unwrap();
        let v = LineModel::through([0.6, 0.0], [0.6, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = sequential_line_fit(&pts, 2, 0.01, &mut rng).unwrap();
        assert_eq!(fit.len(), 2);
        let truth = vec![(h, vec![[0.1, 0.3], [0.9, 0.3]]), (v, vec![[0.6, 0.05], [0.6, 0.95]])];
        let errs = matched_angular_errors(&truth, &fit);
        assert!(errs.iter().all(|&e| e < 0.1), "{errs:?}");
    }

    #[test]
    fn stops_early_when_points_run_out() {
        let pts = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fit = sequential_line_fit(&pts, 3, 0.01, &mut rng).unwrap();
        assert_eq!(fit.len(), 1);
        assert!(sequential_line_fit(&pts[..1], 1, 0.01, &mut rng).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| [(i * 7 % 40) as f64 / 40.0, (i * 13 % 40) as f64 / 40.0])
            .collect();
        let a = sequential_line_fit(&pts, 2, 0.02, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sequential_line_fit(&pts, 2, 0.02, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unmatched_truth_gets_infinite_error() {
        let h = LineModel::through([0.0, 0.3], [1.0, 0.3]).unwrap();
        let errs = matched_angular_errors(&[(h.clone(), vec![[0.0, 0.3]]), (h, vec![[0.0, 0.3]])], &[]);
        assert!(errs.iter().all(|e| e.is_infinite()));
    }
}
