//! Central finite differences, used as the gradient oracle in tests.

use super::layers::Stack;
use super::tensor::Tensor;
use crate::error::{MidError, Result};

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(MidError::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(MidError::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest relative error `|a − b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst relative error between the analytic gradients of a stack and
/// central differences, over the input and every parameter. The objective
/// is the weighted sum `Σ weights ⊙ stack(x)`, so `weights` doubles as the
/// upstream gradient.
pub fn stack_gradient_error(
    stack: &Stack,
    x: &Tensor,
    step: Option<f64>,
    weights: &Tensor,
    h: f64,
    floor: f64,
) -> Result<f64> {
    let objective = |s: &Stack, input: &Tensor| -> Result<f64> {
        let y = s.infer(input, step)?;
        y.expect_same_shape(weights, "gradient check weights")?;
        Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };
    let (_, cache) = stack.forward(x, step)?;
    let (gx, grads) = stack.backward(&cache, weights)?;
    let mut worst = max_relative_error(&gx, &finite_diff_grad(|xi| objective(stack, xi), x, h)?, floor);
    let n_params = stack.param_count();
    for (k, analytic) in grads.iter().enumerate().take(n_params) {
        let value = stack.params().nth(k).expect("param index in range").value.clone();
        let numeric = finite_diff_grad(
            |v| {
                let mut probe = stack.clone();
                probe.params_mut().nth(k).expect("param index in range").value = v.clone();
                objective(&probe, x)
            },
            &value,
            h,
        )?;
        worst = worst.max(max_relative_error(analytic, &numeric, floor));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum() {
        let x = Tensor::from_vec(vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum_sq()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_grad() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|_| Ok(4.2), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_at_origin() {
        let x = Tensor::from_vec(vec![0.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v.sin()).sum()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let x = Tensor::from_vec(vec![1.0, 0.0]).unwrap();
        let f = |t: &Tensor| Ok(if t.data()[1] > 0.0 { f64::INFINITY } else { 0.0 });
        let err = finite_diff_grad(f, &x, 1e-5).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(finite_diff_grad(|t| Ok(t.sum()), &x, 0.0).is_err());
    }

    #[test]
    fn dense_sigmoid_stack_agrees() {
        use crate::numerics::LayerSpec;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let specs = [LayerSpec::Dense { input: 3, output: 2 }, LayerSpec::Sigmoid];
        let stack = Stack::new(&specs, "s", &mut rng);
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.1, 0.7, 1.2, 0.0, -0.4]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        let err = stack_gradient_error(&stack, &x, None, &w, 1e-5, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
