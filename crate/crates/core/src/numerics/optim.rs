//! AdamW with decoupled weight decay.
//!
//! `θ ← θ − lr · (m̂ / (√v̂ + eps) + wd · θ)` with bias-corrected moments.

use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::error::{MidError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MidError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Applies one update to every parameter, then zeroes the gradients.
    ///
    /// Nothing is modified if any gradient is non-finite or the step counters
    /// disagree.
    pub fn step<'a, I>(&self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Param>,
    {
        let mut params: Vec<&mut Param> = params.into_iter().collect();
        let Some(first) = params.first() else {
            return Ok(());
        };
        let count = first.step_count;
        for p in &params {
            if !p.grad.all_finite() {
                return Err(MidError::NonFinite(format!("gradient of parameter {}", p.name)));
            }
            if p.step_count != count {
                return Err(MidError::Internal(format!(
                    "parameter {} is at step {} but the set is at step {count}",
                    p.name, p.step_count
                )));
            }
        }
        let t = (count + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let Param {
                value,
                grad,
                adam_m,
                adam_v,
                step_count,
                ..
            } = &mut **p;
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(adam_m.data_mut().iter_mut().zip(adam_v.data_mut().iter_mut()));
            for ((theta, g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
                *g = 0.0;
            }
            *step_count += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn param(name: &str, value: f64, grad: f64) -> Param {
        let mut p = Param::new(name, Tensor::from_vec(vec![value]).unwrap());
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut p = param("w", 0.7, 0.0);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value.data(), &[0.7]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m_hat = 1, v_hat = 1, update = lr * (1 / (1 + eps) + wd * 1)
        let mut p = param("w", 1.0, 1.0);
        AdamW::default().step([&mut p]).unwrap();
        let expected = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.999899).abs() < 1e-9);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn identical_params_evolve_identically() {
        let opt = AdamW::default();
        let mut a = param("a", 0.3, 0.0);
        let mut b = param("b", 0.3, 0.0);
        for k in 0..20 {
            let g = (k as f64 * 0.7).sin();
            a.grad.data_mut()[0] = g;
            b.grad.data_mut()[0] = g;
            opt.step([&mut a, &mut b]).unwrap();
        }
        assert_eq!(a.value.data()[0].to_bits(), b.value.data()[0].to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_param() {
        let mut a = param("layer.0.weight", 1.0, 0.5);
        let mut b = param("layer.0.bias", 1.0, f64::NAN);
        let err = AdamW::default().step([&mut a, &mut b]).unwrap_err();
        assert!(err.to_string().contains("layer.0.bias"));
        assert_eq!(a.value.data(), &[1.0]);
        assert_eq!(a.step_count, 0);
    }

    #[test]
    fn inconsistent_step_counts_rejected() {
        let mut a = param("a", 1.0, 0.5);
        let mut b = param("b", 1.0, 0.5);
        b.step_count = 3;
        assert!(AdamW::default().step([&mut a, &mut b]).is_err());
    }
}
