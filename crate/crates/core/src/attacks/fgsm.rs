//! Fast gradient sign method: a single max-norm step along the loss
//! gradient, x_adv = clip(x + eps * sign(dJ/dx), 0, 1).

use super::{sign0, AdversarialBatch, AttackConfig};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgsmParams {
    /// L-infinity perturbation magnitude.
    pub eps: f32,
}

/// The update rule on raw slices; exposed for direct testing.
pub fn fgsm_step(x: &[f32], grad: &[f32], eps: f32, out: &mut [f32]) {
    for ((o, &xi), &gi) in out.iter_mut().zip(x.iter()).zip(grad.iter()) {
        *o = (xi + eps * sign0(gi)).clamp(0.0, 1.0);
    }
}

pub fn fgsm(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    p: &FgsmParams,
) -> Result<AdversarialBatch> {
    let grad = model.input_gradient(batch, labels)?;
    let mut adv = Tensor::zeros(batch.shape());
    fgsm_step(batch.data(), grad.data(), p.eps, adv.data_mut());
    let predictions = model.predict(&adv)?;
    let success: Vec<bool> = predictions
        .iter()
        .zip(labels.iter())
        .map(|(p, l)| p != l)
        .collect();
    AdversarialBatch::new(
        batch.clone(),
        adv,
        labels.to_vec(),
        model.id(),
        AttackConfig::Fgsm(*p),
        success,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::quant::QuantConfig;

    #[test]
    fn step_rule_scalar_cases() {
        // x = 0.5, dJ/dx = +2.3, eps = 0.25 -> 0.75.
        let mut out = [0.0f32];
        fgsm_step(&[0.5], &[2.3], 0.25, &mut out);
        assert_eq!(out[0], 0.75);
        // Positive gradient at 0.9 clips to 1.0.
        fgsm_step(&[0.9], &[0.1], 0.25, &mut out);
        assert_eq!(out[0], 1.0);
        // Zero gradient leaves the pixel untouched.
        fgsm_step(&[0.4], &[0.0], 0.25, &mut out);
        assert_eq!(out[0], 0.4);
        // Negative gradient moves down.
        fgsm_step(&[0.5], &[-7.0], 0.25, &mut out);
        assert_eq!(out[0], 0.25);
    }

    #[test]
    fn eps_zero_returns_input_unchanged() {
        let m = Model::build(
            "t",
            "unit",
            &[3],
            vec![LayerSpec::Dense { in_dim: 3, out_dim: 2 }],
            QuantConfig::fp(),
            1,
        )
        .unwrap();
        let x = Tensor::new(vec![0.1, 0.5, 0.9], vec![1, 3]).unwrap();
        let b = fgsm(&m, &x, &[0], &FgsmParams { eps: 0.0 }).unwrap();
        assert_eq!(b.adversarial.data(), x.data());
        assert_eq!(b.linf_distortion[0], 0.0);
    }

    #[test]
    fn linf_budget_holds() {
        let m = Model::build(
            "t",
            "unit",
            &[4],
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 4, out_dim: 3 },
            ],
            QuantConfig::fp(),
            2,
        )
        .unwrap();
        let x = Tensor::from_fn(&[5, 4], |i| ((i * 31) % 11) as f32 / 11.0);
        let labels = vec![0, 1, 2, 0, 1];
        let b = fgsm(&m, &x, &labels, &FgsmParams { eps: 0.3 }).unwrap();
        b.validate_budget().unwrap();
        for &l in &b.linf_distortion {
            assert!(l <= 0.3 + 1e-6);
        }
        assert!(b.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn deterministic_given_inputs() {
        let m = Model::build(
            "t",
            "unit",
            &[4],
            vec![LayerSpec::Dense { in_dim: 4, out_dim: 2 }],
            QuantConfig::fp(),
            7,
        )
        .unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.17).fract());
        let b1 = fgsm(&m, &x, &[0, 1, 0], &FgsmParams { eps: 0.1 }).unwrap();
        let b2 = fgsm(&m, &x, &[0, 1, 0], &FgsmParams { eps: 0.1 }).unwrap();
        assert_eq!(b1.adversarial.data(), b2.adversarial.data());
    }
}
