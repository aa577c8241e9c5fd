//! Universal adversarial perturbation: one shared vector built by
//! accumulating FGSM steps over the dataset under an L-infinity cap.

use super::{project_linf, sign0, AdversarialBatch, AttackConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UapParams {
    /// Step magnitude of the inner FGSM.
    pub eps: f32,
    /// L-infinity cap on the universal perturbation.
    pub xi: f32,
    /// Target fooling rate; the loop stops once reached.
    pub delta: f64,
    pub max_epochs: usize,
}

impl Default for UapParams {
    fn default() -> Self {
        UapParams { eps: 0.1, xi: 0.6, delta: 0.8, max_epochs: 10 }
    }
}

fn perturbed(x: &[f32], v: &Tensor, shape: &[usize]) -> Tensor {
    let data: Vec<f32> = x
        .iter()
        .zip(v.data().iter())
        .map(|(&a, &b)| (a + b).clamp(0.0, 1.0))
        .collect();
    Tensor::new(data, shape.to_vec()).expect("perturbed sample shape")
}

fn fooling_rate(model: &Model, batch: &Tensor, labels: &[usize], v: &Tensor) -> Result<f64> {
    let mut shape = batch.shape().to_vec();
    shape[0] = 1;
    let mut fooled = 0usize;
    // Evaluate in chunks to keep forward batched.
    let n = batch.batch();
    let mut adv_shape = batch.shape().to_vec();
    adv_shape[0] = n;
    let mut adv = Tensor::zeros(&adv_shape);
    for s in 0..n {
        let row = perturbed(batch.row(s), v, &shape);
        adv.row_mut(s).copy_from_slice(row.data());
    }
    let preds = model.predict(&adv)?;
    for (p, &l) in preds.iter().zip(labels.iter()) {
        if *p != l {
            fooled += 1;
        }
    }
    Ok(fooled as f64 / n as f64)
}

/// Build the universal perturbation on a dataset of correctly-classified
/// samples. Returns the final v (with ||v||_inf <= xi exactly) and the
/// measured fooling rate.
pub fn uap(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    p: &UapParams,
) -> Result<(Tensor, f64)> {
    if batch.batch() == 0 {
        return Err(Error::Domain("UAP needs a non-empty dataset".into()));
    }
    let mut sample_shape = batch.shape().to_vec();
    sample_shape[0] = 1;
    let mut v = Tensor::zeros(&sample_shape);
    let mut rate = fooling_rate(model, batch, labels, &v)?;

    for _epoch in 0..p.max_epochs {
        if rate >= p.delta {
            break;
        }
        for s in 0..batch.batch() {
            let x_v = perturbed(batch.row(s), &v, &sample_shape);
            let pred = model.predict(&x_v)?[0];
            if pred != labels[s] {
                continue; // already fooled with the current v
            }
            // FGSM(eps) at x + v, accumulated into v; project after every
            // update so the cap holds exactly throughout.
            let grad = model.input_gradient(&x_v, &labels[s..s + 1])?;
            for (vi, &gi) in v.data_mut().iter_mut().zip(grad.data().iter()) {
                *vi += p.eps * sign0(gi);
            }
            v = project_linf(&v, p.xi);
        }
        rate = fooling_rate(model, batch, labels, &v)?;
    }
    Ok((v, rate))
}

/// Apply a universal perturbation: per-image adversarial = clip(x + v).
pub fn uap_batch(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    v: &Tensor,
    p: &UapParams,
) -> Result<AdversarialBatch> {
    let mut adv = Tensor::zeros(batch.shape());
    for s in 0..batch.batch() {
        for ((a, &x), &vi) in adv
            .row_mut(s)
            .iter_mut()
            .zip(batch.row(s).iter())
            .zip(v.data().iter())
        {
            *a = (x + vi).clamp(0.0, 1.0);
        }
    }
    let preds = model.predict(&adv)?;
    let success: Vec<bool> = preds.iter().zip(labels.iter()).map(|(p, l)| p != l).collect();
    AdversarialBatch::new(
        batch.clone(),
        adv,
        labels.to_vec(),
        model.id(),
        AttackConfig::Uap(*p),
        success,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::quant::QuantConfig;

    fn toy_model(seed: u64) -> Model {
        Model::build(
            "uaptoy",
            "unit",
            &[4],
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 6, out_dim: 2 },
            ],
            QuantConfig::fp(),
            seed,
        )
        .unwrap()
    }

    fn correctly_classified(m: &Model, n: usize) -> (Tensor, Vec<usize>) {
        let x = Tensor::from_fn(&[n, 4], |i| ((i * 17 + 3) % 13) as f32 / 13.0);
        let labels = m.predict(&x).unwrap();
        (x, labels)
    }

    #[test]
    fn xi_zero_keeps_v_zero_and_runs_out_epochs() {
        let m = toy_model(1);
        let (x, labels) = correctly_classified(&m, 6);
        let p = UapParams { eps: 0.1, xi: 0.0, delta: 0.8, max_epochs: 3 };
        let (v, rate) = uap(&m, &x, &labels, &p).unwrap();
        assert!(v.data().iter().all(|&c| c == 0.0));
        assert_eq!(rate, 0.0, "labels are the model's own predictions");
    }

    #[test]
    fn projection_invariant_holds() {
        let m = toy_model(2);
        let (x, labels) = correctly_classified(&m, 8);
        let p = UapParams { eps: 0.05, xi: 0.12, delta: 1.0, max_epochs: 4 };
        let (v, _) = uap(&m, &x, &labels, &p).unwrap();
        assert!(v.data().iter().all(|&c| c.abs() <= 0.12), "||v||_inf <= xi exactly");
        let b = uap_batch(&m, &x, &labels, &v, &p).unwrap();
        b.validate_budget().unwrap();
    }

    #[test]
    fn single_image_one_epoch_is_projected_fgsm_step() {
        let m = toy_model(3);
        let (x, labels) = correctly_classified(&m, 1);
        let p = UapParams { eps: 0.2, xi: 0.15, delta: 1.0, max_epochs: 1 };
        let (v, _) = uap(&m, &x, &labels, &p).unwrap();
        // Hand trace: v starts 0; the sample is correctly classified, so
        // v becomes project(eps * sign(grad at x), xi).
        let grad = m.input_gradient(&x, &labels).unwrap();
        let expect: Vec<f32> = grad
            .data()
            .iter()
            .map(|&g| (0.2 * sign0(g)).clamp(-0.15, 0.15))
            .collect();
        assert_eq!(v.data(), &expect[..]);
    }

    #[test]
    fn one_shared_vector_defines_every_adversarial() {
        let m = toy_model(4);
        let (x, labels) = correctly_classified(&m, 5);
        let p = UapParams { eps: 0.1, xi: 0.3, delta: 1.0, max_epochs: 2 };
        let (v, _) = uap(&m, &x, &labels, &p).unwrap();
        let b = uap_batch(&m, &x, &labels, &v, &p).unwrap();
        for s in 0..5 {
            for ((&a, &c), &vi) in b
                .adversarial
                .row(s)
                .iter()
                .zip(b.clean.row(s).iter())
                .zip(v.data().iter())
            {
                assert_eq!(a, (c + vi).clamp(0.0, 1.0));
            }
        }
    }

    #[test]
    fn empty_dataset_is_domain_error() {
        let m = toy_model(5);
        let x = Tensor::zeros(&[0, 4]);
        assert!(matches!(
            uap(&m, &x, &[], &UapParams::default()),
            Err(Error::Domain(_))
        ));
    }
}
