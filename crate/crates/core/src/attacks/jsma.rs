//! Jacobian saliency map attack: per-iteration single-feature perturbation
//! toward a random non-true target class.

use super::{AdversarialBatch, AttackConfig};
use crate::error::Result;
use crate::model::Model;
use crate::rng::sample_rng;
use crate::tensor::Tensor;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsmaParams {
    /// Distortion added to the chosen pixel per iteration.
    pub theta: f32,
    /// Maximum fraction of pixels that may be modified, in percent.
    pub gamma_percent: f32,
}

/// Saliency scores from a (classes x features) Jacobian for target class t:
/// zero where the target derivative is negative or the off-target sum is
/// positive, otherwise (df_t/dx_i) * |sum_{j != t} df_j/dx_i|. Excluded
/// features score negative infinity.
pub fn saliency_map(jac: &Tensor, t: usize, excluded: &[bool]) -> Vec<f32> {
    let (classes, m) = (jac.shape()[0], jac.shape()[1]);
    debug_assert!(t < classes);
    debug_assert_eq!(excluded.len(), m);
    let mut scores = vec![0.0f32; m];
    for i in 0..m {
        if excluded[i] {
            scores[i] = f32::NEG_INFINITY;
            continue;
        }
        let dt = jac.data()[t * m + i];
        let mut rest = 0.0f32;
        for j in 0..classes {
            if j != t {
                rest += jac.data()[j * m + i];
            }
        }
        scores[i] = if dt < 0.0 || rest > 0.0 { 0.0 } else { dt * rest.abs() };
    }
    scores
}

struct SampleResult {
    adv: Vec<f32>,
    success: bool,
}

fn attack_sample(
    model: &Model,
    x0: &Tensor,
    label: usize,
    target: usize,
    budget: usize,
    theta: f32,
) -> Result<SampleResult> {
    let m = x0.row_len();
    let mut x = x0.clone();
    // Already-adversarial samples are returned unchanged (0 iterations).
    let pred = model.predict(&x)?[0];
    if pred != label {
        return Ok(SampleResult { adv: x.into_data(), success: true });
    }
    let mut modified = vec![false; m];
    let mut modified_count = 0usize;
    let saturated = |v: f32| (theta > 0.0 && v >= 1.0) || (theta < 0.0 && v <= 0.0);

    loop {
        let pred = model.predict(&x)?[0];
        if pred == target {
            break;
        }
        let jac = &model.jacobian_wrt_input_batch(&x)?[0];
        let excluded: Vec<bool> = x.data().iter().map(|&v| saturated(v)).collect();
        let scores = saliency_map(jac, target, &excluded);
        let mut best = 0usize;
        let mut best_score = f32::NEG_INFINITY;
        for (i, &s) in scores.iter().enumerate() {
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        if !(best_score > 0.0) {
            break; // no feature helps
        }
        if !modified[best] {
            if modified_count == budget {
                break;
            }
            modified[best] = true;
            modified_count += 1;
        }
        let v = &mut x.data_mut()[best];
        *v = (*v + theta).clamp(0.0, 1.0);
    }
    let final_pred = model.predict(&x)?[0];
    Ok(SampleResult { adv: x.into_data(), success: final_pred != label })
}

/// Target classes are drawn uniformly from the non-true classes, one per
/// sample, from the sample's RNG stream.
pub fn jsma(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    ids: &[usize],
    p: &JsmaParams,
    seed: u64,
) -> Result<AdversarialBatch> {
    let m = batch.row_len();
    let classes = model.num_classes();
    let budget = (p.gamma_percent as f64 / 100.0 * m as f64).floor() as usize;

    let results: Vec<Result<SampleResult>> = (0..batch.batch())
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, ids[s]);
            let mut target = rng.gen_range(0..classes - 1);
            if target >= labels[s] {
                target += 1;
            }
            attack_sample(model, &batch.row_tensor(s), labels[s], target, budget, p.theta)
        })
        .collect();

    let mut adv = Tensor::zeros(batch.shape());
    let mut success = Vec::with_capacity(batch.batch());
    for (s, r) in results.into_iter().enumerate() {
        let r = r?;
        adv.row_mut(s).copy_from_slice(&r.adv);
        success.push(r.success);
    }
    AdversarialBatch::new(
        batch.clone(),
        adv,
        labels.to_vec(),
        model.id(),
        AttackConfig::Jsma(*p),
        success,
    )
}
