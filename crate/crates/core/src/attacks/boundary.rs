//! Decision-based boundary attack: walks a random misclassified image
//! toward the clean image along the decision boundary, using label queries
//! only. The function signature admits no gradient access by construction.

use super::{AdversarialBatch, AttackConfig, BaParams as Params};
use crate::error::{Error, Result};
use crate::rng::sample_rng;
use crate::tensor::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaParams {
    pub iterations: usize,
    /// Proposal queries per iteration.
    pub queries_per_iter: usize,
    /// Random draws allowed when hunting for a misclassified start image.
    pub init_trials: usize,
    /// Relative orthogonal step size (adapted during the run).
    pub step_ortho: f32,
    /// Relative step toward the clean image (adapted during the run).
    pub step_source: f32,
}

impl BaParams {
    pub fn with_iterations(iterations: usize) -> Self {
        BaParams {
            iterations,
            queries_per_iter: 10,
            init_trials: 50,
            step_ortho: 0.1,
            step_source: 0.1,
        }
    }
}

struct SampleRun {
    adv: Vec<f32>,
    /// L2 distances of accepted iterates, starting at the init image.
    accepted_distances: Vec<f64>,
}

/// Acceptance-rate window for the step-size schedule.
const ADAPT_WINDOW: usize = 10;
const ADAPT_LOW: f64 = 0.2;
const ADAPT_HIGH: f64 = 0.5;

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn attack_sample<P>(
    predict1: &P,
    shape: &[usize],
    clean: &[f32],
    label: usize,
    p: &Params,
    rng: &mut crate::rng::Rng,
) -> Result<Option<SampleRun>>
where
    P: Fn(&Tensor) -> Result<usize>,
{
    let m = clean.len();
    let mk = |data: Vec<f32>| Tensor::new(data, shape.to_vec()).expect("sample shape");

    // Uniform-random init until misclassified.
    let mut current: Option<Vec<f32>> = None;
    for _ in 0..p.init_trials {
        let cand: Vec<f32> = (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect();
        if predict1(&mk(cand.clone()))? != label {
            current = Some(cand);
            break;
        }
    }
    let Some(mut current) = current else {
        return Ok(None);
    };

    let mut dist = l2(&current, clean);
    let mut accepted_distances = vec![dist];
    let mut delta_o = p.step_ortho;
    let mut eps_s = p.step_source;
    let mut window: Vec<bool> = Vec::with_capacity(ADAPT_WINDOW);

    for _iter in 0..p.iterations {
        for _q in 0..p.queries_per_iter {
            if dist == 0.0 {
                break;
            }
            // Orthogonal step: gaussian perturbation rescaled onto the
            // sphere of radius dist around the clean image.
            let eta: Vec<f32> = (0..m).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            let eta_norm = l2(&eta, &vec![0.0; m]).max(1e-12);
            let scale = (delta_o as f64) * dist / eta_norm;
            let mut cand: Vec<f32> = current
                .iter()
                .zip(eta.iter())
                .map(|(&c, &e)| c + (e as f64 * scale) as f32)
                .collect();
            let r = l2(&cand, clean);
            if r > 0.0 {
                let rescale = dist / r;
                for (ci, &cl) in cand.iter_mut().zip(clean.iter()) {
                    *ci = cl + ((*ci - cl) as f64 * rescale) as f32;
                }
            }
            // Contraction toward the clean image, then the image box.
            for (ci, &cl) in cand.iter_mut().zip(clean.iter()) {
                *ci += eps_s * (cl - *ci);
                *ci = ci.clamp(0.0, 1.0);
            }
            let new_dist = l2(&cand, clean);
            let accepted =
                new_dist <= dist && predict1(&mk(cand.clone()))? != label;
            if accepted {
                current = cand;
                dist = new_dist;
                accepted_distances.push(dist);
            }
            window.push(accepted);
            if window.len() == ADAPT_WINDOW {
                let rate = window.iter().filter(|&&a| a).count() as f64 / ADAPT_WINDOW as f64;
                if rate < ADAPT_LOW {
                    delta_o *= 0.9;
                    eps_s *= 0.9;
                } else if rate > ADAPT_HIGH {
                    delta_o *= 1.1;
                    eps_s *= 1.1;
                }
                window.clear();
            }
        }
    }
    Ok(Some(SampleRun { adv: current, accepted_distances }))
}

/// Run the attack through a label-only oracle. Returns the batch of samples
/// that initialized successfully (failed inits are dropped and reported in
/// the second element alongside each sample's accepted-distance history).
#[allow(clippy::type_complexity)]
pub fn boundary_attack<P>(
    predict: &P,
    source_model: &str,
    batch: &Tensor,
    labels: &[usize],
    ids: &[usize],
    p: &Params,
    seed: u64,
) -> Result<(AdversarialBatch, Vec<Vec<f64>>)>
where
    P: Fn(&Tensor) -> Result<Vec<usize>> + Sync,
{
    let mut shape = batch.shape().to_vec();
    shape[0] = 1;
    let predict1 = |t: &Tensor| -> Result<usize> { Ok(predict(t)?[0]) };

    let runs: Vec<Result<Option<SampleRun>>> = (0..batch.batch())
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, ids[s]);
            attack_sample(&predict1, &shape, batch.row(s), labels[s], p, &mut rng)
        })
        .collect();

    let mut kept_rows: Vec<usize> = Vec::new();
    let mut advs: Vec<Vec<f32>> = Vec::new();
    let mut trajectories: Vec<Vec<f64>> = Vec::new();
    for (s, run) in runs.into_iter().enumerate() {
        if let Some(run) = run? {
            kept_rows.push(s);
            advs.push(run.adv);
            trajectories.push(run.accepted_distances);
        }
    }
    if kept_rows.is_empty() {
        return Err(Error::Domain(format!(
            "no sample found an adversarial start in {} trials",
            p.init_trials
        )));
    }

    let mut clean_shape = batch.shape().to_vec();
    clean_shape[0] = kept_rows.len();
    let mut clean = Tensor::zeros(&clean_shape);
    let mut adv = Tensor::zeros(&clean_shape);
    let mut kept_labels = Vec::with_capacity(kept_rows.len());
    for (o, (&s, adv_row)) in kept_rows.iter().zip(advs.iter()).enumerate() {
        clean.row_mut(o).copy_from_slice(batch.row(s));
        adv.row_mut(o).copy_from_slice(adv_row);
        kept_labels.push(labels[s]);
    }
    // Every surviving sample is misclassified by construction.
    let success = vec![true; kept_rows.len()];
    let out = AdversarialBatch::new(
        clean,
        adv,
        kept_labels,
        source_model,
        AttackConfig::Ba(*p),
        success,
    )?;
    Ok((out, trajectories))
}
