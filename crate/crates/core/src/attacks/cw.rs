//! Carlini-Wagner L2 attack.
//!
//! Minimizes ||x_adv - x||_2^2 + c * l(x_adv) with
//! l = max(Z_true - max_{t != true} Z_t + kappa, 0), optimized in
//! unconstrained space via x = (tanh(w) + 1) / 2. c is found per sample by
//! binary search: success shrinks the upper range toward smaller c, failure
//! raises c tenfold until an upper bound exists.

use super::{AdversarialBatch, AttackConfig};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwParams {
    /// Misclassification confidence margin.
    pub kappa: f32,
    /// Gradient-descent iterations per binary-search round.
    pub iterations: usize,
    pub binary_search_steps: usize,
    pub c_init: f32,
}

/// Fixed descent step size.
const STEP_SIZE: f32 = 0.01;
/// tanh parametrization cannot represent exact 0/1; inputs are nudged
/// inside the open interval before inversion.
const TANH_CLAMP: f32 = 1e-6;
const C_CAP: f32 = 1e10;

/// Margin of misclassification: max_{t != label} Z_t - Z_label.
fn margin(logits: &[f32], label: usize) -> f32 {
    let mut best_other = f32::NEG_INFINITY;
    for (t, &z) in logits.iter().enumerate() {
        if t != label && z > best_other {
            best_other = z;
        }
    }
    best_other - logits[label]
}

/// Success under the Eq-style loss: the runner-up beats the true logit by
/// at least kappa and the argmax is not the true class.
fn is_success(logits: &[f32], label: usize, kappa: f32) -> bool {
    margin(logits, label) >= kappa && Tensor::argmax_slice(logits) != label
}

struct SampleState {
    c: f32,
    lower: f32,
    upper: f32,
    best_adv: Option<Vec<f32>>,
    best_l2: f64,
    round_success: bool,
    /// Clean input already satisfies the success condition; nothing can
    /// beat zero distortion.
    trivially_done: bool,
}

pub fn cw_l2(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    p: &CwParams,
) -> Result<AdversarialBatch> {
    let n = batch.batch();
    let dim = batch.row_len();

    // Seed best with the clean input when it is already adversarial enough.
    let (_, logits0, _) = model.forward(batch)?;
    let mut states: Vec<SampleState> = (0..n)
        .map(|s| {
            let done = is_success(logits0.row(s), labels[s], p.kappa);
            SampleState {
                c: p.c_init,
                lower: 0.0,
                upper: f32::INFINITY,
                best_adv: done.then(|| batch.row(s).to_vec()),
                best_l2: if done { 0.0 } else { f64::INFINITY },
                round_success: false,
                trivially_done: done,
            }
        })
        .collect();

    let w0: Vec<f32> = batch
        .data()
        .iter()
        .map(|&x| {
            let u = (2.0 * x.clamp(TANH_CLAMP, 1.0 - TANH_CLAMP) - 1.0).clamp(-1.0 + TANH_CLAMP, 1.0 - TANH_CLAMP);
            u.atanh()
        })
        .collect();

    let mut last_iterate = batch.clone();

    for _round in 0..p.binary_search_steps {
        for st in states.iter_mut() {
            st.round_success = false;
        }
        let mut w = w0.clone();
        for _iter in 0..p.iterations {
            // x' = (tanh(w) + 1) / 2
            let tanh_w: Vec<f32> = w.iter().map(|v| v.tanh()).collect();
            let x_adv = Tensor::new(
                tanh_w.iter().map(|&t| (t + 1.0) * 0.5).collect(),
                batch.shape().to_vec(),
            )?;
            let (_, logits, trace) = model.forward(&x_adv)?;

            // Record successes; build the logit gradient of c * l.
            let mut d_logits = Tensor::zeros(logits.shape());
            for s in 0..n {
                let st = &mut states[s];
                if st.trivially_done {
                    continue;
                }
                let z = logits.row(s);
                let label = labels[s];
                if is_success(z, label, p.kappa) {
                    st.round_success = true;
                    let l2 = batch.row(s).iter().zip(x_adv.row(s)).map(|(&a, &b)| {
                        let d = (a - b) as f64;
                        d * d
                    }).sum::<f64>().sqrt();
                    if l2 < st.best_l2 {
                        st.best_l2 = l2;
                        st.best_adv = Some(x_adv.row(s).to_vec());
                    }
                }
                // l is active while Z_label - max_other + kappa > 0.
                if margin(z, label) < p.kappa {
                    let mut t_star = usize::MAX;
                    let mut best = f32::NEG_INFINITY;
                    for (t, &zt) in z.iter().enumerate() {
                        if t != label && zt > best {
                            best = zt;
                            t_star = t;
                        }
                    }
                    let row = d_logits.row_mut(s);
                    row[label] = st.c;
                    row[t_star] = -st.c;
                }
            }
            let (_, d_x) = model.backward_from_logits(&trace, &d_logits, false)?;

            // Full objective gradient in w-space.
            for s in 0..n {
                if states[s].trivially_done {
                    continue;
                }
                let off = s * dim;
                for i in 0..dim {
                    let gi = off + i;
                    let dx = 2.0 * (x_adv.data()[gi] - batch.data()[gi]) + d_x.data()[gi];
                    let dtanh = (1.0 - tanh_w[gi] * tanh_w[gi]) * 0.5;
                    w[gi] -= STEP_SIZE * dx * dtanh;
                }
            }
            if _iter + 1 == p.iterations {
                last_iterate = x_adv;
            }
        }

        // Binary search update per sample.
        for st in states.iter_mut() {
            if st.trivially_done {
                continue;
            }
            if st.round_success {
                st.upper = st.c;
                st.c = (st.lower + st.upper) * 0.5;
            } else {
                st.lower = st.c;
                if st.upper.is_infinite() {
                    st.c = (st.c * 10.0).min(C_CAP);
                } else {
                    st.c = (st.lower + st.upper) * 0.5;
                }
            }
        }
    }

    let mut adv = Tensor::zeros(batch.shape());
    let mut success = Vec::with_capacity(n);
    for (s, st) in states.iter().enumerate() {
        match &st.best_adv {
            Some(best) => {
                adv.row_mut(s).copy_from_slice(best);
                success.push(true);
            }
            None => {
                // No successful round: emit the last iterate.
                adv.row_mut(s).copy_from_slice(last_iterate.row(s));
                success.push(false);
            }
        }
    }
    super::clip01(&mut adv);
    AdversarialBatch::new(
        batch.clone(),
        adv,
        labels.to_vec(),
        model.id(),
        AttackConfig::Cw(*p),
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
            "cwtoy",
            "unit",
            &[5],
            vec![
                LayerSpec::Dense { in_dim: 5, out_dim: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 8, out_dim: 3 },
            ],
            QuantConfig::fp(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn margin_and_success_semantics() {
        // logits [2, 5, 1], label 0: margin = 5 - 2 = 3.
        assert_eq!(margin(&[2.0, 5.0, 1.0], 0), 3.0);
        assert!(is_success(&[2.0, 5.0, 1.0], 0, 3.0));
        assert!(!is_success(&[2.0, 5.0, 1.0], 0, 3.1));
        // Correctly classified: negative margin, never a success.
        assert_eq!(margin(&[5.0, 2.0, 1.0], 0), -3.0);
        assert!(!is_success(&[5.0, 2.0, 1.0], 0, 0.0));
    }

    #[test]
    fn already_misclassified_returns_zero_distortion() {
        let m = toy_model(1);
        let x = Tensor::from_fn(&[1, 5], |i| (i as f32 + 1.0) / 8.0);
        let pred = m.predict(&x).unwrap()[0];
        let wrong = (pred + 1) % 3;
        let p = CwParams { kappa: 0.0, iterations: 3, binary_search_steps: 2, c_init: 0.01 };
        let b = cw_l2(&m, &x, &[wrong], &p).unwrap();
        assert!(b.source_success[0]);
        assert_eq!(b.l2_distortion[0], 0.0, "l(x) = 0 at x itself");
        assert_eq!(b.adversarial.data(), x.data());
    }

    #[test]
    fn successful_samples_meet_the_kappa_margin() {
        let m = toy_model(2);
        let x = Tensor::from_fn(&[6, 5], |i| ((i * 7 + 1) % 12) as f32 / 12.0);
        let labels = m.predict(&x).unwrap();
        let kappa = 0.5f32;
        let p = CwParams { kappa, iterations: 30, binary_search_steps: 8, c_init: 0.01 };
        let b = cw_l2(&m, &x, &labels, &p).unwrap();
        assert!(b.source_success.iter().any(|&s| s), "at least one success expected");
        let (_, logits, _) = m.forward(&b.adversarial).unwrap();
        for s in 0..b.len() {
            if b.source_success[s] {
                let got = margin(logits.row(s), b.labels[s]);
                assert!(got >= kappa - 1e-4, "sample {s}: margin {got} < kappa {kappa}");
            }
        }
        b.validate_budget().unwrap();
    }

    #[test]
    fn box_constraint_and_determinism() {
        let m = toy_model(3);
        let x = Tensor::from_fn(&[4, 5], |i| ((i * 3 + 2) % 9) as f32 / 9.0);
        let labels = m.predict(&x).unwrap();
        let p = CwParams { kappa: 0.0, iterations: 10, binary_search_steps: 4, c_init: 0.01 };
        let b1 = cw_l2(&m, &x, &labels, &p).unwrap();
        let b2 = cw_l2(&m, &x, &labels, &p).unwrap();
        assert_eq!(b1.adversarial.data(), b2.adversarial.data());
        assert!(b1.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unsuccessful_samples_are_still_emitted() {
        // kappa far beyond any reachable margin on a zero-weight model:
        // logits are constant, so no input reaches the margin.
        let mut m = toy_model(4);
        let names: Vec<String> = m.params().keys().cloned().collect();
        for name in names {
            let shape = m.params()[&name].shape().to_vec();
            m.params_mut().insert(name, Tensor::zeros(&shape));
        }
        let x = Tensor::from_fn(&[2, 5], |i| (i as f32) / 10.0);
        let p = CwParams { kappa: 10.0, iterations: 3, binary_search_steps: 2, c_init: 0.01 };
        let b = cw_l2(&m, &x, &[0, 1], &p).unwrap();
        assert_eq!(b.len(), 2, "failed samples stay in the batch");
        assert!(b.source_success.iter().all(|&s| !s));
    }
}
