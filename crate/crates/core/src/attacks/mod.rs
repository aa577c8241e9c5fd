//! Adversarial example generators.
//!
//! All five attacks clip their outputs to the [0,1] image box and are
//! deterministic given a seed: per-sample randomness comes from RNG stream
//! id = sample index, so parallel and serial runs emit identical bytes.

pub mod boundary;
pub mod cw;
pub mod fgsm;
pub mod jsma;
pub mod uap;

pub use boundary::{boundary_attack, BaParams};
pub use cw::{cw_l2, CwParams};
pub use fgsm::{fgsm, FgsmParams};
pub use jsma::{jsma, saliency_map, JsmaParams};
pub use uap::{uap, uap_batch, UapParams};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Tagged union of per-algorithm hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "lowercase")]
pub enum AttackConfig {
    Fgsm(FgsmParams),
    Jsma(JsmaParams),
    Uap(UapParams),
    Ba(BaParams),
    Cw(CwParams),
}

impl AttackConfig {
    pub fn id(&self) -> &'static str {
        match self {
            AttackConfig::Fgsm(_) => "fgsm",
            AttackConfig::Jsma(_) => "jsma",
            AttackConfig::Uap(_) => "uap",
            AttackConfig::Ba(_) => "ba",
            AttackConfig::Cw(_) => "cw",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            AttackConfig::Fgsm(p) => {
                if !(p.eps >= 0.0) {
                    return bad(format!("fgsm eps {} must be >= 0", p.eps));
                }
            }
            AttackConfig::Jsma(p) => {
                if !(p.gamma_percent > 0.0 && p.gamma_percent <= 100.0) {
                    return bad(format!("jsma gamma {}% must be in (0,100]", p.gamma_percent));
                }
                if p.theta == 0.0 || !p.theta.is_finite() {
                    return bad("jsma theta must be nonzero".into());
                }
            }
            AttackConfig::Uap(p) => {
                if !(p.eps > 0.0 && p.xi >= p.eps) {
                    return bad(format!("uap needs xi >= eps > 0, got eps {} xi {}", p.eps, p.xi));
                }
                if !(p.delta > 0.0 && p.delta <= 1.0) {
                    return bad(format!("uap fooling-rate target {} must be in (0,1]", p.delta));
                }
            }
            AttackConfig::Ba(p) => {
                if p.init_trials == 0 || p.queries_per_iter == 0 {
                    return bad("ba needs init_trials >= 1 and queries >= 1".into());
                }
                if !(p.step_ortho > 0.0 && p.step_source > 0.0) {
                    return bad("ba step sizes must be positive".into());
                }
            }
            AttackConfig::Cw(p) => {
                if !(p.kappa >= 0.0) {
                    return bad(format!("cw kappa {} must be >= 0", p.kappa));
                }
                if p.binary_search_steps == 0 {
                    return bad("cw needs at least one binary search step".into());
                }
                if !(p.c_init > 0.0) {
                    return bad(format!("cw c_init {} must be > 0", p.c_init));
                }
            }
        }
        Ok(())
    }
}

/// Paired clean/adversarial samples from one attack run on one source model.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub clean: Tensor,
    pub adversarial: Tensor,
    pub labels: Vec<usize>,
    pub source_model: String,
    pub attack: AttackConfig,
    /// Whether the source model misclassifies each adversarial sample.
    pub source_success: Vec<bool>,
    pub l2_distortion: Vec<f64>,
    pub linf_distortion: Vec<f32>,
}

impl AdversarialBatch {
    pub fn new(
        clean: Tensor,
        adversarial: Tensor,
        labels: Vec<usize>,
        source_model: impl Into<String>,
        attack: AttackConfig,
        source_success: Vec<bool>,
    ) -> Result<Self> {
        if clean.shape() != adversarial.shape() {
            return Err(Error::Shape(format!(
                "clean {:?} vs adversarial {:?}",
                clean.shape(),
                adversarial.shape()
            )));
        }
        let n = clean.batch();
        if labels.len() != n || source_success.len() != n {
            return Err(Error::Shape("per-sample fields must match batch size".into()));
        }
        debug_assert!(
            adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "adversarial values must be clipped to [0,1]"
        );
        let l2_distortion = (0..n)
            .map(|i| {
                clean
                    .row(i)
                    .iter()
                    .zip(adversarial.row(i).iter())
                    .map(|(&a, &b)| {
                        let d = (a - b) as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let linf_distortion = (0..n)
            .map(|i| {
                clean
                    .row(i)
                    .iter()
                    .zip(adversarial.row(i).iter())
                    .fold(0.0f32, |m, (&a, &b)| m.max((a - b).abs()))
            })
            .collect();
        Ok(AdversarialBatch {
            clean,
            adversarial,
            labels,
            source_model: source_model.into(),
            attack,
            source_success,
            l2_distortion,
            linf_distortion,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn source_success_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.source_success.iter().filter(|&&s| s).count() as f64 / self.labels.len() as f64
    }

    /// Attack-specific budget invariants that are self-contained in the
    /// emitted batch: the [0,1] box for every attack, the FGSM L-inf bound,
    /// the JSMA pixel budget (with untouched pixels bitwise clean), and the
    /// UAP per-image cap.
    pub fn validate_budget(&self) -> Result<()> {
        if !self.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("adversarial values outside [0,1]".into()));
        }
        match &self.attack {
            AttackConfig::Fgsm(p) => {
                for (i, &linf) in self.linf_distortion.iter().enumerate() {
                    if linf > p.eps + 1e-6 {
                        return Err(Error::Domain(format!(
                            "sample {i}: FGSM L-inf {linf} exceeds eps {}",
                            p.eps
                        )));
                    }
                }
            }
            AttackConfig::Jsma(p) => {
                let m = self.clean.row_len();
                let budget = (p.gamma_percent as f64 / 100.0 * m as f64).floor() as usize;
                for i in 0..self.len() {
                    let modified = self
                        .clean
                        .row(i)
                        .iter()
                        .zip(self.adversarial.row(i).iter())
                        .filter(|(a, b)| a.to_bits() != b.to_bits())
                        .count();
                    if modified > budget {
                        return Err(Error::Domain(format!(
                            "sample {i}: JSMA modified {modified} pixels, budget {budget}"
                        )));
                    }
                }
            }
            AttackConfig::Uap(p) => {
                for (i, &linf) in self.linf_distortion.iter().enumerate() {
                    if linf > p.xi + 1e-6 {
                        return Err(Error::Domain(format!(
                            "sample {i}: UAP L-inf {linf} exceeds xi {}",
                            p.xi
                        )));
                    }
                }
            }
            // BA monotonicity is a trajectory property checked by the
            // attack itself; the CW margin needs source logits. Both are
            // exercised in the acceptance suite.
            AttackConfig::Ba(_) | AttackConfig::Cw(_) => {}
        }
        Ok(())
    }
}

/// sign with sign(0) = 0, so zero-gradient pixels stay untouched.
#[inline]
pub fn sign0(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn clip01(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Project every component into [-xi, xi].
pub fn project_linf(v: &Tensor, xi: f32) -> Tensor {
    v.map(|x| x.clamp(-xi, xi))
}

/// One attack entry point used by the CLI and the transfer harness.
/// `ids` gives each sample its RNG stream (dataset indices in harness runs).
pub fn run_attack(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    ids: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    match cfg {
        AttackConfig::Fgsm(p) => fgsm(model, batch, labels, p),
        AttackConfig::Jsma(p) => jsma(model, batch, labels, ids, p, seed),
        AttackConfig::Uap(p) => {
            let (v, _rate) = uap(model, batch, labels, p)?;
            uap_batch(model, batch, labels, &v, p)
        }
        AttackConfig::Ba(p) => {
            let predict = |b: &Tensor| model.predict(b);
            let (batch, _traj) =
                boundary_attack(&predict, model.id(), batch, labels, ids, p, seed)?;
            Ok(batch)
        }
        AttackConfig::Cw(p) => cw_l2(model, batch, labels, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign0(0.0), 0.0);
        assert_eq!(sign0(-0.0), 0.0);
        assert_eq!(sign0(3.2), 1.0);
        assert_eq!(sign0(-0.001), -1.0);
    }

    #[test]
    fn projection_caps_each_component() {
        let v = Tensor::new(vec![-2.0, -0.05, 0.0, 0.3, 9.0], vec![5]).unwrap();
        let p = project_linf(&v, 0.25);
        assert_eq!(p.data(), &[-0.25, -0.05, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn config_validation_rejects_bad_params() {
        assert!(AttackConfig::Fgsm(FgsmParams { eps: -0.1 }).validate().is_err());
        assert!(AttackConfig::Jsma(JsmaParams { theta: 0.0, gamma_percent: 10.0 })
            .validate()
            .is_err());
        assert!(AttackConfig::Jsma(JsmaParams { theta: 1.0, gamma_percent: 0.0 })
            .validate()
            .is_err());
        assert!(AttackConfig::Uap(UapParams { eps: 0.2, xi: 0.1, delta: 0.8, max_epochs: 5 })
            .validate()
            .is_err());
        assert!(AttackConfig::Uap(UapParams { eps: 0.1, xi: 0.6, delta: 0.0, max_epochs: 5 })
            .validate()
            .is_err());
        let cw_bad = CwParams {
            kappa: -1.0,
            iterations: 5,
            binary_search_steps: 5,
            c_init: 0.01,
        };
        assert!(AttackConfig::Cw(cw_bad).validate().is_err());
    }

    #[test]
    fn batch_distortions_are_computed() {
        let clean = Tensor::new(vec![0.0, 0.5, 1.0, 0.25], vec![2, 2]).unwrap();
        let adv = Tensor::new(vec![0.25, 0.5, 1.0, 0.25], vec![2, 2]).unwrap();
        let b = AdversarialBatch::new(
            clean,
            adv,
            vec![0, 1],
            "m",
            AttackConfig::Fgsm(FgsmParams { eps: 0.25 }),
            vec![true, false],
        )
        .unwrap();
        assert!((b.l2_distortion[0] - 0.25).abs() < 1e-9);
        assert_eq!(b.l2_distortion[1], 0.0);
        assert_eq!(b.linf_distortion[0], 0.25);
        assert_eq!(b.source_success_rate(), 0.5);
        b.validate_budget().unwrap();
    }
}
