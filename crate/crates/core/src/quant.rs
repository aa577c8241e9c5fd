//! DoReFa-style k-bit quantizers with straight-through-estimator gradients.
//!
//! The scalar quantizer maps `r_i` in [0,1] onto the lattice `k/(2^n - 1)`:
//!
//! ```text
//! r_o = round((2^n - 1) * r_i) / (2^n - 1)
//! ```
//!
//! rounding half away from zero. The backward rule is the straight-through
//! estimator: the gradient passes through a quantizer bitwise unchanged.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Full precision or an n-bit lattice, n in [1,16].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitwidthSpec {
    Fp,
    Bits(u8),
}

impl BitwidthSpec {
    pub fn from_bits(n: u8) -> Result<Self> {
        match n {
            0 => Ok(BitwidthSpec::Fp),
            1..=16 => Ok(BitwidthSpec::Bits(n)),
            _ => Err(Error::Config(format!("bitwidth {n} outside [1,16] (0 = FP)"))),
        }
    }

    /// Checkpoint/CLI encoding: 0 means full precision.
    pub fn as_bits(self) -> u8 {
        match self {
            BitwidthSpec::Fp => 0,
            BitwidthSpec::Bits(n) => n,
        }
    }

    pub fn is_fp(self) -> bool {
        matches!(self, BitwidthSpec::Fp)
    }

    pub fn label(self) -> String {
        match self {
            BitwidthSpec::Fp => "FP".to_string(),
            BitwidthSpec::Bits(n) => n.to_string(),
        }
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("fp") {
            return Ok(BitwidthSpec::Fp);
        }
        let n: u8 = s
            .parse()
            .map_err(|_| Error::Config(format!("bad bitwidth label {s:?}")))?;
        BitwidthSpec::from_bits(n)
    }
}

/// The experiment grid from the shipped runs; the library accepts any n in [1,16].
pub const EXPERIMENT_BITWIDTHS: [BitwidthSpec; 7] = [
    BitwidthSpec::Fp,
    BitwidthSpec::Bits(1),
    BitwidthSpec::Bits(2),
    BitwidthSpec::Bits(4),
    BitwidthSpec::Bits(8),
    BitwidthSpec::Bits(12),
    BitwidthSpec::Bits(16),
];

/// Which tensors get quantized and how.
///
/// First (raw input) and last (logits) layers are exempt by default;
/// gradients are never quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub weight_bits: BitwidthSpec,
    pub activation_bits: BitwidthSpec,
    pub exempt_first_layer: bool,
    pub exempt_last_layer: bool,
}

impl QuantConfig {
    pub fn fp() -> Self {
        QuantConfig {
            weight_bits: BitwidthSpec::Fp,
            activation_bits: BitwidthSpec::Fp,
            exempt_first_layer: true,
            exempt_last_layer: true,
        }
    }

    /// Weights and activations at the same bitwidth, default exemptions.
    pub fn uniform(spec: BitwidthSpec) -> Self {
        QuantConfig {
            weight_bits: spec,
            activation_bits: spec,
            ..QuantConfig::fp()
        }
    }

    pub fn is_fp(&self) -> bool {
        self.weight_bits.is_fp() && self.activation_bits.is_fp()
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig::fp()
    }
}

fn levels(n: u8) -> f32 {
    debug_assert!((1..=16).contains(&n));
    ((1u32 << n) - 1) as f32
}

/// n-bit quantization of a scalar in [0,1]. Callers must clip first;
/// values outside the domain are an error.
pub fn quantize_k(r_i: f32, n: u8) -> Result<f32> {
    if !(1..=16).contains(&n) {
        return Err(Error::Config(format!("bit count {n} outside [1,16]")));
    }
    if !(0.0..=1.0).contains(&r_i) {
        return Err(Error::Domain(format!(
            "quantizer input {r_i} outside [0,1]; clip before quantizing"
        )));
    }
    Ok(quantize_unit(r_i, n))
}

/// Same lattice map without the domain check, for hot paths that clip inline.
/// f32::round rounds half away from zero, the fixed rule for this crate.
#[inline]
pub(crate) fn quantize_unit(r_i: f32, n: u8) -> f32 {
    let l = levels(n);
    (l * r_i).round() / l
}

/// Straight-through estimator: gradients skip the quantizer entirely.
pub fn ste_backward(upstream_grad: Tensor) -> Tensor {
    upstream_grad
}

/// Clip to [0,1], then quantize each component. FP spec returns the input
/// unchanged (bitwise).
pub fn quantize_activations(a: &Tensor, spec: BitwidthSpec) -> Tensor {
    match spec {
        BitwidthSpec::Fp => a.clone(),
        BitwidthSpec::Bits(n) => a.map(|x| quantize_unit(x.clamp(0.0, 1.0), n)),
    }
}

/// Quantize a signed weight tensor.
///
/// Components are mapped affinely from [-M, M] (M = max absolute value of
/// the tensor) into [0,1], quantized, and mapped back, giving a 2^n-point
/// symmetric lattice spanning [-M, M]. An all-zero tensor is returned
/// unchanged: the midpoint 1/2 is never on the k/(2^n - 1) lattice, so
/// there is no quantized value to move zeros to. FP spec is the identity.
pub fn quantize_weights(w: &Tensor, spec: BitwidthSpec) -> Tensor {
    let n = match spec {
        BitwidthSpec::Fp => return w.clone(),
        BitwidthSpec::Bits(n) => n,
    };
    let m = w.max_abs();
    if m == 0.0 {
        return w.clone();
    }
    w.map(|x| {
        let unit = (x / m + 1.0) * 0.5;
        (2.0 * quantize_unit(unit, n) - 1.0) * m
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_k_fixed_points() {
        assert_eq!(quantize_k(0.0, 4).unwrap(), 0.0);
        assert_eq!(quantize_k(1.0, 1).unwrap(), 1.0);
        assert_eq!(quantize_k(1.0, 16).unwrap(), 1.0);
    }

    #[test]
    fn quantize_k_hand_case() {
        // round(3 * 0.4) = round(1.2) = 1, so the output is 1/3.
        let got = quantize_k(0.4, 2).unwrap();
        assert_eq!(got, 1.0f32 / 3.0f32);
    }

    #[test]
    fn quantize_k_rejects_out_of_domain() {
        assert!(matches!(
            quantize_k(-0.01, 4),
            Err(crate::error::Error::Domain(_))
        ));
        assert!(quantize_k(1.01, 4).is_err());
        assert!(quantize_k(0.5, 0).is_err());
        assert!(quantize_k(0.5, 17).is_err());
    }

    #[test]
    fn quantize_k_half_rounds_away_from_zero() {
        // 1-bit lattice is {0, 1}; 0.5 maps up.
        assert_eq!(quantize_k(0.5, 1).unwrap(), 1.0);
    }

    #[test]
    fn ste_is_bitwise_identity() {
        let g = Tensor::new(vec![0.7, 0.0, -3.25, f32::MIN_POSITIVE], vec![4]).unwrap();
        let back = ste_backward(g.clone());
        assert_eq!(back.data(), g.data());
        let zero = Tensor::zeros(&[5]);
        assert_eq!(ste_backward(zero.clone()).data(), zero.data());
    }

    #[test]
    fn activation_quantizer_clips_then_quantizes() {
        let a = Tensor::new(vec![-0.3, 0.6, 2.0], vec![3]).unwrap();
        let q2 = quantize_activations(&a, BitwidthSpec::Bits(2));
        assert_eq!(q2.data()[0], 0.0);
        assert_eq!(q2.data()[2], 1.0);
        let q1 = quantize_activations(&a, BitwidthSpec::Bits(1));
        assert_eq!(q1.data()[1], 1.0, "round(0.6) = 1 on the 1-bit lattice");
    }

    #[test]
    fn activation_quantizer_fp_is_identity_and_lattice_idempotent() {
        let a = Tensor::new(vec![0.1, 0.25, 0.99], vec![3]).unwrap();
        assert_eq!(quantize_activations(&a, BitwidthSpec::Fp).data(), a.data());
        let q = quantize_activations(&a, BitwidthSpec::Bits(3));
        let qq = quantize_activations(&q, BitwidthSpec::Bits(3));
        assert_eq!(q.data(), qq.data());
    }

    #[test]
    fn weight_quantizer_all_zero_unchanged() {
        let w = Tensor::zeros(&[8]);
        for spec in EXPERIMENT_BITWIDTHS {
            assert_eq!(quantize_weights(&w, spec).data(), w.data());
        }
    }

    #[test]
    fn weight_quantizer_endpoints_1bit() {
        let w = Tensor::new(vec![-1.0, 1.0], vec![2]).unwrap();
        let q = quantize_weights(&w, BitwidthSpec::Bits(1));
        assert_eq!(q.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn weight_quantizer_hand_case_2bit() {
        // Scalar oracle, evaluated by hand: M = 1, affine map r = (w+1)/2
        // gives [0, 0.4, 0.7, 1]; times 3 -> [0, 1.2, 2.1, 3] -> rounds to
        // [0, 1, 2, 3] -> /3 -> [0, 1/3, 2/3, 1]; mapped back 2r-1 ->
        // [-1, -1/3, 1/3, 1].
        let w = Tensor::new(vec![-1.0, -0.2, 0.4, 1.0], vec![4]).unwrap();
        let q = quantize_weights(&w, BitwidthSpec::Bits(2));
        let expect = [-1.0f32, 2.0 / 3.0 - 1.0, 2.0 * (2.0 / 3.0) - 1.0, 1.0];
        for (g, e) in q.data().iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-6, "got {g}, want {e}");
        }
    }

    #[test]
    fn weight_quantizer_1bit_two_values() {
        let w = Tensor::new(vec![-0.9, -0.1, 0.3, 0.8, 0.2], vec![5]).unwrap();
        let q = quantize_weights(&w, BitwidthSpec::Bits(1));
        let mut distinct: Vec<f32> = q.data().to_vec();
        distinct.sort_by(f32::total_cmp);
        distinct.dedup();
        assert!(distinct.len() <= 2, "1-bit lattice has two points: {distinct:?}");
    }

    proptest! {
        #[test]
        fn lattice_membership_and_error_bound(r in 0.0f32..=1.0, n in 1u8..=8) {
            let q = quantize_k(r, n).unwrap();
            let l = ((1u32 << n) - 1) as f32;
            let k = (q * l).round();
            prop_assert_eq!(q, k / l, "output must be exactly k/(2^n-1)");
            let bound = 1.0 / (2.0 * l as f64) + 1e-7;
            prop_assert!(((q - r) as f64).abs() <= bound);
        }

        #[test]
        fn quantizer_monotone(a in 0.0f32..=1.0, b in 0.0f32..=1.0, n in 1u8..=16) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_k(lo, n).unwrap() <= quantize_k(hi, n).unwrap());
        }

        #[test]
        fn quantizer_idempotent(r in 0.0f32..=1.0, n in 1u8..=16) {
            let once = quantize_k(r, n).unwrap();
            prop_assert_eq!(quantize_k(once, n).unwrap(), once);
        }

        #[test]
        fn ste_identity_random(g in proptest::collection::vec(-10.0f32..10.0, 1..32)) {
            let t = Tensor::new(g.clone(), vec![g.len()]).unwrap();
            let back = ste_backward(t);
            prop_assert_eq!(back.into_data(), g);
        }

        #[test]
        fn weight_quantizer_bounded_and_on_lattice(
            w in proptest::collection::vec(-5.0f32..5.0, 1..24),
            n in 1u8..=8,
        ) {
            let len = w.len();
            let t = Tensor::new(w, vec![len]).unwrap();
            let m = t.max_abs();
            let q = quantize_weights(&t, BitwidthSpec::Bits(n));
            let l = ((1u32 << n) - 1) as f32;
            for &v in q.data() {
                prop_assert!(v.abs() <= m * (1.0 + 1e-6));
                if m > 0.0 {
                    // Undo the affine map; must land on an integer lattice index.
                    let unit = (v / m + 1.0) * 0.5;
                    let k = (unit * l).round();
                    prop_assert!((unit * l - k).abs() < 1e-3);
                }
            }
        }
    }
}
