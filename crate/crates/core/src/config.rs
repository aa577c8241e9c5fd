//! Attack configuration from key=value files and CLI flags.
//!
//! Files are line-oriented UTF-8 with `#` comments. Keys mirror the CLI
//! flag names (eps, theta, gamma, xi, iters, kappa, bsearch, c-init, ...).
//! A key may be bare (`eps=0.25`) or attack-prefixed (`fgsm.eps=0.25`);
//! prefixed keys let one preset file carry every attack's parameters.

use crate::attacks::{AttackConfig, BaParams, CwParams, FgsmParams, JsmaParams, UapParams};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Hyperparameter presets for the MNIST model family: FGSM eps 0.25,
/// JSMA theta 1 gamma 10%, UAP eps 0.1 xi 0.6, BA 15 iterations,
/// CW kappa 5 / 25 iterations / 20 search steps / c 0.01.
pub const MNIST_PRESET: &str = include_str!("../presets/mnist.preset");
/// Presets for the CIFAR-10 model family.
pub const CIFAR_PRESET: &str = include_str!("../presets/cifar.preset");

pub fn preset(name: &str) -> Result<&'static str> {
    match name {
        "mnist" => Ok(MNIST_PRESET),
        "cifar" => Ok(CIFAR_PRESET),
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (have: mnist, cifar)"
        ))),
    }
}

/// Parse `key=value` lines; later keys override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub struct AttackKv {
    map: BTreeMap<String, String>,
    attack: String,
}

impl AttackKv {
    /// `attack_override` (the CLI's --attack) wins over an `attack=` key.
    pub fn new(map: BTreeMap<String, String>, attack_override: Option<&str>) -> Result<Self> {
        let attack = match attack_override {
            Some(a) => a.to_string(),
            None => map
                .get("attack")
                .cloned()
                .ok_or_else(|| Error::Config("no attack selected (flag --attack or key attack=)".into()))?,
        };
        Ok(AttackKv { map, attack })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map
            .get(&format!("{}.{key}", self.attack))
            .or_else(|| self.map.get(key))
            .map(String::as_str)
    }

    fn f32_opt(&self, key: &str) -> Result<Option<f32>> {
        self.raw(key)
            .map(|v| {
                v.parse::<f32>()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    fn f32_req(&self, key: &str) -> Result<f32> {
        self.f32_opt(key)?
            .ok_or_else(|| Error::Config(format!("{} attack needs {key}", self.attack)))
    }

    fn f32_or(&self, key: &str, default: f32) -> Result<f32> {
        Ok(self.f32_opt(key)?.unwrap_or(default))
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.raw(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    fn usize_req(&self, key: &str) -> Result<usize> {
        self.usize_opt(key)?
            .ok_or_else(|| Error::Config(format!("{} attack needs {key}", self.attack)))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    /// Resolve the final AttackConfig; equivalent CLI flags and config
    /// files produce identical configs.
    pub fn build(&self) -> Result<AttackConfig> {
        let cfg = match self.attack.as_str() {
            "fgsm" => AttackConfig::Fgsm(FgsmParams { eps: self.f32_req("eps")? }),
            "jsma" => AttackConfig::Jsma(JsmaParams {
                theta: self.f32_req("theta")?,
                gamma_percent: self.f32_req("gamma")?,
            }),
            "uap" => AttackConfig::Uap(UapParams {
                eps: self.f32_req("eps")?,
                xi: self.f32_req("xi")?,
                delta: self.f32_or("delta", 0.8)? as f64,
                max_epochs: self.usize_or("max-epochs", 10)?,
            }),
            "ba" => AttackConfig::Ba(BaParams {
                iterations: self.usize_req("iters")?,
                queries_per_iter: self.usize_or("queries", 10)?,
                init_trials: self.usize_or("init-trials", 50)?,
                step_ortho: self.f32_or("step-ortho", 0.1)?,
                step_source: self.f32_or("step-source", 0.1)?,
            }),
            "cw" => AttackConfig::Cw(CwParams {
                kappa: self.f32_req("kappa")?,
                iterations: self.usize_req("iters")?,
                binary_search_steps: self.usize_req("bsearch")?,
                c_init: self.f32_req("c-init")?,
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown attack {other:?} (have: fgsm, jsma, uap, ba, cw)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_flags_agree() {
        let file = parse_kv("# fgsm run\nattack=fgsm\neps=0.25\n").unwrap();
        let from_file = AttackKv::new(file, None).unwrap().build().unwrap();

        let mut from_flags = AttackKv::new(BTreeMap::new(), Some("fgsm")).unwrap();
        from_flags.set("eps", "0.25".into());
        assert_eq!(from_file, from_flags.build().unwrap());
    }

    #[test]
    fn mnist_preset_matches_published_hyperparameters() {
        let map = parse_kv(MNIST_PRESET).unwrap();
        let pick = |attack: &str| AttackKv::new(map.clone(), Some(attack)).unwrap().build().unwrap();
        assert_eq!(pick("fgsm"), AttackConfig::Fgsm(FgsmParams { eps: 0.25 }));
        assert_eq!(
            pick("jsma"),
            AttackConfig::Jsma(JsmaParams { theta: 1.0, gamma_percent: 10.0 })
        );
        let AttackConfig::Uap(u) = pick("uap") else { panic!() };
        assert_eq!((u.eps, u.xi), (0.1, 0.6));
        let AttackConfig::Ba(b) = pick("ba") else { panic!() };
        assert_eq!(b.iterations, 15);
        let AttackConfig::Cw(c) = pick("cw") else { panic!() };
        assert_eq!((c.kappa, c.iterations, c.binary_search_steps, c.c_init), (5.0, 25, 20, 0.01));
    }

    #[test]
    fn cifar_preset_matches_published_hyperparameters() {
        let map = parse_kv(CIFAR_PRESET).unwrap();
        let pick = |attack: &str| AttackKv::new(map.clone(), Some(attack)).unwrap().build().unwrap();
        assert_eq!(pick("fgsm"), AttackConfig::Fgsm(FgsmParams { eps: 0.05 }));
        assert_eq!(
            pick("jsma"),
            AttackConfig::Jsma(JsmaParams { theta: 0.3, gamma_percent: 5.0 })
        );
        let AttackConfig::Uap(u) = pick("uap") else { panic!() };
        assert_eq!((u.eps, u.xi), (0.01, 0.1));
        let AttackConfig::Ba(b) = pick("ba") else { panic!() };
        assert_eq!(b.iterations, 12);
        let AttackConfig::Cw(c) = pick("cw") else { panic!() };
        assert_eq!((c.kappa, c.iterations, c.binary_search_steps, c.c_init), (5.0, 25, 20, 0.01));
    }

    #[test]
    fn missing_and_malformed_keys_error() {
        let kv = AttackKv::new(BTreeMap::new(), Some("fgsm")).unwrap();
        assert!(matches!(kv.build(), Err(Error::Config(_))));
        assert!(parse_kv("novalue\n").is_err());
        let mut kv = AttackKv::new(BTreeMap::new(), Some("cw")).unwrap();
        kv.set("kappa", "abc".into());
        assert!(kv.build().is_err());
        assert!(AttackKv::new(BTreeMap::new(), Some("rowhammer")).unwrap().build().is_err());
        assert!(AttackKv::new(BTreeMap::new(), None).is_err(), "attack key required");
    }

    #[test]
    fn prefixed_keys_override_bare_ones() {
        let map = parse_kv("eps=0.9\nfgsm.eps=0.25\n").unwrap();
        let cfg = AttackKv::new(map, Some("fgsm")).unwrap().build().unwrap();
        assert_eq!(cfg, AttackConfig::Fgsm(FgsmParams { eps: 0.25 }));
    }
}
