//! Shared heavyweight fixtures for the integration suites: a desk-scale
//! trained model zoo (MnistA and MnistB bitwidth families on MNIST-shaped
//! synthetic data), built once per `cargo test` session and cached on disk
//! under CARGO_TARGET_TMPDIR so later test binaries reload identical
//! checkpoints instead of retraining.

use qntk::data::{gen_synthetic, Dataset, SyntheticSpec};
use qntk::io::checkpoint;
use qntk::model::Model;
use qntk::quant::{BitwidthSpec, QuantConfig, EXPERIMENT_BITWIDTHS};
use qntk::roster::{build_model, entry, RosterId};
use qntk::train::{train, EpochStats, TrainConfig};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

/// Bump to invalidate cached fixtures when their recipe changes.
const FIXTURE_VERSION: &str = "v3";

pub const DATA_SEED: u64 = 20240601;
pub const TRAIN_SEED: u64 = 11;
/// Desk scale: 10k training samples, 2k test samples, 28x28 single channel.
pub fn data_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 10,
        size: 28,
        channels: 1,
        train_per_class: 1000,
        test_per_class: 200,
        seed: DATA_SEED,
        ..Default::default()
    }
}

const A_EPOCHS: usize = 5;
const B_EPOCHS: usize = 3;

pub struct Zoo {
    pub train_data: Dataset,
    pub test_data: Dataset,
    /// MnistA at FP, 1, 2, 4, 8, 12, 16 bits (grid order).
    pub a_family: Vec<Model>,
    /// MnistB at the same bitwidths.
    pub b_family: Vec<Model>,
    /// Wall-clock seconds to train the FP MnistA model; measured only when
    /// the zoo was built fresh in this session (None when loaded from the
    /// disk cache — the bound was asserted when the cache was written).
    pub fp_a_train_secs: Option<f64>,
    pub fp_a_history: Vec<EpochStats>,
}

static ZOO: OnceLock<Zoo> = OnceLock::new();

pub fn zoo() -> &'static Zoo {
    ZOO.get_or_init(build_or_load_zoo)
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("qntk-zoo-{FIXTURE_VERSION}"))
}

fn family_file(dir: &PathBuf, family: &str, spec: BitwidthSpec) -> PathBuf {
    dir.join(format!("{family}_{}.qntk", spec.label()))
}

fn train_cfg(id: RosterId, quant: QuantConfig, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::mnist_recipe(quant, TRAIN_SEED);
    cfg.epochs = epochs;
    let _ = id;
    cfg
}

fn train_family(
    id: RosterId,
    epochs: usize,
    train_data: &Dataset,
    test_data: &Dataset,
) -> (Vec<Model>, Vec<EpochStats>, f64) {
    let mut models = Vec::new();
    let mut fp_history = Vec::new();
    let mut fp_secs = 0.0;
    for spec in EXPERIMENT_BITWIDTHS {
        let quant = match spec {
            BitwidthSpec::Fp => QuantConfig::fp(),
            s => QuantConfig::uniform(s),
        };
        let t = Instant::now();
        let model = build_model(entry(id), quant, TRAIN_SEED).unwrap();
        let (trained, history) =
            train(model, &train_cfg(id, quant, epochs), train_data, test_data).unwrap();
        let secs = t.elapsed().as_secs_f64();
        eprintln!(
            "  [zoo] {id} {} bits: trained {epochs} epochs in {secs:.0}s, test acc {:.4}",
            spec.label(),
            history.last().unwrap().test_acc
        );
        if spec.is_fp() {
            fp_history = history;
            fp_secs = secs;
        }
        models.push(trained);
    }
    (models, fp_history, fp_secs)
}

fn load_cached(dir: &PathBuf) -> Option<Zoo> {
    let meta_path = dir.join("meta.json");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(meta_path).ok()?).ok()?;
    let history: Vec<EpochStats> =
        serde_json::from_value(meta.get("fp_a_history")?.clone()).ok()?;
    let mut a_family = Vec::new();
    let mut b_family = Vec::new();
    for spec in EXPERIMENT_BITWIDTHS {
        a_family.push(checkpoint::load(&family_file(dir, "mnist_a", spec)).ok()?);
        b_family.push(checkpoint::load(&family_file(dir, "mnist_b", spec)).ok()?);
    }
    let (train_data, test_data) = gen_synthetic(&data_spec()).unwrap();
    eprintln!("[zoo] loaded cached fixtures from {}", dir.display());
    Some(Zoo {
        train_data,
        test_data,
        a_family,
        b_family,
        fp_a_train_secs: None,
        fp_a_history: history,
    })
}

fn build_or_load_zoo() -> Zoo {
    let dir = cache_dir();
    if let Some(zoo) = load_cached(&dir) {
        return zoo;
    }
    eprintln!("[zoo] building desk-scale model zoo (one-time; cached under {})", dir.display());
    let (train_data, test_data) = gen_synthetic(&data_spec()).unwrap();
    let t_all = Instant::now();
    let (a_family, fp_a_history, fp_a_secs) =
        train_family(RosterId::MnistA, A_EPOCHS, &train_data, &test_data);
    let (b_family, _, _) = train_family(RosterId::MnistB, B_EPOCHS, &train_data, &test_data);
    eprintln!("[zoo] built in {:.0}s", t_all.elapsed().as_secs_f64());

    std::fs::create_dir_all(&dir).unwrap();
    for (family, models) in [("mnist_a", &a_family), ("mnist_b", &b_family)] {
        for (spec, model) in EXPERIMENT_BITWIDTHS.iter().zip(models.iter()) {
            checkpoint::save(model, &family_file(&dir, family, *spec)).unwrap();
        }
    }
    let meta = serde_json::json!({
        "fixture_version": FIXTURE_VERSION,
        "fp_a_train_secs": fp_a_secs,
        "fp_a_history": fp_a_history,
    });
    qntk::io::atomic_write(&dir.join("meta.json"), meta.to_string().as_bytes()).unwrap();

    Zoo {
        train_data,
        test_data,
        a_family,
        b_family,
        fp_a_train_secs: Some(fp_a_secs),
        fp_a_history,
    }
}

/// First `n` dataset indices classified correctly by `model`, in seeded
/// permutation order.
pub fn correct_indices(model: &Model, data: &Dataset, n: usize, seed: u64) -> Vec<usize> {
    let mask = qntk::transfer::correct_mask(model, data).unwrap();
    qntk::rng::permutation(seed, data.len())
        .into_iter()
        .filter(|&i| mask[i])
        .take(n)
        .collect()
}
