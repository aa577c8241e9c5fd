//! End-to-end CLI checks: the full train -> attack -> transfer -> report
//! pipeline on tiny synthetic data, plus exit-code and config-file
//! behavior.

use std::path::Path;
use std::process::{Command, Output};

const DATA: &str = "synthetic:classes=4,size=12,per-class=50,test-per-class=15,seed=5";

fn qntk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qntk"))
        .args(args)
        .output()
        .expect("run qntk")
}

fn train_tiny(dir: &Path, bits: &str, seed: &str) -> std::path::PathBuf {
    // MnistA wants 28x28; use a bigger synthetic set shaped for it.
    let out = dir.join(format!("m{bits}_{seed}.qntk"));
    let data = "synthetic:classes=10,size=28,per-class=60,test-per-class=15,seed=9";
    let o = qntk(&[
        "train", "--model", "MnistA", "--bits", bits, "--data", data, "--out",
        out.to_str().unwrap(), "--seed", seed, "--epochs", "2",
    ]);
    assert!(o.status.success(), "train failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn full_pipeline_train_attack_transfer_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = "synthetic:classes=10,size=28,per-class=60,test-per-class=15,seed=9";
    let fp = train_tiny(dir.path(), "0", "1");
    let q4 = train_tiny(dir.path(), "4", "2");

    // attack: writes the container and its sidecar.
    let adv = dir.path().join("fgsm.qadv");
    let o = qntk(&[
        "attack", "--ckpt", fp.to_str().unwrap(), "--attack", "fgsm", "--eps", "0.25",
        "--data", data, "--samples", "30", "--seed", "7", "--out", adv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "attack failed: {}", String::from_utf8_lossy(&o.stderr));
    let set = qntk::io::advset::load(&adv).unwrap();
    assert_eq!(set.labels.len(), 30);
    assert!(set.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let sidecar = adv.with_extension("qadv.json");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sidecar).unwrap()).unwrap();
    assert_eq!(meta["attack"]["attack"], "fgsm");
    assert_eq!(meta["samples"], 30);

    // transfer with defaults mirroring the protocol (repeats 3 is the
    // default; pass --samples small for speed).
    let csv = dir.path().join("matrix.csv");
    let o = qntk(&[
        "transfer",
        "--sources", &format!("{},{}", fp.display(), q4.display()),
        "--targets", &format!("{},{}", fp.display(), q4.display()),
        "--attack", "fgsm", "--eps", "0.25", "--data", data,
        "--samples", "25", "--seed", "3",
        "--out", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "transfer failed: {}", String::from_utf8_lossy(&o.stderr));
    let matrix = qntk::io::matrix::load(&csv).unwrap();
    matrix.validate().unwrap();
    assert_eq!(matrix.row_labels, vec!["FP", "4"]);
    assert_eq!(matrix.col_labels, vec!["FP", "4", "Average"]);
    assert_eq!(matrix.repeats, 0, "repeats not carried in CSV");
    let manifest_path = csv.with_extension("manifest.json");
    let mani: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(mani["repeats"], 3, "default repeats mirrors the protocol");
    assert_eq!(mani["samples"], 25);
    assert_eq!(mani["cells"].as_array().unwrap().len(), 2 * 2 * 3);

    // report renders one rect per cell.
    let svg_path = dir.path().join("matrix.svg");
    let o = qntk(&[
        "report", "--in", csv.to_str().unwrap(), "--heatmap", svg_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "report failed: {}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<rect").count(), 2 * 3);
}

#[test]
fn transfer_defaults_match_protocol() {
    let o = qntk(&["transfer", "--help"]);
    let help = String::from_utf8_lossy(&o.stdout);
    assert!(help.contains("[default: 3]"), "repeats default 3:\n{help}");
    assert!(help.contains("[default: 1000]"), "samples default 1000:\n{help}");
}

#[test]
fn exit_codes() {
    // Unknown flag -> usage error, exit 2.
    let o = qntk(&["transfer", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    // Unknown model id -> config error, exit 2.
    let o = qntk(&[
        "train", "--model", "resnet99", "--data", DATA, "--out", "/tmp/x.qntk",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // Missing data file -> data error, exit 3.
    let o = qntk(&[
        "attack", "--ckpt", "/nonexistent/m.qntk", "--attack", "fgsm", "--eps", "0.1",
        "--data", DATA, "--out", "/tmp/y.qadv",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // Corrupt checkpoint -> format error, exit 3.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.qntk");
    std::fs::write(&bad, b"QNTKnot-a-checkpoint").unwrap();
    let o = qntk(&[
        "attack", "--ckpt", bad.to_str().unwrap(), "--attack", "fgsm", "--eps", "0.1",
        "--data", DATA, "--out", "/tmp/y.qadv",
    ]);
    assert_eq!(o.status.code(), Some(3));
    // Bad attack config -> exit 2.
    let o = qntk(&[
        "attack", "--ckpt", bad.to_str().unwrap(), "--attack", "warp", "--data", DATA,
        "--out", "/tmp/y.qadv",
    ]);
    assert_eq!(o.status.code(), Some(2));
    // --help exits 0.
    let o = qntk(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn config_file_equals_flags() {
    let dir = tempfile::tempdir().unwrap();
    let fp = train_tiny(dir.path(), "0", "3");
    let data = "synthetic:classes=10,size=28,per-class=60,test-per-class=15,seed=9";

    let cfg_path = dir.path().join("attack.cfg");
    std::fs::write(&cfg_path, "# jsma config\nattack=jsma\ntheta=1\ngamma=10\n").unwrap();
    let out_cfg = dir.path().join("via_config.qadv");
    let o = qntk(&[
        "attack", "--ckpt", fp.to_str().unwrap(), "--attack", "jsma",
        "--attack-config", cfg_path.to_str().unwrap(),
        "--data", data, "--samples", "10", "--seed", "11", "--out", out_cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out_flags = dir.path().join("via_flags.qadv");
    let o = qntk(&[
        "attack", "--ckpt", fp.to_str().unwrap(), "--attack", "jsma",
        "--theta", "1", "--gamma", "10",
        "--data", data, "--samples", "10", "--seed", "11", "--out", out_flags.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(
        std::fs::read(&out_cfg).unwrap(),
        std::fs::read(&out_flags).unwrap(),
        "config file and flags must produce identical attacks"
    );
}

#[test]
fn preset_flag_selects_table_values() {
    let dir = tempfile::tempdir().unwrap();
    let fp = train_tiny(dir.path(), "0", "4");
    let data = "synthetic:classes=10,size=28,per-class=60,test-per-class=15,seed=9";
    let out = dir.path().join("preset.qadv");
    let o = qntk(&[
        "attack", "--ckpt", fp.to_str().unwrap(), "--attack", "fgsm", "--preset", "mnist",
        "--data", data, "--samples", "10", "--seed", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.with_extension("qadv.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["attack"]["eps"], 0.25, "mnist preset FGSM eps");
}

#[test]
fn dump_images_writes_pgm_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let fp = train_tiny(dir.path(), "0", "5");
    let data = "synthetic:classes=10,size=28,per-class=60,test-per-class=15,seed=9";
    let out = dir.path().join("dump.qadv");
    let imgdir = dir.path().join("imgs");
    let o = qntk(&[
        "attack", "--ckpt", fp.to_str().unwrap(), "--attack", "fgsm", "--eps", "0.6",
        "--data", data, "--samples", "5", "--seed", "2", "--out", out.to_str().unwrap(),
        "--dump-images", imgdir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = std::fs::read_dir(&imgdir).unwrap().count();
    assert_eq!(n, 10, "5 clean + 5 adversarial grids");
    let first = std::fs::read(imgdir.join("clean_00.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n28 28\n255\n"));
}
