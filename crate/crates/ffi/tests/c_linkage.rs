//! End-to-end C ABI check: compile a C program against include/qntk.h and
//! the built static library, then run it against a real checkpoint.

use std::path::PathBuf;
use std::process::Command;

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "qntk.h"

int main(int argc, char **argv) {
    if (argc < 2) return 10;
    if (strlen(qntk_version()) == 0) return 11;

    QntkModel *model = NULL;
    if (qntk_model_load(argv[1], &model) != QNTK_STATUS_OK) {
        fprintf(stderr, "load: %s\n", qntk_last_error_message());
        return 12;
    }
    size_t input_len = qntk_model_input_len(model);
    size_t classes = qntk_model_num_classes(model);
    if (input_len != 4 || classes != 3) return 13;

    float inputs[8];
    for (int i = 0; i < 8; i++) inputs[i] = (float)i / 8.0f;
    uint32_t labels[2] = {99, 99};
    if (qntk_model_predict(model, inputs, 2, input_len, labels) != QNTK_STATUS_OK) return 14;
    if (labels[0] >= classes || labels[1] >= classes) return 15;

    float adv[8];
    if (qntk_attack_fgsm(model, inputs, labels, 2, input_len, 0.1f, adv) != QNTK_STATUS_OK)
        return 16;
    for (int i = 0; i < 8; i++) {
        float d = adv[i] - inputs[i];
        if (d < -0.100001f || d > 0.100001f) return 17;
        if (adv[i] < 0.0f || adv[i] > 1.0f) return 18;
    }

    /* Error path: wrong input length must report a shape mismatch. */
    if (qntk_model_predict(model, inputs, 2, 5, labels) != QNTK_STATUS_SHAPE_MISMATCH)
        return 19;

    qntk_model_free(model);
    qntk_model_free(NULL);
    printf("ok\n");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/debug/deps/<test-bin> -> target/debug
    let mut exe = std::env::current_exe().expect("test binary path");
    exe.pop();
    if exe.ends_with("deps") {
        exe.pop();
    }
    exe
}

#[test]
fn c_program_links_and_runs() {
    let gcc = which_gcc();
    let Some(gcc) = gcc else {
        eprintln!("skipping: no C compiler on PATH");
        return;
    };
    let staticlib = target_dir().join("libqntk_ffi.a");
    assert!(
        staticlib.exists(),
        "staticlib not built at {}",
        staticlib.display()
    );
    let include_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");

    let dir = tempfile::tempdir().unwrap();
    let c_path = dir.path().join("probe.c");
    std::fs::write(&c_path, C_PROGRAM).unwrap();
    let bin_path = dir.path().join("probe");

    let out = Command::new(&gcc)
        .arg(&c_path)
        .arg("-I")
        .arg(&include_dir)
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin_path)
        .output()
        .expect("run gcc");
    assert!(
        out.status.success(),
        "gcc failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // A checkpoint for the probe, written through the Rust side.
    use qntk::layers::LayerSpec;
    use qntk::quant::QuantConfig;
    let model = qntk::model::Model::build(
        "c-linkage",
        "unit",
        &[4],
        vec![
            LayerSpec::Dense { in_dim: 4, out_dim: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 6, out_dim: 3 },
        ],
        QuantConfig::fp(),
        2,
    )
    .unwrap();
    let ckpt = dir.path().join("m.qntk");
    qntk::io::checkpoint::save(&model, &ckpt).unwrap();

    let run = Command::new(&bin_path).arg(&ckpt).output().expect("run probe");
    assert!(
        run.status.success(),
        "probe exited {:?}: {}{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

fn which_gcc() -> Option<String> {
    for cand in ["cc", "gcc", "clang"] {
        if Command::new(cand)
            .arg("--version")
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
        {
            return Some(cand.to_string());
        }
    }
    None
}
