//! CLI surface checks: dataset sizes, exit codes, and usage errors.

use std::path::{Path, PathBuf};
use std::process::Command;

use stepscan::nn::{save_weights, Architecture, CompactCnn};

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stepscan"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stepscan-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

fn manifest_len(dir: &Path) -> usize {
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["entries"].as_array().unwrap().len()
}

#[test]
fn generate_produces_documented_counts() {
    let root = tmp("counts");
    for (id, expect) in [("1", 168), ("2", 392), ("3", 12)] {
        let out = root.join(format!("d{id}"));
        assert_eq!(
            code(cli().args(["generate", "--dataset", id, "--out", out.to_str().unwrap()])),
            0
        );
        assert_eq!(manifest_len(&out), expect, "dataset {id}");
    }
}

#[test]
fn occupied_out_dir_needs_force() {
    let out = tmp("force");
    std::fs::write(out.join("existing.txt"), "x").unwrap();
    let args = ["generate", "--dataset", "3", "--out", out.to_str().unwrap()];
    assert_eq!(code(cli().args(args)), 2);
    assert_eq!(code(cli().args(args).arg("--force")), 0);
}

#[test]
fn corrupt_manifest_exits_2() {
    let data = tmp("corrupt");
    std::fs::write(data.join("manifest.json"), "{not json").unwrap();
    let out = tmp("corrupt-out");
    assert_eq!(
        code(cli().args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])),
        2
    );
}

fn untrained_weights(dir: &Path, num_classes: usize, input_size: usize) -> PathBuf {
    let names = (0..num_classes).map(|c| format!("c{c}")).collect();
    let mut model =
        CompactCnn::init(Architecture::compact(num_classes, input_size), names, 0).unwrap();
    model.quantize_params();
    let path = dir.join("weights.bin");
    save_weights(&model, &path).unwrap();
    path
}

#[test]
fn scan_with_mismatched_variables_exits_2() {
    let root = tmp("mismatch");
    std::fs::write(
        root.join("ref.csv"),
        "time,alpha,beta\n0.0,0.1,0.1\n0.1,0.1,0.1\n0.2,0.1,0.1\n",
    )
    .unwrap();
    std::fs::write(
        root.join("query.csv"),
        "time,alpha\n0.0,0.1\n0.1,0.1\n0.2,0.1\n",
    )
    .unwrap();
    let weights = untrained_weights(&root, 7, 64);
    let out = root.join("out");
    let output = cli()
        .args([
            "scan",
            "--reference",
            root.join("ref.csv").to_str().unwrap(),
            "--query",
            root.join("query.csv").to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("beta"));
}

#[test]
fn nway_larger_than_test_split_exits_2() {
    let root = tmp("nway-small");
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"pipeline": {"image_size": 16}, "synth": {"n_per_class": 6}}"#,
    )
    .unwrap();
    let data = root.join("data");
    assert_eq!(
        code(cli().args([
            "generate",
            "--dataset",
            "1",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
        ])),
        0
    );
    let weights = untrained_weights(&root, 3, 16);
    // Test split is 3 classes x 2 = 6 images; a 20-way trial cannot be
    // sampled from it.
    assert_eq!(
        code(cli().args([
            "nway",
            "--data",
            data.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--n",
            "20",
            "--out",
            root.join("out").to_str().unwrap(),
        ])),
        2
    );
}

#[test]
fn help_and_unknown_flags() {
    assert_eq!(code(cli().arg("--help")), 0);
    let help = cli().arg("--help").output().unwrap().stdout;
    let help = String::from_utf8_lossy(&help);
    for flag in ["--config", "--seed", "--out", "--force", "--threads"] {
        assert!(help.contains(flag), "--help missing {flag}");
    }
    assert_eq!(
        code(cli().args(["generate", "--dataset", "1", "--bogus"])),
        2
    );
    assert_eq!(
        code(cli().args([
            "generate",
            "--dataset",
            "9",
            "--out",
            tmp("d9").to_str().unwrap()
        ])),
        2
    );
}
