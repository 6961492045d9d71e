//! End-to-end tests of the `simba` binary: exit codes, printed output and
//! emitted files.

use std::path::Path;
use std::process::{Command, Output};

fn simba(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simba"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Minimal well-formedness check: tags balance and nest properly.
fn assert_well_formed_xml(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().unwrap_or_else(|| panic!("stray closing tag {name}"));
            assert_eq!(open, name, "mismatched tags");
        } else {
            let name: String = tag.split_whitespace().next().unwrap().to_string();
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}

fn small_config(dir: &Path, extra_train: &str) -> std::path::PathBuf {
    let path = dir.join("run.json");
    let json = format!(
        r#"{{
  "model": {{
    "conv_channels": [4, 8],
    "feature_dim": 8,
    "hidden_dim": 8,
    "image_size": 32,
    "heatmap_sigma": 2.0
  }},
  "oracle": {{ "image_size": 32 }},
  "train": {{ "epochs": 2, "batch_size": 5{extra_train} }}
}}
"#
    );
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn gen_data_writes_manifest_and_prints_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = simba(&["gen-data", "--n", "5", "--seed", "7", "--out", "data"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("manifest.json"));
    assert!(dir.path().join("data/manifest.json").exists());
    assert!(dir.path().join("data/images/p000000.png").exists());
}

#[test]
fn gen_data_missing_out_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = simba(&["gen-data", "--n", "5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).to_lowercase().contains("usage"));
}

#[test]
fn gen_data_unwritable_target_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    // A regular file where a directory is needed.
    std::fs::write(dir.path().join("blocker"), b"").unwrap();
    let out = simba(&["gen-data", "--n", "2", "--out", "blocker/data"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen-data", "train", "eval", "ablate", "analyze-bias", "render-heatmap"] {
        let out = simba(&[sub, "--help"], dir.path());
        assert!(out.status.success(), "{sub} --help failed");
        let text = stdout(&out);
        assert!(text.contains("--config"), "{sub} help lacks --config");
        assert!(text.contains("--deterministic"), "{sub} help lacks --deterministic");
    }
    let out = simba(&["--help"], dir.path());
    assert!(out.status.success());
}

#[test]
fn train_eval_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), ", \"seed\": 3");
    let out = simba(
        &["gen-data", "--n", "20", "--seed", "5", "--out", "data", "--split", "0.6,0.2",
          "--config", "run.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let out = simba(
        &["train", "--config", config.to_str().unwrap(),
          "--train-manifest", "data/manifest_train.json",
          "--val-manifest", "data/manifest_val.json",
          "--out-dir", "out"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("best val MAD"));
    assert!(dir.path().join("out/best.smba").exists());
    assert!(dir.path().join("out/history.csv").exists());

    let out = simba(
        &["eval", "--checkpoint", "out/best.smba", "--manifest", "data/manifest_val.json",
          "--out-dir", "out"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("MAD:"));
    assert!(dir.path().join("out/report.csv").exists());

    let out = simba(
        &["analyze-bias", "--report", "out/report.csv", "--out-dir", "out"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("pearson_r:"));
    assert!(dir.path().join("out/bias_summary.csv").exists());
    let svg = std::fs::read_to_string(dir.path().join("out/bias_scatter.svg")).unwrap();
    assert_well_formed_xml(&svg);
    assert_eq!(svg.matches("<polyline").count(), 1);
}

#[test]
fn eval_without_ground_truth_fails_with_explanation() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = simba(
        &["gen-data", "--n", "12", "--seed", "2", "--out", "data", "--split", "0.5,0.25",
          "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = simba(
        &["train", "--config", "run.json",
          "--train-manifest", "data/manifest_train.json",
          "--val-manifest", "data/manifest_val.json", "--out-dir", "out"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));

    // Strip the ground truth from the val manifest.
    let text = std::fs::read_to_string(dir.path().join("data/manifest_val.json")).unwrap();
    let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    for record in manifest["records"].as_array_mut().unwrap() {
        record["bone_age_months"] = serde_json::Value::Null;
    }
    std::fs::write(
        dir.path().join("data/manifest_val.json"),
        serde_json::to_string(&manifest).unwrap(),
    )
    .unwrap();

    let out = simba(
        &["eval", "--checkpoint", "out/best.smba", "--manifest", "data/manifest_val.json",
          "--out-dir", "out"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ground-truth"));
}

#[test]
fn ablate_emits_full_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = simba(
        &["gen-data", "--n", "16", "--seed", "4", "--out", "data", "--split", "0.5,0.25",
          "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = simba(
        &["ablate", "--config", "run.json", "--seeds", "1,2,3", "--epochs", "1",
          "--train-manifest", "data/manifest_train.json",
          "--val-manifest", "data/manifest_val.json", "--out-dir", "out"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 16); // header + 5 configs x 3 seeds
    let summary = std::fs::read_to_string(dir.path().join("out/ablation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
}

#[test]
fn analyze_bias_perfect_line_and_degenerate_case() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,relative_age,abs_error\n");
    for i in 0..12 {
        let r = f64::from(i);
        csv.push_str(&format!("p{i},{r},{}\n", 0.5 * r + 1.0));
    }
    std::fs::write(dir.path().join("report.csv"), &csv).unwrap();
    let out = simba(&["analyze-bias", "--report", "report.csv", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("slope: 0.5"), "{text}");
    assert!(text.contains("pearson_r: 1"), "{text}");

    // Constant errors: pearson undefined, exit 1 with an explanation.
    let mut csv = String::from("id,relative_age,abs_error\n");
    for i in 0..12 {
        csv.push_str(&format!("p{i},{i},2.0\n"));
    }
    std::fs::write(dir.path().join("flat.csv"), &csv).unwrap();
    let out = simba(&["analyze-bias", "--report", "flat.csv", "--out-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("degenerate variance"));
}

#[test]
fn render_heatmap_writes_png() {
    let dir = tempfile::tempdir().unwrap();
    let out = simba(&["gen-data", "--n", "3", "--seed", "9", "--out", "data"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = simba(
        &["render-heatmap", "--manifest", "data/manifest.json", "--id", "p000001",
          "--out", "heat.png"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("heat.png")).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");

    let out = simba(
        &["render-heatmap", "--manifest", "data/manifest.json", "--id", "nope",
          "--out", "x.png"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_config_round_trips_the_effective_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = simba(
        &["train", "--config", config.to_str().unwrap(), "--seed", "5", "--dump-config"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let effective = stdout(&out);
    assert!(effective.contains("\"seed\": 5"));
    std::fs::write(dir.path().join("effective.json"), &effective).unwrap();
    let out = simba(&["train", "--config", "effective.json", "--dump-config"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), effective);
}

#[test]
fn config_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"train": {"epochz": 10}}"#,
    )
    .unwrap();
    let out = simba(&["train", "--config", "bad.json", "--dump-config"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"));
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), ", \"initial_lr\": 1e25");
    let out = simba(
        &["gen-data", "--n", "12", "--seed", "8", "--out", "data", "--split", "0.5,0.25",
          "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = simba(
        &["train", "--config", "run.json",
          "--train-manifest", "data/manifest_train.json",
          "--val-manifest", "data/manifest_val.json", "--out-dir", "out"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("non-finite gradient"));
}
