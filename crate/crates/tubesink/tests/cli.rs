//! End-to-end checks of the command-line interface: subcommands, file
//! outputs, determinism, and exit-code classes.

use std::path::Path;
use std::process::Command;

fn tubesink() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tubesink"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

/// A configuration small enough for CLI tests to train in seconds.
const FAST_CONFIG: &str = r#"
[data]
clips = 8
[data.generator]
frames = 4
height = 16
width = 16
max_speed = 2.0
seed = 5

[train]
objective = "sigma"
batch_size = 4
epochs = 2
warmup_epochs = 1
learning_rate = 0.001
mask_ratio = 0.75
prototype_count = 8

[train.geometry]
tube_frames = 2
tube_size = 8

[train.model]
d_model = 16
depth = 1
decoder_depth = 1
heads = 2
decoder_heads = 2
mlp_ratio = 2
d_feat = 8

[train.phi]
hidden = 16

[eval]
test_every = 4

[sweep]
prototype_grid = [4, 8]
"#;

#[test]
fn gen_writes_identical_manifests_twice() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FAST_CONFIG);
    for out in ["data_a", "data_b"] {
        let status = tubesink()
            .args(["gen", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir.path().join("data_a/manifest.json")).unwrap();
    let b = std::fs::read(dir.path().join("data_b/manifest.json")).unwrap();
    assert_eq!(a, b);
    // 8 clips plus the manifest.
    let files = std::fs::read_dir(dir.path().join("data_a")).unwrap().count();
    assert_eq!(files, 9);
}

#[test]
fn pretrain_then_eval_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FAST_CONFIG);
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert!(tubesink()
        .args(["gen", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    assert!(tubesink()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap()
        .success());
    assert!(run.join("checkpoint.ckpt").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,epoch,lr,loss,ce_psi,ce_phi,feat_variance,usage_entropy"
    );
    assert_eq!(lines.count(), 4); // 2 epochs x 2 steps

    for mode in ["probe", "segment"] {
        let report = dir.path().join(format!("{mode}.json"));
        let csv = dir.path().join(format!("{mode}.csv"));
        assert!(tubesink()
            .args(["eval", "--checkpoint"])
            .arg(run.join("checkpoint.ckpt"))
            .arg("--data")
            .arg(&data)
            .args(["--mode", mode, "--out"])
            .arg(&report)
            .arg("--csv")
            .arg(&csv)
            .status()
            .unwrap()
            .success());
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["mode"], mode);
        assert!(doc["train_config"].is_object(), "report carries the resolved config");
        if mode == "probe" {
            let acc = doc["probe"]["accuracy"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        } else {
            for regime in ["clustering", "overclustering"] {
                let miou = doc[regime]["mean_hungarian_miou"].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&miou), "{regime} miou {miou}");
            }
        }
        assert!(csv.exists());
    }
}

#[test]
fn identical_eval_inputs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FAST_CONFIG);
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    for args in [
        vec!["gen", "--config"],
        vec!["pretrain", "--config"],
    ] {
        let mut cmd = tubesink();
        cmd.args(&args).arg(&config);
        if args[0] == "gen" {
            cmd.arg("--out").arg(&data);
        } else {
            cmd.arg("--data").arg(&data).arg("--out").arg(&run);
        }
        assert!(cmd.status().unwrap().success());
    }
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let report = dir.path().join(name);
        assert!(tubesink()
            .args(["eval", "--checkpoint"])
            .arg(run.join("checkpoint.ckpt"))
            .arg("--data")
            .arg(&data)
            .args(["--mode", "probe", "--out"])
            .arg(&report)
            .status()
            .unwrap()
            .success());
        reports.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FAST_CONFIG);
    let data = dir.path().join("data");
    assert!(tubesink()
        .args(["gen", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let out = dir.path().join("sweep");
    assert!(tubesink()
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .args(["--axis", "prototypes", "--out"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,cell,probe_accuracy,final_loss,final_feat_variance");
    assert_eq!(lines.len(), 1 + 2, "grid of 2 prototype counts");
    assert!(lines[1].starts_with("prototypes,4,"));
    assert!(lines[2].starts_with("prototypes,8,"));
}

#[test]
fn missing_dataset_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FAST_CONFIG);
    let status = tubesink()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(dir.path().join("nope"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[train]\nmask_ratio = 3.0\n");
    let status = tubesink()
        .args(["gen", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("data"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let config = write_config(dir.path(), "[train]\nnot_a_field = 1\n");
    let status = tubesink()
        .args(["gen", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("data"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "unknown keys are rejected");
}

#[test]
fn feature_l2_pretraining_warns_about_collapse() {
    let dir = tempfile::tempdir().unwrap();
    // Longer feature_l2 run so the variance actually collapses.
    let config_body = FAST_CONFIG
        .replace("objective = \"sigma\"", "objective = \"feature_l2\"")
        .replace("epochs = 2", "epochs = 40")
        .replace("learning_rate = 0.001", "learning_rate = 0.01");
    let config = write_config(dir.path(), &config_body);
    let data = dir.path().join("data");
    assert!(tubesink()
        .args(["gen", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let output = tubesink()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("collapse warning"), "stderr was: {stderr}");
}
