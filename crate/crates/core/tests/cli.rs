use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
num_clients = 10
rounds = 4
participation_fraction = 0.2

[local]
epochs = 1
batch_size = 16

[model]
kind = "mlp"
hidden = [8]

[data]
num_classes = 4
train_samples = 400
test_samples = 100
dim = 6
"#;

fn fedmr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_dir(stdout: &[u8]) -> PathBuf {
    let text = String::from_utf8_lossy(stdout);
    let line = text.lines().find_map(|l| l.strip_prefix("outputs: ")).expect("outputs line");
    PathBuf::from(line)
}

#[test]
fn run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "fedmr.toml", SMALL);
    let out = fedmr(&["run", "--config", "fedmr.toml", "--set", "rounds=5"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join(run_dir(&out.stdout));
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("fedmr-"));
    let jsonl = fs::read_to_string(dir.join("rounds.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 5);
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["transfers"], 4);
    }
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("round,stage,accuracy,loss"));
    assert_eq!(csv.lines().count(), 6);
    for f in ["model.ckpt", "partition.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let model = fedmr::checkpoint::load(dir.join("model.ckpt")).unwrap();
    assert_eq!(model.num_classes(), 4);

    // Same directory again is refused unless forced.
    let again = fedmr(&["run", "--config", "fedmr.toml", "--set", "rounds=5"], tmp.path());
    assert!(!again.status.success());
    let forced = fedmr(&["run", "--config", "fedmr.toml", "--set", "rounds=5", "--force"], tmp.path());
    assert!(forced.status.success());
}

#[test]
fn manifest_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", SMALL);
    let first = fedmr(&["run", "--config", "c.toml", "--out", "a"], tmp.path());
    assert!(first.status.success());
    let dir_a = tmp.path().join(run_dir(&first.stdout));
    let manifest = dir_a.join("manifest.json");
    let second = fedmr(&["run", "--manifest", manifest.to_str().unwrap(), "--out", "b"], tmp.path());
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    let dir_b = tmp.path().join(run_dir(&second.stdout));
    assert_ne!(dir_a, dir_b);
    for f in ["metrics.csv", "model.ckpt", "partition.json"] {
        assert_eq!(fs::read(dir_a.join(f)).unwrap(), fs::read(dir_b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(dir_a.file_name(), dir_b.file_name());
}

#[test]
fn missing_dataset_path_exits_two_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "idx.toml",
        "[data]\nsource = \"idx\"\ntrain_images = \"nope\"\ntrain_labels = \"nope\"\ntest_images = \"nope\"\ntest_labels = \"nope\"\n",
    );
    let out = fedmr(&["run", "--config", "idx.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.train_images"));
    assert!(!tmp.path().join("runs").exists() || fs::read_dir(tmp.path().join("runs")).unwrap().count() == 0);
}

#[test]
fn validate_prints_defaults_and_rejects_bad_values() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "empty.toml", "");
    let out = fedmr(&["validate", "--config", "empty.toml"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "learning_rate = 0.01",
        "momentum = 0.9",
        "batch_size = 50",
        "epochs = 5",
        "participation_fraction = 0.1",
        "algorithm = \"fedmr\"",
    ] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let reparsed = fedmr::config::ResolvedConfig::from_toml_str(&text, &[]).unwrap();
    assert_eq!(reparsed, fedmr::config::ResolvedConfig::from_toml_str("", &[]).unwrap());

    for (name, body, field) in [
        ("p.toml", "participation_fraction = 1.5", "participation_fraction"),
        ("r.toml", "rounds = 2\npretrain_rounds = 3", "pretrain_rounds"),
    ] {
        write(tmp.path(), name, body);
        let out = fedmr(&["validate", "--config", name], tmp.path());
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains(field));
    }
    write(tmp.path(), "bad.toml", "rounds = 3\nalgorithm = = 1\n");
    let out = fedmr(&["validate", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn compare_aligns_curves_and_matches_single_runs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "fedavg.toml", &format!("algorithm = \"fedavg\"\n{SMALL}"));
    write(tmp.path(), "fedmr.toml", SMALL);
    let out = fedmr(&["compare", "fedavg.toml", "fedmr.toml"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join(run_dir(&out.stdout));
    let csv = fs::read_to_string(dir.join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "round,fedavg,fedmr");
    assert_eq!(rows.len(), 5);
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let solo = fedmr(&["run", "--config", "fedmr.toml", "--out", "solo"], tmp.path());
    assert!(solo.status.success());
    let metrics = fs::read_to_string(tmp.path().join(run_dir(&solo.stdout)).join("metrics.csv")).unwrap();
    for (row, m) in rows[1..].iter().zip(metrics.lines().skip(1)) {
        let fedmr_col = row.split(',').nth(2).unwrap();
        let acc = m.split(',').nth(2).unwrap();
        assert_eq!(fedmr_col, acc);
    }

    write(tmp.path(), "other.toml", &format!("{SMALL}\n[seeds]\ndata = 99\n"));
    let out = fedmr(&["compare", "fedmr.toml", "other.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds.data"));
}

#[test]
fn seed_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", SMALL);
    let out = fedmr(&["run", "--config", "c.toml", "--seed-sampling", "77", "--set", "rounds=1"], tmp.path());
    assert!(out.status.success());
    let dir = tmp.path().join(run_dir(&out.stdout));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["sampling"], 77);
}

#[test]
fn shipped_synthetic_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fedmr.toml", "fedavg.toml", "fedmr_no_mr.toml", "fedmr_two_stage.toml"] {
        let path = configs.join(name);
        let out = fedmr(&["validate", "--config", path.to_str().unwrap()], &configs);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
