use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fgssl_core::analysis::{read_cka, read_metrics, read_summary};

const SBM: &str = r#"
seeds = [0, 1]

[dataset.sbm]
blocks = 3
nodes_per_block = 12
p_in = 0.4
p_out = 0.03
feature_noise = 0.5
seed = 4

[partition]
clients = 2

[train]
methods = ["fedavg", "fgssl"]
rounds = 2
epochs = 1

[model]
hidden = 8
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn fgssl(config: &Path, cmd: &str, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgssl"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("FGSSL_SEED")
        .output()
        .unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&fgssl(&cfg, "prepare", &a, &[]));
    assert_ok(&fgssl(&cfg, "prepare", &b, &[]));
    for f in ["partition.tsv", "masks.tsv", "graph/edges.tsv", "graph/features.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let clients: std::collections::BTreeSet<String> = fs::read_to_string(a.join("partition.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(clients.len(), 2);
}

#[test]
fn single_client_owns_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    assert_ok(&fgssl(&cfg, "prepare", &out, &["--set", "partition.clients=1"]));
    let text = fs::read_to_string(out.join("partition.tsv")).unwrap();
    assert_eq!(text.lines().count(), 36);
    assert!(text.lines().all(|l| l.ends_with("\t0")));
}

#[test]
fn train_writes_outputs_and_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&fgssl(&cfg, "train", &a, &[]));
    assert_ok(&fgssl(&cfg, "train", &b, &["--threads", "1"]));
    for f in ["metrics.csv", "summary.json", "fgssl/seed1/logits.csv", "fedavg/seed0/global.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = read_metrics(&a.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let summary = read_summary(&a.join("summary.json")).unwrap();
    assert_eq!(summary.std, "population");
    assert_eq!(summary.methods.len(), 2);
    let logits = fs::read_to_string(a.join("fgssl/seed0/logits.csv")).unwrap();
    assert_eq!(logits.lines().next().unwrap(), "node_id,class_0,class_1,class_2,label");
    assert_eq!(logits.lines().count(), 37);
}

#[test]
fn zero_weight_fgssl_matches_fedavg_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    assert_ok(&fgssl(&cfg, "train", &out, &["--set", "loss.lambda_c=0", "--set", "loss.lambda_d=0"]));
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    let (avg, ours): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.method.as_str() == "fedavg");
    assert_eq!(avg.len(), ours.len());
    for (x, y) in avg.iter().zip(&ours) {
        assert_eq!(x.loss_total.to_bits(), y.loss_total.to_bits());
        assert_eq!(x.test_acc.to_bits(), y.test_acc.to_bits());
    }
    assert_eq!(
        fs::read(out.join("fedavg/seed1/global.ckpt")).unwrap(),
        fs::read(out.join("fgssl/seed1/global.ckpt")).unwrap()
    );
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_fgssl"))
        .args(["train", "--set", "train.methods=[\"local\"]", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("FGSSL_SEED", "7")
        .output()
        .unwrap();
    assert_ok(&o);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.seed == 7));
    assert!(out.join("local/seed7/client1.ckpt").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    for set in ["loss.temprature=1", "loss.tau=-1", "train.methods=[\"fedsgd\"]", "partition.clients=50"] {
        let o = fgssl(&cfg, "train", &out, &["--set", set]);
        assert_eq!(o.status.code(), Some(2), "{set}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = fgssl(&cfg, "sweep", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep grid is empty"));
}

#[test]
fn missing_dataset_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\npath = \"nowhere\"\n");
    let o = fgssl(&cfg, "prepare", &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let o = fgssl(&cfg, "train", &dir.path().join("o"), &["--set", "train.lr=1e300", "--set", "train.rounds=3"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn sweep_has_one_row_per_cell_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SBM}\n[sweep]\ntau = [0.1, 0.5]\nomega = [1.0, 5.0, 10.0]\n"));
    let out = dir.path().join("o");
    assert_ok(&fgssl(&cfg, "sweep", &out, &["--set", "seeds=[0]", "--set", "train.rounds=1"]));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);
    assert!(text.starts_with("tau,omega,lambda_c,lambda_d,lr,method,"));
}

#[test]
fn ablation_off_off_matches_fedavg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    let args = ["--set", "train.rounds=1", "--set", "train.methods=[\"fedavg\"]"];
    assert_ok(&fgssl(&cfg, "ablate", &out, &args));
    assert_ok(&fgssl(&cfg, "train", &out, &args));
    let mut r = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(&rows[0][1], "fnsc=off,fgsd=off");
    assert_eq!(&rows[4][1], "local=strong,global=weak");
    let summary = read_summary(&out.join("summary.json")).unwrap();
    let fedavg = summary.methods[0].final_test.mean;
    assert_eq!(rows[0][2].parse::<f64>().unwrap().to_bits(), fedavg.to_bits());
}

#[test]
fn cka_of_identical_checkpoints_is_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    assert_ok(&fgssl(&cfg, "train", &out, &["--set", "seeds=[0]", "--set", "train.save_client_checkpoints=true"]));
    let ck = out.join("fgssl/seed0/global.ckpt");
    let c0 = out.join("fgssl/seed0/client0.ckpt");
    let with = format!("{SBM}\n[cka]\ncheckpoints = [{:?}, {:?}, {:?}]\n", ck, ck, c0);
    let cfg = write_config(dir.path(), &with);
    assert_ok(&fgssl(&cfg, "cka", &out, &[]));
    let m = read_cka(&out.join("cka.csv")).unwrap();
    assert_eq!(m.len(), 3);
    assert!(m.iter().all(|r| r.len() == 3));
    assert!((m[0][1] - 1.0).abs() < 1e-12);
    assert!((m[0][0] - 1.0).abs() < 1e-12 && (m[2][2] - 1.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&m[0][2]));
}

#[test]
fn f32_training_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SBM);
    let out = dir.path().join("o");
    assert_ok(&fgssl(&cfg, "train", &out, &["--set", "train.precision=\"f32\"", "--set", "seeds=[0]"]));
    assert!(out.join("fgssl/seed0/global.ckpt").exists());
}
