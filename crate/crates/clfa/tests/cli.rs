use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clfa::commands::{cmd_sweep_alpha, parse_alpha_values};
use clfa::config::RunConfig;
use clfa::dataset::{manifest_path, read_dataset};
use clfa::manifest::read_manifest;
use clfa::report::METRIC_COLUMNS;
use clfa_core::data::dataset_stats;

fn clfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clfa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = clfa(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "width = 16\nffn_hidden = 16\nproj_hidden = 16\nclassifier_hidden = 8\nfusion_layers = 1\n";

fn gen(dir: &Path, n: usize) -> PathBuf {
    ok(&["gen-data", "--out", s(dir), "--n", &n.to_string(), "--seed", "7"]);
    dir.join("data.clfa")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, format!("data = data.clfa\nteacher = fixture\n{SMALL}{extra}")).unwrap();
    p
}

#[test]
fn gen_data_is_reproducible_and_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = gen(a.path(), 120);
    let fb = gen(b.path(), 120);
    for name in ["data.clfa", "data.labels.csv", "data.manifest", "lexicon.tsv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let loaded = read_dataset(&fa).unwrap();
    assert_eq!(read_manifest(&manifest_path(&fb)).unwrap(), dataset_stats(&loaded.dataset));
    assert_eq!(loaded.fixture.records.len(), 120);
    assert_eq!(loaded.fixture.width, 32);
    let stats = dataset_stats(&loaded.dataset);
    assert_eq!(stats.get("train").unwrap().samples(), 96);
    assert_eq!(stats.get("dev").unwrap().samples(), 12);
    assert_eq!(stats.get("test").unwrap().samples(), 12);
}

#[test]
fn gen_data_rejects_one_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = clfa(&["gen-data", "--out", s(dir.path()), "--classes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
    assert!(!dir.path().join("data.clfa").exists());
}

#[test]
fn train_reports_file_and_key_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cfg");
    let out = clfa(&["train", "--config", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.cfg"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "tau = 0.1\ntemperature = 0.1\n").unwrap();
    let out = clfa(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("temperature") && err.contains("batch_size"), "{err}");
}

#[test]
fn empty_config_uses_reference_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.cfg");
    fs::write(&p, "# defaults only\n").unwrap();
    let c = RunConfig::load(&p).unwrap();
    assert_eq!((c.train.alpha, c.train.tau, c.train.batch_size), (1.0, 0.1, 8));
    assert_eq!(c.out_dir, dir.path());
}

#[test]
fn alpha_zero_history_reports_but_ignores_alignment() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 40);
    let cfg = write_config(dir.path(), "alpha = 0\nepochs = 2\nout_dir = out\n");
    ok(&["train", "--config", s(&cfg)]);
    let text = fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,L_ic,L_ci,L_i,L_t,L_con,L_ce,total,acc,macro_P,macro_R,macro_F1"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r[5] > 0.0);
        assert_eq!(r[7], r[6]);
    }
}

#[test]
fn eval_and_heatmap_on_a_memorized_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 200);
    let cfg = write_config(dir.path(), "epochs = 40\ndropout = 0\nlr = 0.003\nalpha = 0.5\n");
    ok(&["train", "--config", s(&cfg)]);
    let ck = dir.path().join("checkpoint.clfc");
    let metrics = dir.path().join("metrics.csv");
    let stdout = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--split", "train", "--out", s(&metrics)]);
    assert!(stdout.contains("macro"));
    let text = fs::read_to_string(&metrics).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRIC_COLUMNS.join(","));
    let acc: f64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(acc >= 0.95, "training-set accuracy {acc}");

    let heat = dir.path().join("heat.csv");
    ok(&["heatmap", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&heat), "--batch", "6"]);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&heat)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 6 && r.iter().all(|v| v.abs() <= 1.0 + 1e-12)));

    let out = clfa(&["eval", "--checkpoint", s(&dir.path().join("nope.clfc")), "--data", s(&data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.clfc"));
}

#[test]
fn knowledge_variant_trains_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 30);
    let cfg = dir.path().join("k.cfg");
    fs::write(
        &cfg,
        "data = data.clfa\nteacher = fixture\nwidth = 8\nffn_hidden = 8\nproj_hidden = 8\nteacher_width = 32\nclassifier_hidden = 4\nfusion = knowledge_cross_attention\nlexicon = lexicon.tsv\nepochs = 1\n",
    )
    .unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let data = dir.path().join("data.clfa");
    let ck = dir.path().join("checkpoint.clfc");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
}

#[test]
fn sweep_rows_echo_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig::parse(&format!("{SMALL}synthetic_n = 50\nepochs = 1\n"), None).unwrap();
    let values = parse_alpha_values("0,0.5,1.0,2").unwrap();
    let out = dir.path().join("sweep.csv");
    let rows = cmd_sweep_alpha(&base, &values, &[1, 2, 3], &out).unwrap();
    assert_eq!(rows.len(), 12);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,seed,acc,macro_P,macro_R,macro_F1");
    let alphas: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(alphas, ["0", "0", "0", "0.5", "0.5", "0.5", "1.0", "1.0", "1.0", "2", "2", "2"]);
    assert!(parse_alpha_values("1,-2").is_err());
}
