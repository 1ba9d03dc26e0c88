use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn elfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elfs"))
        .args(args)
        .output()
        .expect("spawn elfs")
}

fn ok(args: &[&str]) -> Output {
    let out = elfs(args);
    assert!(
        out.status.success(),
        "elfs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path, cmd: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("run_manifest_{cmd}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn paths(v: &Value, key: &str) -> Vec<String> {
    v[key]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap().to_string())
        .collect()
}

/// Small blob dataset split into train/test under `dir`.
fn ingest(dir: &Path) {
    ok(&[
        "ingest",
        "--blobs",
        "--n",
        "300",
        "--dim",
        "6",
        "--classes",
        "3",
        "--label-noise",
        "0.1",
        "--seed",
        "4",
        "--out",
        s(dir),
    ]);
}

fn cluster(dir: &Path, out: &Path) {
    ok(&[
        "cluster",
        "--embeddings",
        s(&dir.join("train.elfs")),
        "--k",
        "10",
        "--heads",
        "2",
        "--epochs",
        "5",
        "--batch-size",
        "64",
        "--seed",
        "1",
        "--out",
        s(out),
    ]);
}

const QUICK_PROBE: [&str; 4] = ["--probe-epochs", "8", "--probe-hidden", "32"];

#[test]
fn ingest_writes_split_files() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    for f in [
        "train.elfs",
        "train.manifest.json",
        "test.elfs",
        "train_truth.txt",
        "test_truth.txt",
        "train_clean_truth.txt",
        "train_indices.txt",
        "test_indices.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let train = elfs_core::data::read_embeddings(&dir.path().join("train.elfs")).unwrap();
    let test = elfs_core::data::read_embeddings(&dir.path().join("test.elfs")).unwrap();
    assert_eq!((train.len(), test.len()), (240, 60));
    assert!(train.is_normalized());
    let m = manifest(dir.path(), "ingest");
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["config"]["label_noise"], "0.1");
    assert!(paths(&m, "files_read").is_empty());
    assert!(paths(&m, "files_written")
        .iter()
        .any(|p| p.ends_with("train.manifest.json")));
}

#[test]
fn ingest_reads_csv_with_label_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    fs::write(&csv, "a,b,label\n1,0,0\n0,1,1\n1,1,1\n2,0,0\n").unwrap();
    ok(&[
        "ingest",
        "--csv",
        s(&csv),
        "--test-fraction",
        "0",
        "--normalize",
        "false",
        "--out",
        s(dir.path()),
    ]);
    let store = elfs_core::data::read_embeddings(&dir.path().join("embeddings.elfs")).unwrap();
    assert_eq!((store.len(), store.dim(), store.num_classes()), (4, 2, 2));
    assert_eq!(store.row(3), &[2.0, 0.0]);
    assert_eq!(
        fs::read_to_string(dir.path().join("truth.txt")).unwrap(),
        "0\n1\n1\n0\n"
    );

    fs::write(&csv, "a,b\n1,x\n").unwrap();
    let out = elfs(&[
        "ingest",
        "--csv",
        s(&csv),
        "--classes",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(&csv, "a,b\n1,0\n0,1\n").unwrap();
    let out = elfs(&["ingest", "--csv", s(&csv), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--classes"));
}

#[test]
fn cluster_writes_pseudo_labels_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cluster(dir.path(), &a);
    cluster(dir.path(), &b);
    let labels = fs::read(a.join("pseudo_labels.txt")).unwrap();
    assert_eq!(labels.iter().filter(|&&c| c == b'\n').count(), 240);
    assert_eq!(labels, fs::read(b.join("pseudo_labels.txt")).unwrap());
    assert_eq!(
        fs::read(a.join("heads.ckpt")).unwrap(),
        fs::read(b.join("heads.ckpt")).unwrap()
    );
    let curve = fs::read_to_string(a.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6);
}

#[test]
fn cluster_accepts_a_precomputed_neighbor_file() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    let train = dir.path().join("train.elfs");
    ok(&[
        "knn",
        "--embeddings",
        s(&train),
        "--k",
        "10",
        "--out",
        s(dir.path()),
    ]);
    let via_file = dir.path().join("f");
    ok(&[
        "cluster",
        "--embeddings",
        s(&train),
        "--knn",
        s(&dir.path().join("knn.csv")),
        "--heads",
        "2",
        "--epochs",
        "5",
        "--batch-size",
        "64",
        "--seed",
        "1",
        "--out",
        s(&via_file),
    ]);
    let inline = dir.path().join("i");
    cluster(dir.path(), &inline);
    assert_eq!(
        fs::read(via_file.join("pseudo_labels.txt")).unwrap(),
        fs::read(inline.join("pseudo_labels.txt")).unwrap()
    );
}

#[test]
fn missing_flags_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for (args, flag) in [
        (vec!["cluster"], "--embeddings"),
        (vec!["knn"], "--embeddings"),
        (vec!["select"], "--prune-rate"),
        (vec!["select", "--prune-rate", "0.5"], "--hard-prune-rate"),
        (vec!["metrics", "--pred", "p"], "--truth"),
        (vec!["histogram"], "--scores"),
    ] {
        let mut full = args.clone();
        full.extend(["--out", s(dir.path())]);
        let out = elfs(&full);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(flag), "{args:?}: {err}");
        assert!(err.starts_with(&format!("elfs {}:", args[0])), "{err}");
    }
    assert_eq!(elfs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(elfs(&["knn", "--k", "many"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = elfs(&[
        "knn",
        "--embeddings",
        s(&dir.path().join("nope.elfs")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.elfs"));
}

fn score_file(dir: &Path, hardness: &[f64]) -> PathBuf {
    let p = dir.join("scores.csv");
    let mut text = String::from("index,hardness\n");
    for (i, h) in hardness.iter().enumerate() {
        text.push_str(&format!("{i},{h}\n"));
    }
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn select_from_score_file_keeps_rank_window() {
    let dir = tempfile::tempdir().unwrap();
    // hardness descending by index: rank r is index r
    let scores = score_file(
        dir.path(),
        &(0..10).map(|i| (10 - i) as f64).collect::<Vec<_>>(),
    );
    ok(&[
        "select",
        "--scores",
        s(&scores),
        "--prune-rate",
        "0.5",
        "--hard-prune-rate",
        "0.2",
        "--out",
        s(dir.path()),
    ]);
    let plan = elfs_core::selection::read_plan(&dir.path().join("plan.txt")).unwrap();
    assert_eq!(plan.selected, vec![2, 3, 4, 5, 6]);
    assert_eq!(plan.seed, Some(0));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("select_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["k"], 5);
    assert_eq!(report["max_hard_prune_rate"], 0.5);

    let out = elfs(&[
        "select",
        "--scores",
        s(&scores),
        "--prune-rate",
        "0.5",
        "--hard-prune-rate",
        "0.6",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("maximum feasible hard prune rate is 0.5")
    );

    ok(&[
        "histogram",
        "--scores",
        s(&scores),
        "--plan",
        s(&dir.path().join("plan.txt")),
        "--bins",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        fs::read_to_string(dir.path().join("histogram.csv")).unwrap(),
        "bin_lo,bin_hi,count_all,count_selected\n1,10,10,5\n"
    );
}

#[test]
fn select_baselines_from_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let scores = score_file(dir.path(), &(0..40).map(|i| i as f64).collect::<Vec<_>>());
    for method in ["random", "ccs"] {
        let out = dir.path().join(method);
        ok(&[
            "select",
            "--scores",
            s(&scores),
            "--method",
            method,
            "--prune-rate",
            "0.75",
            "--hard-prune-rate",
            "0.1",
            "--strata",
            "4",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        let plan = elfs_core::selection::read_plan(&out.join("plan.txt")).unwrap();
        assert_eq!(plan.selected.len(), 10);
        assert!(plan.selected.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let scores = score_file(
        dir.path(),
        &(0..10).map(|i| (10 - i) as f64).collect::<Vec<_>>(),
    );
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "scores = {}\nprune-rate = 0.5\nhard_prune_rate = 0.2\nseed = 11\nunused_key = 1\n",
            s(&scores)
        ),
    )
    .unwrap();
    ok(&[
        "select",
        "--config",
        s(&conf),
        "--hard-prune-rate",
        "0.0",
        "--out",
        s(dir.path()),
    ]);
    let plan = elfs_core::selection::read_plan(&dir.path().join("plan.txt")).unwrap();
    assert_eq!(plan.selected, vec![0, 1, 2, 3, 4]);
    let m = manifest(dir.path(), "select");
    assert_eq!(m["config"]["seed"], "11");
    assert_eq!(m["config"]["hard_prune_rate"], "0");
    assert_eq!(m["unused_config_keys"][0], "unused_key");

    fs::write(&conf, "prune_rate 0.5\n").unwrap();
    assert_eq!(
        elfs(&["select", "--config", s(&conf), "--out", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("absent.conf");
    assert_eq!(
        elfs(&["select", "--config", s(&missing), "--out", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn search_beta_select_never_touches_truth() {
    let dir = tempfile::tempdir().unwrap();
    ingest(dir.path());
    cluster(dir.path(), dir.path());
    // ground truth is gone; selection must not need it
    for f in [
        "train_truth.txt",
        "train_clean_truth.txt",
        "test_truth.txt",
        "test_clean_truth.txt",
    ] {
        fs::remove_file(dir.path().join(f)).unwrap();
    }
    let (train, pseudo) = (
        dir.path().join("train.elfs"),
        dir.path().join("pseudo_labels.txt"),
    );
    let mut args = vec![
        "select",
        "--embeddings",
        s(&train),
        "--pseudo-labels",
        s(&pseudo),
        "--prune-rate",
        "0.5",
        "--search-beta",
        "--seed",
        "2",
        "--out",
    ];
    let out_a = dir.path().join("sa");
    let out_b = dir.path().join("sb");
    args.push(s(&out_a));
    args.extend(QUICK_PROBE);
    ok(&args);
    let table = fs::read_to_string(out_a.join("beta_table.csv")).unwrap();
    let betas: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    // one row per β feasible both on all rows and on the 90% search split
    let labels =
        elfs_core::data::read_labels(&pseudo, 3, elfs_core::data::LabelKind::Pseudo).unwrap();
    let labels = elfs_core::data::PseudoLabels::try_from(labels).unwrap();
    let (search_rows, _) = elfs_core::selection::stratified_split(&labels, 0.1, 2).unwrap();
    let split_grid = elfs_core::selection::beta_grid(search_rows.len(), 0.5, 0.1).unwrap();
    let expected: Vec<f64> = elfs_core::selection::beta_grid(240, 0.5, 0.1)
        .unwrap()
        .into_iter()
        .filter(|b| split_grid.contains(b))
        .collect();
    assert_eq!(betas, expected);
    assert!(betas.len() >= 5);
    let m = manifest(&out_a, "select");
    let read = paths(&m, "files_read");
    assert_eq!(read.len(), 2);
    assert!(read.iter().all(|p| !p.contains("truth")), "{read:?}");

    let pos = args.iter().position(|a| *a == s(&out_a)).unwrap();
    args[pos] = s(&out_b);
    ok(&args);
    for f in [
        "plan.txt",
        "beta_table.csv",
        "scores_aum.csv",
        "select_report.json",
    ] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn dynamics_metrics_and_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ingest(d);
    cluster(d, d);
    let train = d.join("train.elfs");
    let pseudo = d.join("pseudo_labels.txt");
    let mut args = vec![
        "dynamics",
        "--embeddings",
        s(&train),
        "--pseudo-labels",
        s(&pseudo),
        "--out",
        s(d),
    ];
    args.extend(QUICK_PROBE);
    ok(&args);
    for m in ["aum", "forgetting", "el2n"] {
        let text = fs::read_to_string(d.join(format!("scores_{m}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 241, "{m}");
    }
    let (rec, classes) = elfs_core::probe::read_dynamics(&d.join("dynamics.bin")).unwrap();
    assert_eq!((rec.len(), rec.epochs(), classes), (240, 8, Some(3)));

    let out = ok(&[
        "metrics",
        "--pred",
        s(&pseudo),
        "--truth",
        s(&d.join("train_clean_truth.txt")),
        "--out",
        s(d),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("acc,nmi,ari\n"));
    assert_eq!(
        fs::read_to_string(d.join("per_class_error.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    ok(&[
        "select",
        "--scores",
        s(&d.join("scores_aum.csv")),
        "--prune-rate",
        "0.5",
        "--hard-prune-rate",
        "0.1",
        "--out",
        s(d),
    ]);
    let (truth, plan) = (d.join("train_truth.txt"), d.join("plan.txt"));
    let (test, test_truth) = (d.join("test.elfs"), d.join("test_clean_truth.txt"));
    let args = vec![
        "eval",
        "--embeddings",
        s(&train),
        "--truth",
        s(&truth),
        "--plan",
        s(&plan),
        "--test-embeddings",
        s(&test),
        "--test-truth",
        s(&test_truth),
        "--out",
        s(d),
        "--probe-epochs",
        "30",
        "--probe-batch-size",
        "32",
    ];
    let out = ok(&args);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let acc: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    // same number as the library call on the same inputs
    let store = elfs_core::data::read_embeddings(&train).unwrap();
    let test_store = elfs_core::data::read_embeddings(&test).unwrap();
    let gt = elfs_core::data::LabelKind::GroundTruth;
    let y = elfs_core::data::read_labels(&truth, 3, gt).unwrap();
    let test_y = elfs_core::data::read_labels(&test_truth, 3, gt).unwrap();
    let split = elfs_core::harness::TestSplit::External {
        store: &test_store,
        truth: &test_y,
    };
    let cfg = elfs_core::probe::ProbeConfig {
        epochs: 30,
        batch_size: 32,
        ..Default::default()
    };
    let plan_value = elfs_core::selection::read_plan(&plan).unwrap();
    let expected =
        elfs_core::harness::evaluate_coreset(&store, &plan_value, &y, split, &cfg).unwrap();
    assert_eq!(acc, expected, "{text}");
    assert!(paths(&manifest(d, "eval"), "files_read")
        .iter()
        .any(|p| p.ends_with("train_truth.txt")));

    // the plan's own rows cannot serve as a test split
    fs::copy(d.join("plan.txt"), d.join("overlap.txt")).unwrap();
    let lines: String = fs::read_to_string(d.join("plan.txt"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(d.join("overlap.txt"), lines).unwrap();
    let out = elfs(&[
        "eval",
        "--embeddings",
        s(&train),
        "--truth",
        s(&d.join("train_truth.txt")),
        "--plan",
        s(&d.join("plan.txt")),
        "--test-indices",
        s(&d.join("overlap.txt")),
        "--out",
        s(d),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test split"));
}

#[test]
fn compare_writes_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "ingest",
        "--blobs",
        "--n",
        "200",
        "--dim",
        "6",
        "--test-fraction",
        "0",
        "--out",
        s(d),
    ]);
    let (store, truth) = (d.join("embeddings.elfs"), d.join("truth.txt"));
    let mut args = vec![
        "compare",
        "--embeddings",
        s(&store),
        "--truth",
        s(&truth),
        "--methods",
        "elfs,random",
        "--prune-rates",
        "0.5",
        "--seeds",
        "0,1",
        "--k",
        "5",
        "--heads",
        "2",
        "--epochs",
        "3",
        "--batch-size",
        "64",
        "--out",
        s(d),
    ];
    args.extend(QUICK_PROBE);
    let out = ok(&args);
    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), report);
    let rows = elfs_core::harness::read_report(&d.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(
        fs::read_to_string(d.join("cells.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    assert_eq!(manifest(d, "compare")["config"]["seeds"], "0,1");
}
