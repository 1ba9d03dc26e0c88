//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use serde::Serialize;

use elfs_core::data::{
    l2_normalize, read_embeddings, read_labels, read_scores, write_embeddings, write_labels,
    write_scores, DatasetManifest, EmbeddingStore, LabelKind, LabelVector, Metric, PseudoLabels,
    ScoreVector,
};
use elfs_core::harness::{
    compare_methods_with_eval_labels, evaluate_coreset, make_blobs, score_histogram,
    train_test_split, write_cells, write_histogram, write_report, CompareConfig, Method, TestSplit,
};
use elfs_core::knn::{build_knn, NeighborTable, DEFAULT_K};
use elfs_core::metrics::{per_class_error, ClusterQuality};
use elfs_core::probe::{
    scores_for, train_probe_with_dynamics, write_dynamics, ProbeConfig, DEFAULT_EL2N_EPOCHS,
};
use elfs_core::selection::{
    beta_grid_search, ccs_coreset, double_end_prune, max_hard_prune_rate, random_coreset,
    read_plan, write_beta_table, write_plan, CoresetPlan, DEFAULT_BETA_STEP, DEFAULT_NUM_STRATA,
};
use elfs_core::temi::{
    assign_pseudo_labels, train_ensemble, write_checkpoint, EnsembleOptions, TrainConfig,
    DEFAULT_NUM_HEADS,
};

use crate::config::{parse_config, List, Resolver};
use crate::run::Run;
use crate::{
    Cli, CliError, ClusterArgs, ClusterCmdArgs, Command, CompareArgs, DynamicsArgs, EvalArgs,
    HistogramArgs, IngestArgs, KnnArgs, MetricsArgs, ProbeArgs, SelectArgs,
};

type CmdResult<T = ()> = Result<T, CliError>;

pub fn execute(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text, p)?
        }
        None => BTreeMap::new(),
    };
    let mut r = Resolver::new(config);
    let seed = r.value("seed", cli.seed, 0u64)?;
    let out = r.value("out", cli.out.clone(), PathBuf::from("."))?;
    if let Some(threads) = r.optional::<usize>("threads", cli.threads)? {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow!("configuring thread pool: {e}"))?;
    }

    let mut run = Run::new(cli.command.name(), &out)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&mut r, &mut run, seed, a)?,
        Command::Knn(a) => knn(&mut r, &mut run, a)?,
        Command::Cluster(a) => cluster(&mut r, &mut run, seed, a)?,
        Command::Metrics(a) => metrics(&mut r, &mut run, a)?,
        Command::Dynamics(a) => dynamics(&mut r, &mut run, seed, a)?,
        Command::Select(a) => select(&mut r, &mut run, seed, a)?,
        Command::Eval(a) => eval(&mut r, &mut run, seed, a)?,
        Command::Compare(a) => compare(&mut r, &mut run, seed, a)?,
        Command::Histogram(a) => histogram(&mut r, &mut run, a)?,
    }
    for key in r.unused_keys() {
        warn!("config key `{key}` is not used by this command");
    }
    let manifest = run.finish(&r)?;
    info!("wrote {}", manifest.display());
    Ok(())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads an embedding file, L2-normalizing rows when the file is not flagged
/// normalized.
fn load_store(run: &mut Run, path: &Path) -> CmdResult<EmbeddingStore> {
    let store = read_embeddings(&run.input(path))?;
    if store.is_normalized() {
        return Ok(store);
    }
    info!("normalizing rows of {}", path.display());
    Ok(l2_normalize(&store)?)
}

fn max_label(path: &Path, kind: LabelKind) -> CmdResult<(Vec<usize>, usize)> {
    let raw = read_labels(path, usize::MAX, kind)?;
    let top = raw.labels().iter().max().map_or(0, |m| m + 1);
    Ok((raw.labels().to_vec(), top))
}

/// Label file with `classes` classes, or one more than the largest label.
fn load_labels(
    run: &mut Run,
    path: &Path,
    classes: Option<usize>,
    kind: LabelKind,
) -> CmdResult<LabelVector> {
    let (labels, top) = max_label(&run.input(path), kind)?;
    Ok(LabelVector::new(
        labels,
        classes.unwrap_or(top.max(1)),
        kind,
    )?)
}

fn load_pseudo(run: &mut Run, path: &Path, classes: usize) -> CmdResult<PseudoLabels> {
    let v = read_labels(&run.input(path), classes, LabelKind::Pseudo)?;
    Ok(PseudoLabels::try_from(v)?)
}

fn read_indices(run: &mut Run, path: &Path) -> CmdResult<Vec<usize>> {
    let text = fs::read_to_string(run.input(path))
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .with_context(|| format!("{}:{}: bad index {t:?}", path.display(), lineno + 1))?,
        );
    }
    Ok(out)
}

fn write_indices(path: &Path, indices: &[usize]) -> CmdResult {
    let text: String = indices.iter().map(|i| format!("{i}\n")).collect();
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let json = serde_json::to_string_pretty(value).context("serializing JSON")?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn probe_config(r: &mut Resolver, a: &ProbeArgs, seed: u64) -> CmdResult<ProbeConfig> {
    let d = ProbeConfig::default();
    let cfg = ProbeConfig {
        hidden_dim: r.value("probe_hidden", a.probe_hidden, d.hidden_dim)?,
        epochs: r.value("probe_epochs", a.probe_epochs, d.epochs)?,
        batch_size: r.value("probe_batch_size", a.probe_batch_size, d.batch_size)?,
        learning_rate: r.value("probe_lr", a.probe_lr, d.learning_rate)?,
        min_learning_rate: r.value("probe_min_lr", a.probe_min_lr, d.min_learning_rate)?,
        momentum: r.value("probe_momentum", a.probe_momentum, d.momentum)?,
        weight_decay: r.value("probe_weight_decay", a.probe_weight_decay, d.weight_decay)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

struct ClusterSettings {
    heads: usize,
    classes: usize,
    train: TrainConfig,
    options: EnsembleOptions,
}

fn cluster_settings(
    r: &mut Resolver,
    a: &ClusterArgs,
    seed: u64,
    default_classes: usize,
) -> CmdResult<ClusterSettings> {
    let t = TrainConfig::default();
    let o = EnsembleOptions::default();
    let s = ClusterSettings {
        heads: r.value("heads", a.heads, DEFAULT_NUM_HEADS)?,
        classes: r.value("classes", a.classes, default_classes)?,
        train: TrainConfig {
            epochs: r.value("epochs", a.epochs, t.epochs)?,
            batch_size: r.value("batch_size", a.batch_size, t.batch_size)?,
            learning_rate: r.value("lr", a.lr, t.learning_rate)?,
            weight_decay: r.value("weight_decay", a.weight_decay, t.weight_decay)?,
            seed,
        },
        options: EnsembleOptions {
            pmi_exponent: r.value("pmi_exponent", a.pmi_exponent, o.pmi_exponent)?,
            ema_momentum: r.value("ema_momentum", a.ema_momentum, o.ema_momentum)?,
            temperature: r.value("temperature", a.temperature, o.temperature)?,
        },
    };
    if s.heads == 0 || s.classes == 0 {
        return Err(usage("--heads and --classes must be at least 1"));
    }
    s.train.validate()?;
    s.options.validate()?;
    Ok(s)
}

fn ingest(r: &mut Resolver, run: &mut Run, seed: u64, a: &IngestArgs) -> CmdResult {
    let blobs = r.switch("blobs", a.blobs)?;
    let csv = r.optional::<PathBuf>("csv", a.csv.clone())?;
    let test_fraction = r.value("test_fraction", a.test_fraction, 0.2)?;
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(usage(format!(
            "--test-fraction {test_fraction} must be in [0, 1)"
        )));
    }
    let normalize = r.value("normalize", a.normalize, true)?;

    let (store, truth, clean) = match (blobs, csv) {
        (true, Some(_)) => return Err(usage("--blobs and --csv are mutually exclusive")),
        (false, None) => return Err(usage("missing required flag --csv (or --blobs)")),
        (true, None) => {
            let n = r.value("n", a.n, 3000usize)?;
            let dim = r.value("dim", a.dim, 32usize)?;
            let classes = r.value("classes", a.classes, 3usize)?;
            let separation = r.value("separation", a.separation, 10.0)?;
            let noise = r.value("label_noise", a.label_noise, 0.0)?;
            let (store, truth) = make_blobs(n, dim, classes, separation, noise, seed)?;
            let clean = if noise > 0.0 {
                Some(make_blobs(n, dim, classes, separation, 0.0, seed)?.1)
            } else {
                None
            };
            (store, Some(truth), clean)
        }
        (false, Some(path)) => {
            let label_column = r.optional::<String>("label_column", a.label_column.clone())?;
            let classes = r.optional::<usize>("classes", a.classes)?;
            let (store, truth) = read_csv(run, &path, label_column.as_deref(), classes, seed)?;
            (store, truth, None)
        }
    };
    let default_name = if blobs { "blobs" } else { "dataset" };
    let name = r.value("name", a.name.clone(), default_name.to_string())?;
    let store = EmbeddingStore::new(
        DatasetManifest {
            name,
            ..store.manifest().clone()
        },
        store.as_slice().to_vec(),
    )?;
    let store = if normalize {
        l2_normalize(&store)?
    } else {
        store
    };

    let write_set = |run: &mut Run, prefix: &str, rows: Option<&[usize]>| -> CmdResult {
        let part = match rows {
            Some(idx) => store.select_rows(idx)?,
            None => store.clone(),
        };
        let file = if prefix.is_empty() {
            "embeddings.elfs".to_string()
        } else {
            format!("{prefix}.elfs")
        };
        write_embeddings(&part, &run.output_embeddings(&file))?;
        let tag = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}_")
        };
        for (labels, stem) in [(&truth, "truth"), (&clean, "clean_truth")] {
            if let Some(l) = labels {
                let l = rows.map_or_else(|| l.clone(), |idx| l.select(idx));
                write_labels(&l, &run.output(&format!("{tag}{stem}.txt")))?;
            }
        }
        if let Some(idx) = rows {
            write_indices(&run.output(&format!("{tag}indices.txt")), idx)?;
        }
        Ok(())
    };
    if test_fraction > 0.0 {
        let (train, test) = train_test_split(store.len(), test_fraction, seed)?;
        write_set(run, "train", Some(&train))?;
        write_set(run, "test", Some(&test))?;
    } else {
        write_set(run, "", None)?;
    }
    Ok(())
}

/// Numeric CSV with a header row. The label column, when present, holds
/// integer ground-truth classes.
fn read_csv(
    run: &mut Run,
    path: &Path,
    label_column: Option<&str>,
    classes: Option<usize>,
    seed: u64,
) -> CmdResult<(EmbeddingStore, Option<LabelVector>)> {
    let mut reader = csv::Reader::from_path(run.input(path))
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers().context("reading CSV header")?.clone();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| usage(format!("label column {name:?} not in CSV header")))?,
        ),
        None => headers.iter().position(|h| h.trim() == "label"),
    };
    let dim = headers.len() - usize::from(label_idx.is_some());
    if dim == 0 {
        return Err(usage("CSV has no feature columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), row + 2))?;
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if Some(col) == label_idx {
                labels.push(field.parse::<usize>().with_context(|| {
                    format!("{}: row {}: bad label {field:?}", path.display(), row + 2)
                })?);
            } else {
                data.push(field.parse::<f32>().with_context(|| {
                    format!(
                        "{}: row {}, column {}: bad value {field:?}",
                        path.display(),
                        row + 2,
                        col + 1
                    )
                })?);
            }
        }
    }
    let n = data.len() / dim;
    let classes = match (classes, label_idx) {
        (Some(c), _) => c,
        (None, Some(_)) => labels.iter().max().map_or(1, |m| m + 1),
        (None, None) => {
            return Err(usage(
                "missing required flag --classes (the CSV has no label column)",
            ))
        }
    };
    let manifest = DatasetManifest {
        name: String::new(),
        num_examples: n,
        embed_dim: dim,
        num_classes: classes,
        normalized: false,
        seed,
    };
    let store = EmbeddingStore::new(manifest, data)?;
    let truth = match label_idx {
        Some(_) => Some(LabelVector::new(labels, classes, LabelKind::GroundTruth)?),
        None => None,
    };
    Ok((store, truth))
}

fn knn(r: &mut Resolver, run: &mut Run, a: &KnnArgs) -> CmdResult {
    let path = r.required::<PathBuf>("embeddings", a.embeddings.clone())?;
    let k = r.value("k", a.k, DEFAULT_K)?;
    let store = load_store(run, &path)?;
    let table = build_knn(&store, k, false)?;
    table.write_csv(&run.output("knn.csv"))?;
    Ok(())
}

fn cluster(r: &mut Resolver, run: &mut Run, seed: u64, a: &ClusterCmdArgs) -> CmdResult {
    let path = r.required::<PathBuf>("embeddings", a.embeddings.clone())?;
    let knn_path = r.optional::<PathBuf>("knn", a.knn.clone())?;
    let store = load_store(run, &path)?;
    let s = cluster_settings(r, &a.cluster, seed, store.num_classes())?;
    let neighbors = match knn_path {
        Some(p) => NeighborTable::read_csv(&run.input(&p), &store)?,
        None => {
            let k = r.value("k", a.k, DEFAULT_K)?;
            build_knn(&store, k, false)?
        }
    };
    let (ensemble, report) =
        train_ensemble(&store, &neighbors, s.classes, s.heads, s.options, &s.train)?;
    for w in &report.collapse_warnings {
        warn!(
            "head {} collapsed to a single cluster at epoch {}",
            w.head, w.epoch
        );
    }
    let pseudo = assign_pseudo_labels(&ensemble, &store)?;
    write_labels(pseudo.as_labels(), &run.output("pseudo_labels.txt"))?;
    write_checkpoint(&ensemble, &run.output("heads.ckpt"))?;
    let mut curve = String::from("epoch,loss\n");
    for (epoch, loss) in report.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{loss}\n", epoch + 1));
    }
    let p = run.output("loss_curve.csv");
    fs::write(&p, curve).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

fn metrics(r: &mut Resolver, run: &mut Run, a: &MetricsArgs) -> CmdResult {
    let pred_path = r.required::<PathBuf>("pred", a.pred.clone())?;
    let truth_path = r.required::<PathBuf>("truth", a.truth.clone())?;
    let (pred, pred_top) = max_label(&run.input(&pred_path), LabelKind::Pseudo)?;
    let (truth, truth_top) = max_label(&run.input(&truth_path), LabelKind::GroundTruth)?;
    let c = pred_top.max(truth_top).max(1);
    let pred = LabelVector::new(pred, c, LabelKind::Pseudo)?;
    let truth = LabelVector::new(truth, c, LabelKind::GroundTruth)?;
    let q = ClusterQuality::compute(&pred, &truth)?;
    let row = q.csv_row();
    let p = run.output("metrics.csv");
    fs::write(&p, format!("{}\n{row}\n", ClusterQuality::CSV_HEADER))
        .with_context(|| format!("writing {}", p.display()))?;
    let mut per_class = String::from("class,error_rate\n");
    for (c, e) in per_class_error(&pred, &truth)?.iter().enumerate() {
        per_class.push_str(&format!("{c},{e}\n"));
    }
    let p = run.output("per_class_error.csv");
    fs::write(&p, per_class).with_context(|| format!("writing {}", p.display()))?;
    println!("{}\n{row}", ClusterQuality::CSV_HEADER);
    Ok(())
}

fn dynamics(r: &mut Resolver, run: &mut Run, seed: u64, a: &DynamicsArgs) -> CmdResult {
    let path = r.required::<PathBuf>("embeddings", a.embeddings.clone())?;
    let labels_path = r.required::<PathBuf>("pseudo_labels", a.pseudo_labels.clone())?;
    let indices_path = r.optional::<PathBuf>("indices", a.indices.clone())?;
    let cfg = probe_config(r, &a.probe, seed)?;
    let early = r.value(
        "early_epochs",
        a.early_epochs,
        DEFAULT_EL2N_EPOCHS.min(cfg.epochs),
    )?;
    let store = load_store(run, &path)?;
    let classes = r.value("classes", a.classes, store.num_classes())?;
    let pseudo = load_pseudo(run, &labels_path, classes)?;
    let subset = match indices_path {
        Some(p) => read_indices(run, &p)?,
        None => (0..store.len()).collect(),
    };
    let (_, rec) = train_probe_with_dynamics(&store, pseudo.as_labels(), &subset, &cfg)?;
    write_dynamics(&rec, Some(classes), &run.output("dynamics.bin"))?;
    for metric in [Metric::Aum, Metric::Forgetting, Metric::El2n] {
        let scores = scores_for(&rec, metric, early)?;
        write_scores(&scores, &run.output(&format!("scores_{metric}.csv")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectReport {
    method: String,
    n: usize,
    alpha: f64,
    beta: f64,
    k: usize,
    metric: Option<Metric>,
    seed: u64,
    max_hard_prune_rate: f64,
    searched_beta: bool,
}

fn select(r: &mut Resolver, run: &mut Run, seed: u64, a: &SelectArgs) -> CmdResult {
    let method = r.value("method", a.method, Method::Elfs)?;
    let alpha = r.required::<f64>("prune_rate", a.prune_rate)?;
    let metric = r.value("metric", a.metric, Metric::Aum)?;
    let search = r.switch("search_beta", a.search_beta)?;
    let scores_path = r.optional::<PathBuf>("scores", a.scores.clone())?;
    let embeddings = r.optional::<PathBuf>("embeddings", a.embeddings.clone())?;
    let pseudo_path = r.optional::<PathBuf>("pseudo_labels", a.pseudo_labels.clone())?;

    let need = |what: Option<PathBuf>, flag: &str, why: &str| {
        what.ok_or_else(|| usage(format!("missing required flag --{flag} ({why})")))
    };

    if method == Method::Random {
        let n = match (&scores_path, &embeddings) {
            (Some(p), _) => read_scores(&run.input(p), metric)?.len(),
            (None, Some(p)) => read_embeddings(&run.input(p))?.len(),
            (None, None) => {
                return Err(usage(
                    "missing required flag --embeddings (or --scores) to size the random plan",
                ))
            }
        };
        let plan = random_coreset(n, alpha, seed)?;
        return finish_select(run, plan, method, seed, false);
    }

    let beta_flag = r.optional::<f64>("hard_prune_rate", a.hard_prune_rate)?;
    if !search && beta_flag.is_none() {
        return Err(usage(
            "missing required flag --hard-prune-rate (or --search-beta)",
        ));
    }
    if search && beta_flag.is_some() {
        return Err(usage(
            "--hard-prune-rate and --search-beta are mutually exclusive",
        ));
    }

    let cfg = probe_config(r, &a.probe, seed)?;
    let needs_training = search || scores_path.is_none();
    let mut inputs = None;
    if needs_training {
        let why = if search {
            "needed by --search-beta"
        } else {
            "needed to compute scores in-line"
        };
        let store = load_store(run, &need(embeddings, "embeddings", why)?)?;
        let classes = r.value("classes", a.classes, store.num_classes())?;
        let pseudo = load_pseudo(run, &need(pseudo_path, "pseudo-labels", why)?, classes)?;
        inputs = Some((store, pseudo));
    }

    let scores: ScoreVector = match &scores_path {
        Some(p) => read_scores(&run.input(p), metric)?,
        None => {
            let (store, pseudo) = inputs.as_ref().expect("loaded above");
            let early = r.value(
                "early_epochs",
                a.early_epochs,
                DEFAULT_EL2N_EPOCHS.min(cfg.epochs),
            )?;
            let all: Vec<usize> = (0..store.len()).collect();
            let (_, rec) = train_probe_with_dynamics(store, pseudo.as_labels(), &all, &cfg)?;
            let s = scores_for(&rec, metric, early)?;
            write_scores(&s, &run.output(&format!("scores_{metric}.csv")))?;
            s
        }
    };
    if let Some((store, _)) = &inputs {
        if store.len() != scores.len() {
            return Err(CliError::Runtime(anyhow!(
                "score file has {} rows but the embeddings have {}",
                scores.len(),
                store.len()
            )));
        }
    }

    let beta = if search {
        let step = r.value("beta_step", a.beta_step, DEFAULT_BETA_STEP)?;
        let (store, pseudo) = inputs.as_ref().expect("loaded above");
        let result = beta_grid_search(store, pseudo, &scores, alpha, step, &cfg, seed)?;
        write_beta_table(&result.table, &run.output("beta_table.csv"))?;
        info!("selected beta {}", result.best_beta);
        result.best_beta
    } else {
        beta_flag.expect("checked above")
    };

    let plan = match method {
        Method::Ccs => {
            let strata = r.value("strata", a.strata, DEFAULT_NUM_STRATA)?;
            ccs_coreset(&scores, alpha, beta, strata, seed)?
        }
        _ => double_end_prune(&scores, alpha, beta)?,
    };
    finish_select(run, plan, method, seed, search)
}

fn finish_select(
    run: &mut Run,
    plan: CoresetPlan,
    method: Method,
    seed: u64,
    searched: bool,
) -> CmdResult {
    let plan = CoresetPlan {
        seed: Some(seed),
        ..plan
    };
    write_plan(&plan, &run.output("plan.txt"))?;
    let report = SelectReport {
        method: method.to_string(),
        n: plan.n,
        alpha: plan.prune_rate,
        beta: plan.hard_prune_rate,
        k: plan.budget,
        metric: plan.metric,
        seed,
        max_hard_prune_rate: max_hard_prune_rate(plan.n, plan.budget),
        searched_beta: searched,
    };
    write_json(&run.output("select_report.json"), &report)
}

fn eval(r: &mut Resolver, run: &mut Run, seed: u64, a: &EvalArgs) -> CmdResult {
    let path = r.required::<PathBuf>("embeddings", a.embeddings.clone())?;
    let truth_path = r.required::<PathBuf>("truth", a.truth.clone())?;
    let plan_path = r.required::<PathBuf>("plan", a.plan.clone())?;
    let test_indices = r.optional::<PathBuf>("test_indices", a.test_indices.clone())?;
    let test_embeddings = r.optional::<PathBuf>("test_embeddings", a.test_embeddings.clone())?;
    let test_truth = r.optional::<PathBuf>("test_truth", a.test_truth.clone())?;
    let cfg = probe_config(r, &a.probe, seed)?;

    let store = load_store(run, &path)?;
    let plan = read_plan(&run.input(&plan_path))?;
    if plan.n != store.len() {
        return Err(CliError::Runtime(anyhow!(
            "plan was built for N = {} but the embeddings have {} rows",
            plan.n,
            store.len()
        )));
    }
    let classes = Some(store.num_classes());
    let truth = load_labels(run, &truth_path, classes, LabelKind::GroundTruth)?;

    let acc = match (test_indices, test_embeddings) {
        (Some(_), Some(_)) => {
            return Err(usage(
                "--test-indices and --test-embeddings are mutually exclusive",
            ))
        }
        (None, None) => {
            return Err(usage(
                "missing required flag --test-indices (or --test-embeddings)",
            ))
        }
        (Some(p), None) => {
            let idx = read_indices(run, &p)?;
            evaluate_coreset(&store, &plan, &truth, TestSplit::Indices(&idx), &cfg)?
        }
        (None, Some(p)) => {
            let tp = test_truth.ok_or_else(|| {
                usage("missing required flag --test-truth (needed by --test-embeddings)")
            })?;
            let test_store = load_store(run, &p)?;
            let test_truth = load_labels(run, &tp, classes, LabelKind::GroundTruth)?;
            let split = TestSplit::External {
                store: &test_store,
                truth: &test_truth,
            };
            evaluate_coreset(&store, &plan, &truth, split, &cfg)?
        }
    };
    let text = format!(
        "alpha,beta,k,test_acc\n{},{},{},{acc}\n",
        plan.prune_rate, plan.hard_prune_rate, plan.budget
    );
    let p = run.output("eval.csv");
    fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
    print!("{text}");
    Ok(())
}

fn compare(r: &mut Resolver, run: &mut Run, seed: u64, a: &CompareArgs) -> CmdResult {
    let path = r.required::<PathBuf>("embeddings", a.embeddings.clone())?;
    let truth_path = r.required::<PathBuf>("truth", a.truth.clone())?;
    let eval_path = r.optional::<PathBuf>("eval_truth", a.eval_truth.clone())?;
    let d = CompareConfig::default();
    let methods = r.value("methods", a.methods.clone(), List(d.methods.clone()))?;
    let prune_rates = r.value(
        "prune_rates",
        a.prune_rates.clone(),
        List(d.prune_rates.clone()),
    )?;
    let seeds = r.value("seeds", a.seeds.clone(), List(vec![seed]))?;
    if methods.0.is_empty() || prune_rates.0.is_empty() || seeds.0.is_empty() {
        return Err(usage(
            "--methods, --prune-rates and --seeds must be non-empty",
        ));
    }

    let store = read_embeddings(&run.input(&path))?;
    let s = cluster_settings(r, &a.cluster, seed, store.num_classes())?;
    let config = CompareConfig {
        methods: methods.0,
        prune_rates: prune_rates.0,
        seeds: seeds.0,
        test_fraction: r.value("test_fraction", a.test_fraction, d.test_fraction)?,
        knn_k: r.value("k", a.k, d.knn_k)?,
        num_heads: s.heads,
        ensemble: s.options,
        cluster: s.train,
        probe: probe_config(r, &a.probe, seed)?,
        metric: r.value("metric", a.metric, d.metric)?,
        early_epochs: r.value("early_epochs", a.early_epochs, d.early_epochs)?,
        beta_step: r.value("beta_step", a.beta_step, d.beta_step)?,
        num_strata: r.value("strata", a.strata, d.num_strata)?,
    };
    let classes = Some(store.num_classes());
    let truth = load_labels(run, &truth_path, classes, LabelKind::GroundTruth)?;
    let eval_truth = match eval_path {
        Some(p) => load_labels(run, &p, classes, LabelKind::GroundTruth)?,
        None => truth.clone(),
    };
    let report = compare_methods_with_eval_labels(&store, &truth, &eval_truth, &config)?;
    for (stage, secs) in &report.stage_seconds {
        info!("stage {stage}: {secs:.2} s");
    }
    for cell in &report.cells {
        if let Some(e) = &cell.error {
            warn!(
                "{} alpha={} seed={}: {e}",
                cell.method, cell.prune_rate, cell.seed
            );
        }
    }
    let report_path = run.output("report.csv");
    write_report(&report, &report_path)?;
    write_cells(&report, &run.output("cells.csv"))?;
    let text = fs::read_to_string(&report_path)
        .with_context(|| format!("reading {}", report_path.display()))?;
    std::io::stdout()
        .write_all(text.as_bytes())
        .context("writing report to stdout")?;
    Ok(())
}

fn histogram(r: &mut Resolver, run: &mut Run, a: &HistogramArgs) -> CmdResult {
    let scores_path = r.required::<PathBuf>("scores", a.scores.clone())?;
    let plan_path = r.required::<PathBuf>("plan", a.plan.clone())?;
    let metric = r.value("metric", a.metric, Metric::Aum)?;
    let bins = r.value("bins", a.bins, 20usize)?;
    let scores = read_scores(&run.input(&scores_path), metric)?;
    let plan = read_plan(&run.input(&plan_path))?;
    let hist = score_histogram(&scores, &plan, bins)?;
    write_histogram(&hist, &run.output("histogram.csv"))?;
    Ok(())
}
