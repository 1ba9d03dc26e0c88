//! Synthetic benchmarks and end-to-end experiments. Everything here may read
//! ground-truth labels; the selection path itself never does.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    l2_normalize, DatasetManifest, EmbeddingStore, LabelKind, LabelVector, Metric, PseudoLabels,
    ScoreVector,
};
use crate::error::{Error, Result};
use crate::knn::{build_knn, DEFAULT_K};
use crate::metrics::{ari, matched_accuracy, nmi};
use crate::probe::{
    probe_accuracy, scores_for, train_probe, train_probe_with_dynamics, ProbeConfig,
    DEFAULT_EL2N_EPOCHS,
};
use crate::selection::{
    beta_grid, beta_grid_search, ccs_coreset, double_end_prune, random_coreset, BetaCell,
    CoresetPlan, DEFAULT_BETA_STEP, DEFAULT_NUM_STRATA,
};
use crate::temi::{
    assign_pseudo_labels, train_ensemble, EnsembleOptions, TrainConfig, DEFAULT_NUM_HEADS,
};

/// Gaussian clusters with unit-variance components.
///
/// Centers sit on scaled random orthonormal directions when `C ≤ d` (every
/// pair exactly `separation` apart) and on a random line otherwise. Classes
/// are balanced. Exactly `round(label_noise · N)` labels are moved to a
/// uniformly chosen different class; the points themselves do not depend on
/// `label_noise`, so the same seed with noise 0 gives the clean labels.
pub fn make_blobs(
    n: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
    label_noise: f64,
    seed: u64,
) -> Result<(EmbeddingStore, LabelVector)> {
    if num_classes < 2 || num_classes > n {
        return Err(Error::InvalidParameter(format!(
            "C = {num_classes} must be in [2, N = {n}]"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("d must be positive".into()));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "separation {separation} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(Error::InvalidParameter(format!(
            "label noise {label_noise} must be in [0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(dim, num_classes, separation, &mut rng);

    let mut clean: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    clean.shuffle(&mut rng);

    let mut data = Vec::with_capacity(n * dim);
    for &label in &clean {
        let c = &centers[label * dim..(label + 1) * dim];
        for &mu in c {
            let z: f64 = rng.sample(StandardNormal);
            data.push((mu + z) as f32);
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let flips = (label_noise * n as f64).round() as usize;
    let mut labels = clean;
    for i in index::sample(&mut noise_rng, n, flips) {
        let shift = noise_rng.random_range(1..num_classes);
        labels[i] = (labels[i] + shift) % num_classes;
    }

    let manifest = DatasetManifest {
        name: "blobs".into(),
        num_examples: n,
        embed_dim: dim,
        num_classes,
        normalized: false,
        seed,
    };
    let store = EmbeddingStore::new(manifest, data)?;
    let truth = LabelVector::new(labels, num_classes, LabelKind::GroundTruth)?;
    Ok((store, truth))
}

fn blob_centers(dim: usize, c: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut centers = Vec::with_capacity(c * dim);
    if c <= dim {
        // Gram-Schmidt on Gaussian draws; retry the rare near-dependent draw
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
        while basis.len() < c {
            let mut v = gaussian(rng);
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let scale = separation / std::f64::consts::SQRT_2;
        for b in basis {
            centers.extend(b.into_iter().map(|x| x * scale));
        }
    } else {
        let mut u = gaussian(rng);
        let norm = u
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|x| *x /= norm);
        for i in 0..c {
            centers.extend(u.iter().map(|x| x * separation * i as f64));
        }
    }
    centers
}

/// Signed distance gap to the nearest wrong class centroid: `min_{c≠y} ‖x − μ_c‖ − ‖x − μ_y‖`,
/// with centroids estimated from `truth`.
pub fn centroid_margins(store: &EmbeddingStore, truth: &LabelVector) -> Result<Vec<f64>> {
    if truth.len() != store.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: store.len(),
        });
    }
    let (c, d) = (truth.num_classes(), store.dim());
    let mut centroids = vec![0.0; c * d];
    let mut counts = vec![0usize; c];
    for (x, &y) in store.rows().zip(truth.labels()) {
        counts[y] += 1;
        for (m, &v) in centroids[y * d..(y + 1) * d].iter_mut().zip(x) {
            *m += v as f64;
        }
    }
    for (y, &n) in counts.iter().enumerate() {
        centroids[y * d..(y + 1) * d]
            .iter_mut()
            .for_each(|m| *m /= n.max(1) as f64);
    }
    let dist = |x: &[f32], y: usize| -> f64 {
        centroids[y * d..(y + 1) * d]
            .iter()
            .zip(x)
            .map(|(m, &v)| (v as f64 - m) * (v as f64 - m))
            .sum::<f64>()
            .sqrt()
    };
    Ok(store
        .rows()
        .zip(truth.labels())
        .map(|(x, &y)| {
            let other = (0..c)
                .filter(|&k| k != y && counts[k] > 0)
                .map(|k| dist(x, k))
                .fold(f64::INFINITY, f64::min);
            other - dist(x, y)
        })
        .collect())
}

/// Pseudo-labels equal to `truth` except on the `round(fraction · N)`
/// smallest-margin examples, which move to a uniformly chosen other class.
pub fn corrupt_hardest_labels(
    store: &EmbeddingStore,
    truth: &LabelVector,
    fraction: f64,
    seed: u64,
) -> Result<PseudoLabels> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} must be in [0, 1]"
        )));
    }
    let margins = centroid_margins(store, truth)?;
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
    let flips = (fraction * margins.len() as f64).round() as usize;
    let c = truth.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = truth.labels().to_vec();
    for &i in &order[..flips] {
        labels[i] = (labels[i] + rng.random_range(1..c)) % c;
    }
    PseudoLabels::try_from(LabelVector::new(labels, c, LabelKind::Pseudo)?)
}

/// Seeded split of `0..n` into sorted `(train, test)` with `round(n·f)` test rows.
pub fn train_test_split(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} must be in [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let t = (n as f64 * test_fraction).round() as usize;
    let mut test = order[..t].to_vec();
    let mut train = order[t..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Where coreset accuracy is measured.
#[derive(Debug, Clone, Copy)]
pub enum TestSplit<'a> {
    /// Rows of the training store; must not intersect the plan.
    Indices(&'a [usize]),
    /// A separate held-out store with its own labels.
    External {
        store: &'a EmbeddingStore,
        truth: &'a LabelVector,
    },
}

/// Trains a probe on the planned rows with ground-truth labels and returns
/// test accuracy.
pub fn evaluate_coreset(
    store: &EmbeddingStore,
    plan: &CoresetPlan,
    truth: &LabelVector,
    test: TestSplit<'_>,
    probe_config: &ProbeConfig,
) -> Result<f64> {
    if truth.kind() != LabelKind::GroundTruth {
        return Err(Error::LabelKind {
            expected: LabelKind::GroundTruth.as_str(),
            found: truth.kind().as_str(),
        });
    }
    if let Some(&bad) = plan.selected.iter().find(|&&i| i >= store.len()) {
        return Err(Error::InvalidParameter(format!(
            "plan index {bad} out of range for N = {}",
            store.len()
        )));
    }
    if let TestSplit::Indices(idx) = test {
        let mut in_plan = vec![false; store.len()];
        plan.selected.iter().for_each(|&i| in_plan[i] = true);
        if let Some(&i) = idx.iter().find(|&&i| i < store.len() && in_plan[i]) {
            return Err(Error::TestOverlap { index: i });
        }
    }
    let model = train_probe(store, truth, &plan.selected, probe_config)?;
    match test {
        TestSplit::Indices(idx) => {
            if idx.is_empty() {
                return Err(Error::EmptySubset);
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= store.len()) {
                return Err(Error::InvalidParameter(format!(
                    "test index {bad} out of range for N = {}",
                    store.len()
                )));
            }
            Ok(probe_accuracy(&model, store, truth, idx))
        }
        TestSplit::External {
            store: test_store,
            truth: test_truth,
        } => {
            if test_store.dim() != store.dim() {
                return Err(Error::DimensionMismatch {
                    expected: store.dim(),
                    found: test_store.dim(),
                });
            }
            if test_store.is_empty() {
                return Err(Error::EmptySubset);
            }
            let all: Vec<usize> = (0..test_store.len()).collect();
            Ok(probe_accuracy(&model, test_store, test_truth, &all))
        }
    }
}

/// Hard-prune rate chosen with ground-truth labels: every feasible β is
/// scored by held-out test accuracy of a probe trained on its plan.
pub fn oracle_beta_search(
    store: &EmbeddingStore,
    truth: &LabelVector,
    scores: &ScoreVector,
    prune_rate: f64,
    step: f64,
    test: TestSplit<'_>,
    probe_config: &ProbeConfig,
) -> Result<(f64, Vec<BetaCell>)> {
    let grid = beta_grid(store.len(), prune_rate, step)?;
    let table: Vec<BetaCell> = grid
        .par_iter()
        .map(|&beta| -> Result<BetaCell> {
            let plan = double_end_prune(scores, prune_rate, beta)?;
            let val_acc = match evaluate_coreset(store, &plan, truth, test, probe_config) {
                Ok(a) => Some(a),
                Err(Error::NonFiniteLoss { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(BetaCell { beta, val_acc })
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, f64)> = None;
    for cell in &table {
        if let Some(acc) = cell.val_acc {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((cell.beta, acc));
            }
        }
    }
    let (beta, _) = best.ok_or(Error::NoFeasibleBeta)?;
    Ok((beta, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Elfs,
    Random,
    Ccs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Elfs => "elfs",
            Method::Random => "random",
            Method::Ccs => "ccs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "elfs" => Ok(Method::Elfs),
            "random" => Ok(Method::Random),
            "ccs" => Ok(Method::Ccs),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
    pub prune_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub knn_k: usize,
    pub num_heads: usize,
    pub ensemble: EnsembleOptions,
    pub cluster: TrainConfig,
    pub probe: ProbeConfig,
    pub metric: Metric,
    pub early_epochs: usize,
    pub beta_step: f64,
    pub num_strata: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            methods: vec![Method::Elfs, Method::Random, Method::Ccs],
            prune_rates: vec![0.3, 0.5, 0.7, 0.8, 0.9],
            seeds: vec![0],
            test_fraction: 0.2,
            knn_k: DEFAULT_K,
            num_heads: DEFAULT_NUM_HEADS,
            ensemble: EnsembleOptions::default(),
            cluster: TrainConfig::default(),
            probe: ProbeConfig::default(),
            metric: Metric::Aum,
            early_epochs: DEFAULT_EL2N_EPOCHS,
            beta_step: DEFAULT_BETA_STEP,
            num_strata: DEFAULT_NUM_STRATA,
        }
    }
}

/// One (method, α, seed) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub prune_rate: f64,
    pub seed: u64,
    pub hard_prune_rate: Option<f64>,
    pub budget: Option<usize>,
    pub test_acc: Option<f64>,
    pub pseudo_acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub error: Option<String>,
}

/// Per (method, α) aggregate over seeds; absent values are empty CSV fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub prune_rate: f64,
    pub hard_prune_rate: Option<f64>,
    pub budget: Option<usize>,
    pub test_acc: Option<f64>,
    pub test_acc_std: Option<f64>,
    pub pseudo_acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellResult>,
    /// Wall-clock seconds per stage, summed over seeds.
    pub stage_seconds: Vec<(String, f64)>,
}

pub const REPORT_HEADER: &str = "method,alpha,beta,k,test_acc,test_acc_std,pseudo_acc,nmi,ari";

struct SeedOutcome {
    cells: Vec<CellResult>,
    timings: [f64; 4],
}

const STAGES: [&str; 4] = ["cluster", "dynamics", "select", "evaluate"];

struct Pseudo {
    labels: PseudoLabels,
    scores: ScoreVector,
    pseudo_acc: f64,
    nmi: f64,
    ari: f64,
}

/// Runs every requested method at every prune rate for every seed.
///
/// Each seed holds out a test split, then on the training part runs
/// clustering, dynamics and selection. Coresets are scored by
/// [`evaluate_coreset`] against the held-out part.
pub fn compare_methods(
    store: &EmbeddingStore,
    truth: &LabelVector,
    config: &CompareConfig,
) -> Result<ExperimentReport> {
    compare_methods_with_eval_labels(store, truth, truth, config)
}

/// [`compare_methods`] where coresets are trained with `train_truth` (for
/// example labels with injected noise) while test accuracy and pseudo-label
/// quality are measured against `eval_truth`.
pub fn compare_methods_with_eval_labels(
    store: &EmbeddingStore,
    train_truth: &LabelVector,
    eval_truth: &LabelVector,
    config: &CompareConfig,
) -> Result<ExperimentReport> {
    if config.methods.is_empty() || config.prune_rates.is_empty() || config.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one method, prune rate and seed".into(),
        ));
    }
    for t in [train_truth, eval_truth] {
        if t.len() != store.len() {
            return Err(Error::LengthMismatch {
                left: t.len(),
                right: store.len(),
            });
        }
    }
    if train_truth.num_classes() != eval_truth.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "label sets disagree on C: {} vs {}",
            train_truth.num_classes(),
            eval_truth.num_classes()
        )));
    }
    let store = if store.is_normalized() {
        store.clone()
    } else {
        l2_normalize(store)?
    };

    let outcomes: Vec<SeedOutcome> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&store, train_truth, eval_truth, config, seed))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut totals = [0.0; 4];
    for o in outcomes {
        for (t, s) in totals.iter_mut().zip(o.timings) {
            *t += s;
        }
        cells.extend(o.cells);
    }

    let mut rows = Vec::new();
    for &method in &config.methods {
        for &alpha in &config.prune_rates {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.method == method && c.prune_rate == alpha)
                .collect();
            rows.push(aggregate(method, alpha, &group));
        }
    }
    Ok(ExperimentReport {
        rows,
        cells,
        stage_seconds: STAGES
            .iter()
            .zip(totals)
            .map(|(s, t)| (s.to_string(), t))
            .collect(),
    })
}

fn run_seed(
    store: &EmbeddingStore,
    train_labels: &LabelVector,
    eval_labels: &LabelVector,
    config: &CompareConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let mut timings = [0.0; 4];
    let (train_idx, test_idx) = train_test_split(store.len(), config.test_fraction, seed)?;
    let train_store = store.select_rows(&train_idx)?;
    let test_store = store.select_rows(&test_idx)?;
    let train_truth = train_labels.select(&train_idx);
    let quality_truth = eval_labels.select(&train_idx);
    let test_truth = eval_labels.select(&test_idx);
    let test = TestSplit::External {
        store: &test_store,
        truth: &test_truth,
    };
    let mut probe = config.probe;
    probe.seed = seed;

    let needs_pseudo = config.methods.iter().any(|m| *m != Method::Random);
    let pseudo = if needs_pseudo {
        Some(pseudo_stage(
            &train_store,
            &quality_truth,
            config,
            seed,
            &mut timings,
        ))
    } else {
        None
    };

    let mut cells = Vec::new();
    for &alpha in &config.prune_rates {
        let mut searched: Option<std::result::Result<f64, String>> = None;
        for &method in &config.methods {
            let mut cell = CellResult {
                method,
                prune_rate: alpha,
                seed,
                hard_prune_rate: None,
                budget: None,
                test_acc: None,
                pseudo_acc: None,
                nmi: None,
                ari: None,
                error: None,
            };
            let t0 = Instant::now();
            let plan: Result<CoresetPlan> = match method {
                Method::Random => random_coreset(train_store.len(), alpha, seed),
                Method::Elfs | Method::Ccs => match &pseudo {
                    Some(Ok(p)) => {
                        cell.pseudo_acc = Some(p.pseudo_acc);
                        cell.nmi = Some(p.nmi);
                        cell.ari = Some(p.ari);
                        let beta = searched
                            .get_or_insert_with(|| {
                                beta_grid_search(
                                    &train_store,
                                    &p.labels,
                                    &p.scores,
                                    alpha,
                                    config.beta_step,
                                    &probe,
                                    seed,
                                )
                                .map(|s| s.best_beta)
                                .map_err(|e| format!("beta search: {e}"))
                            })
                            .clone();
                        beta.map_err(Error::InvalidParameter)
                            .and_then(|beta| match method {
                                Method::Elfs => double_end_prune(&p.scores, alpha, beta),
                                _ => ccs_coreset(&p.scores, alpha, beta, config.num_strata, seed),
                            })
                    }
                    Some(Err(e)) => Err(Error::InvalidParameter(e.clone())),
                    None => unreachable!("pseudo stage runs whenever a method needs it"),
                },
            };
            timings[2] += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            match plan.and_then(|plan| {
                let acc = evaluate_coreset(&train_store, &plan, &train_truth, test, &probe)?;
                Ok((plan, acc))
            }) {
                Ok((plan, acc)) => {
                    cell.hard_prune_rate = Some(plan.hard_prune_rate);
                    cell.budget = Some(plan.budget);
                    cell.test_acc = Some(acc);
                }
                Err(e) => {
                    log::warn!("{method} alpha={alpha} seed={seed}: {e}");
                    cell.error = Some(e.to_string());
                }
            }
            timings[3] += t1.elapsed().as_secs_f64();
            cells.push(cell);
        }
    }
    Ok(SeedOutcome { cells, timings })
}

fn pseudo_stage(
    store: &EmbeddingStore,
    truth: &LabelVector,
    config: &CompareConfig,
    seed: u64,
    timings: &mut [f64; 4],
) -> std::result::Result<Pseudo, String> {
    let t0 = Instant::now();
    let run = || -> Result<PseudoLabels> {
        let k = config.knn_k.min(store.len() - 1);
        let neighbors = build_knn(store, k, false)?;
        let cluster = TrainConfig {
            seed,
            ..config.cluster
        };
        let (ensemble, _) = train_ensemble(
            store,
            &neighbors,
            truth.num_classes(),
            config.num_heads,
            config.ensemble,
            &cluster,
        )?;
        assign_pseudo_labels(&ensemble, store)
    };
    let labels = run().map_err(|e| format!("clustering: {e}"))?;
    timings[0] += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut probe = config.probe;
    probe.seed = seed;
    let all: Vec<usize> = (0..store.len()).collect();
    let scores = train_probe_with_dynamics(store, labels.as_labels(), &all, &probe)
        .and_then(|(_, rec)| scores_for(&rec, config.metric, config.early_epochs))
        .map_err(|e| format!("dynamics: {e}"))?;
    timings[1] += t1.elapsed().as_secs_f64();

    let quality = || -> Result<(f64, f64, f64)> {
        Ok((
            matched_accuracy(labels.as_labels(), truth)?,
            nmi(labels.as_labels(), truth)?,
            ari(labels.as_labels(), truth)?,
        ))
    };
    let (pseudo_acc, nmi, ari) = quality().map_err(|e| format!("metrics: {e}"))?;
    Ok(Pseudo {
        labels,
        scores,
        pseudo_acc,
        nmi,
        ari,
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation; zero for a single value.
fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

fn aggregate(method: Method, alpha: f64, group: &[&CellResult]) -> ReportRow {
    let collect = |f: fn(&CellResult) -> Option<f64>| -> Vec<f64> {
        group.iter().filter_map(|c| f(c)).collect()
    };
    let accs = collect(|c| c.test_acc);
    ReportRow {
        method,
        prune_rate: alpha,
        hard_prune_rate: mean(&collect(|c| c.hard_prune_rate)),
        budget: group.iter().find_map(|c| c.budget),
        test_acc: mean(&accs),
        test_acc_std: std_dev(&accs),
        pseudo_acc: mean(&collect(|c| c.pseudo_acc)),
        nmi: mean(&collect(|c| c.nmi)),
        ari: mean(&collect(|c| c.ari)),
    }
}

fn opt_field<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.prune_rate,
            opt_field(r.hard_prune_rate),
            opt_field(r.budget),
            opt_field(r.test_acc),
            opt_field(r.test_acc_std),
            opt_field(r.pseudo_acc),
            opt_field(r.nmi),
            opt_field(r.ari),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-seed cells with the seed and any failure message.
pub fn write_cells(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut out = String::from("method,alpha,seed,beta,k,test_acc,pseudo_acc,nmi,ari,error\n");
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.method,
            c.prune_rate,
            c.seed,
            opt_field(c.hard_prune_rate),
            opt_field(c.budget),
            opt_field(c.test_acc),
            opt_field(c.pseudo_acc),
            opt_field(c.nmi),
            opt_field(c.ari),
            c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the aggregate rows written by [`write_report`].
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == REPORT_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {REPORT_HEADER:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 9 fields, got {}", f.len()),
            ));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| Error::parse(path, lineno, format!("bad number {s:?}")))
        };
        let method = f[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad method {:?}", f[0])))?;
        let prune_rate = num(f[1])?.ok_or_else(|| Error::parse(path, lineno, "missing alpha"))?;
        let budget = if f[3].is_empty() {
            None
        } else {
            Some(
                f[3].parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad k {:?}", f[3])))?,
            )
        };
        rows.push(ReportRow {
            method,
            prune_rate,
            hard_prune_rate: num(f[2])?,
            budget,
            test_acc: num(f[4])?,
            test_acc_std: num(f[5])?,
            pseudo_acc: num(f[6])?,
            nmi: num(f[7])?,
            ari: num(f[8])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count_all: usize,
    pub count_selected: usize,
}

/// Equal-width histogram of hardness over `[min, max]` for all examples and
/// for the planned subset. The maximum falls in the last bin.
pub fn score_histogram(
    scores: &ScoreVector,
    plan: &CoresetPlan,
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be at least 1".into()));
    }
    let h = scores.hardness();
    if let Some(&bad) = plan.selected.iter().find(|&&i| i >= h.len()) {
        return Err(Error::InvalidParameter(format!(
            "plan index {bad} out of range for N = {}",
            h.len()
        )));
    }
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if h.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let bin_of = |x: f64| -> usize {
        if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + width * b as f64,
            hi: if b + 1 == bins {
                hi
            } else {
                lo + width * (b + 1) as f64
            },
            count_all: 0,
            count_selected: 0,
        })
        .collect();
    for &x in h {
        out[bin_of(x)].count_all += 1;
    }
    for &i in &plan.selected {
        out[bin_of(h[i])].count_selected += 1;
    }
    Ok(out)
}

pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count_all,count_selected";

pub fn write_histogram(bins: &[HistogramBin], path: &Path) -> Result<()> {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.lo, b.hi, b.count_all, b.count_selected
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
