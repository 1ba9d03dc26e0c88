//! Coreset samplers: double-end pruning, the hard-prune-rate search on a
//! pseudo-labeled validation split, and the random and stratified baselines.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, Metric, PseudoLabels, ScoreVector};
use crate::error::{Error, Result};
use crate::probe::{probe_accuracy, train_probe, ProbeConfig};

/// Slack for floating-point products such as 0.3 · 10.
const EPS: f64 = 1e-9;

pub const DEFAULT_BETA_STEP: f64 = 0.1;
pub const DEFAULT_NUM_STRATA: usize = 50;
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetPlan {
    pub n: usize,
    pub prune_rate: f64,
    pub hard_prune_rate: f64,
    pub budget: usize,
    /// Sorted ascending, distinct.
    pub selected: Vec<usize>,
    pub seed: Option<u64>,
    pub metric: Option<Metric>,
}

/// `round(n · (1 − α))`.
pub fn budget(n: usize, prune_rate: f64) -> usize {
    (n as f64 * (1.0 - prune_rate)).round() as usize
}

/// Largest β with `β·N + k ≤ N`.
pub fn max_hard_prune_rate(n: usize, k: usize) -> f64 {
    (n.saturating_sub(k)) as f64 / n as f64
}

fn hard_count(n: usize, hard_prune_rate: f64) -> usize {
    (hard_prune_rate * n as f64 + EPS).floor() as usize
}

/// Validates (α, β) against `n` and returns `(k, ⌊β·N⌋)`.
pub fn check_feasible(n: usize, prune_rate: f64, hard_prune_rate: f64) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    if !(0.0..1.0).contains(&prune_rate) {
        return Err(Error::InvalidParameter(format!(
            "prune rate {prune_rate} must be in [0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&hard_prune_rate) {
        return Err(Error::InvalidParameter(format!(
            "hard prune rate {hard_prune_rate} must be in [0, 1)"
        )));
    }
    let k = budget(n, prune_rate);
    if k == 0 {
        return Err(Error::InvalidParameter(format!(
            "prune rate {prune_rate} leaves an empty budget for N = {n}"
        )));
    }
    if hard_prune_rate * n as f64 + k as f64 > n as f64 + EPS {
        return Err(Error::Infeasible {
            prune_rate,
            hard_prune_rate,
            n,
            max_hard_prune_rate: max_hard_prune_rate(n, k),
        });
    }
    Ok((k, hard_count(n, hard_prune_rate)))
}

/// Example indices from hardest to easiest; equal hardness keeps index order.
pub fn hardness_ranking(scores: &ScoreVector) -> Vec<usize> {
    let h = scores.hardness();
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    order
}

/// Drops the ⌊β·N⌋ hardest examples, then keeps the next `k` hardest.
pub fn double_end_prune(
    scores: &ScoreVector,
    prune_rate: f64,
    hard_prune_rate: f64,
) -> Result<CoresetPlan> {
    let n = scores.len();
    let (k, skip) = check_feasible(n, prune_rate, hard_prune_rate)?;
    let ranking = hardness_ranking(scores);
    let mut selected = ranking[skip..skip + k].to_vec();
    selected.sort_unstable();
    Ok(CoresetPlan {
        n,
        prune_rate,
        hard_prune_rate,
        budget: k,
        selected,
        seed: None,
        metric: Some(scores.metric()),
    })
}

/// Uniform sample of `k = round(N(1 − α))` indices without replacement.
pub fn random_coreset(n: usize, prune_rate: f64, seed: u64) -> Result<CoresetPlan> {
    let (k, _) = check_feasible(n, prune_rate, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = index::sample(&mut rng, n, k).into_vec();
    selected.sort_unstable();
    Ok(CoresetPlan {
        n,
        prune_rate,
        hard_prune_rate: 0.0,
        budget: k,
        selected,
        seed: Some(seed),
        metric: None,
    })
}

/// Splits `budget` over bins: bins are visited from smallest to largest
/// population and each takes `min(population, remaining / bins_left)`.
pub fn ccs_allocation(populations: &[usize], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..populations.len())
        .filter(|&b| populations[b] > 0)
        .collect();
    order.sort_by_key(|&b| (populations[b], b));
    let mut alloc = vec![0; populations.len()];
    let mut remaining = budget;
    for (visited, &b) in order.iter().enumerate() {
        let left = order.len() - visited;
        let take = populations[b].min(remaining / left);
        alloc[b] = take;
        remaining -= take;
    }
    // integer division can strand a few slots; hand them to bins with room
    for &b in &order {
        if remaining == 0 {
            break;
        }
        let extra = (populations[b] - alloc[b]).min(remaining);
        alloc[b] += extra;
        remaining -= extra;
    }
    alloc
}

/// Coverage-centric stratified sampling: hard-prune ⌊β·N⌋, split the rest of
/// the hardness range into equal-width bins and sample each bin uniformly.
pub fn ccs_coreset(
    scores: &ScoreVector,
    prune_rate: f64,
    hard_prune_rate: f64,
    num_strata: usize,
    seed: u64,
) -> Result<CoresetPlan> {
    if num_strata == 0 {
        return Err(Error::InvalidParameter(
            "num_strata must be at least 1".into(),
        ));
    }
    let n = scores.len();
    let (k, skip) = check_feasible(n, prune_rate, hard_prune_rate)?;
    let ranking = hardness_ranking(scores);
    let pool = &ranking[skip..];
    if pool.is_empty() {
        return Err(Error::EmptySubset);
    }
    let h = scores.hardness();
    let lo = pool.iter().map(|&i| h[i]).fold(f64::INFINITY, f64::min);
    let hi = pool.iter().map(|&i| h[i]).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / num_strata as f64;
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); num_strata];
    for &i in pool {
        let b = if width > 0.0 {
            (((h[i] - lo) / width) as usize).min(num_strata - 1)
        } else {
            0
        };
        bins[b].push(i);
    }
    let populations: Vec<usize> = bins.iter().map(Vec::len).collect();
    let alloc = ccs_allocation(&populations, k);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::with_capacity(k);
    for (bin, &take) in bins.iter_mut().zip(&alloc) {
        bin.sort_unstable();
        let picks = index::sample(&mut rng, bin.len(), take);
        selected.extend(picks.iter().map(|p| bin[p]));
    }
    selected.sort_unstable();
    Ok(CoresetPlan {
        n,
        prune_rate,
        hard_prune_rate,
        budget: k,
        selected,
        seed: Some(seed),
        metric: Some(scores.metric()),
    })
}

/// Feasible hard-prune rates `0, step, 2·step, …` for `n` examples at rate α.
pub fn beta_grid(n: usize, prune_rate: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta step {step} must be positive"
        )));
    }
    let mut grid = Vec::new();
    for i in 0.. {
        let beta = ((i as f64 * step) * 1e12).round() / 1e12;
        if beta >= 1.0 {
            break;
        }
        match check_feasible(n, prune_rate, beta) {
            Ok(_) => grid.push(beta),
            Err(Error::Infeasible { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(grid)
}

/// Seeded train/validation split that keeps each pseudo-class's share.
/// Returns sorted `(train, validation)` index lists.
pub fn stratified_split(
    pseudo: &PseudoLabels,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let labels = pseudo.as_labels();
    if labels.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two examples to split".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes()];
    for (i, &l) in labels.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * validation_fraction).round() as usize;
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    if val.is_empty() {
        // tiny inputs: move one example so validation is never empty
        let moved = train.pop().expect("at least two examples");
        val.push(moved);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCell {
    pub beta: f64,
    /// `None` when the probe diverged for this β.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaSearch {
    pub best_beta: f64,
    pub table: Vec<BetaCell>,
    /// Plan on all N examples at `best_beta`.
    pub plan: CoresetPlan,
    pub train_split: Vec<usize>,
    pub val_split: Vec<usize>,
}

/// Picks β by pseudo-label validation accuracy.
///
/// The pseudo-labeled dataset is split 90/10 (stratified by pseudo-label).
/// For every feasible β a coreset is drawn from the 90% part by double-end
/// pruning at the same prune rate, a probe is trained on it with pseudo-labels
/// and scored on the 10% part. The best β (smallest on ties) is then applied
/// to all N examples.
pub fn beta_grid_search(
    store: &EmbeddingStore,
    pseudo: &PseudoLabels,
    scores: &ScoreVector,
    prune_rate: f64,
    step: f64,
    probe_config: &ProbeConfig,
    seed: u64,
) -> Result<BetaSearch> {
    let labels = pseudo.as_labels();
    let n = store.len();
    if labels.len() != n || scores.len() != n {
        return Err(Error::LengthMismatch {
            left: labels.len().min(scores.len()),
            right: n,
        });
    }
    let (train, val) = stratified_split(pseudo, VALIDATION_FRACTION, seed)?;
    let split_scores = scores.select(&train);

    let full_grid = beta_grid(n, prune_rate, step)?;
    let split_grid = beta_grid(train.len(), prune_rate, step)?;
    let grid: Vec<f64> = full_grid
        .into_iter()
        .filter(|b| split_grid.iter().any(|s| (s - b).abs() < EPS))
        .collect();
    if grid.is_empty() {
        return Err(Error::NoFeasibleBeta);
    }

    let table: Vec<BetaCell> = grid
        .par_iter()
        .map(|&beta| -> Result<BetaCell> {
            let local = double_end_prune(&split_scores, prune_rate, beta)?;
            let coreset: Vec<usize> = local.selected.iter().map(|&r| train[r]).collect();
            let val_acc = match train_probe(store, labels, &coreset, probe_config) {
                Ok(model) => Some(probe_accuracy(&model, store, labels, &val)),
                Err(Error::NonFiniteLoss { epoch, batch }) => {
                    log::warn!("beta {beta}: probe diverged at epoch {epoch}, batch {batch}");
                    None
                }
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
    let (best_beta, _) = best.ok_or(Error::NoFeasibleBeta)?;
    let mut plan = double_end_prune(scores, prune_rate, best_beta)?;
    plan.seed = Some(seed);
    Ok(BetaSearch {
        best_beta,
        table,
        plan,
        train_split: train,
        val_split: val,
    })
}

pub fn write_beta_table(table: &[BetaCell], path: &Path) -> Result<()> {
    let mut out = String::from("beta,val_acc\n");
    for cell in table {
        match cell.val_acc {
            Some(acc) => out.push_str(&format!("{},{}\n", cell.beta, acc)),
            None => out.push_str(&format!("{},\n", cell.beta)),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct PlanHeader {
    alpha: f64,
    beta: f64,
    k: usize,
    seed: Option<u64>,
    metric: Option<Metric>,
    n: usize,
}

/// First line is a JSON header, then one selected index per line.
pub fn write_plan(plan: &CoresetPlan, path: &Path) -> Result<()> {
    let header = PlanHeader {
        alpha: plan.prune_rate,
        beta: plan.hard_prune_rate,
        k: plan.budget,
        seed: plan.seed,
        metric: plan.metric,
        n: plan.n,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_string(&header).expect("plan header serializes");
    writeln!(w, "{json}").map_err(|e| Error::io(path, e))?;
    for i in &plan.selected {
        writeln!(w, "{i}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_plan(path: &Path) -> Result<CoresetPlan> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty plan file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: PlanHeader =
        serde_json::from_str(&first).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let mut selected = Vec::with_capacity(header.k);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let i: usize = t
            .parse()
            .map_err(|_| Error::parse(path, lineno + 2, format!("bad index {t:?}")))?;
        selected.push(i);
    }
    if selected.len() != header.k {
        return Err(Error::parse(
            path,
            1,
            format!(
                "header says k = {} but {} indices follow",
                header.k,
                selected.len()
            ),
        ));
    }
    Ok(CoresetPlan {
        n: header.n,
        prune_rate: header.alpha,
        hard_prune_rate: header.beta,
        budget: header.k,
        selected,
        seed: header.seed,
        metric: header.metric,
    })
}
