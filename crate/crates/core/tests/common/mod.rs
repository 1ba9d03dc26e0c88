//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls the code path it is compared against.

#![allow(dead_code)]

use std::collections::HashMap;

use elfs_core::data::{DatasetManifest, EmbeddingStore, LabelKind, LabelVector, ScoreVector};
use elfs_core::knn::NeighborTable;
use elfs_core::probe::ProbeModel;
use elfs_core::temi::{head_loss_and_grad, temi_loss, EnsembleOptions, HeadEnsemble};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_store(n: usize, d: usize, seed: u64) -> EmbeddingStore {
    let mut r = rng(seed);
    let data = (0..n * d).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let m = DatasetManifest {
        name: "random".into(),
        num_examples: n,
        embed_dim: d,
        num_classes: 2,
        normalized: false,
        seed,
    };
    EmbeddingStore::new(m, data).unwrap()
}

pub fn random_probs(c: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..c).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_labels(n: usize, c: usize, kind: LabelKind, r: &mut ChaCha8Rng) -> LabelVector {
    LabelVector::new((0..n).map(|_| r.random_range(0..c)).collect(), c, kind).unwrap()
}

/// `log Σ_c exp(γ (ln q_s + ln q_t) − ln m)`.
pub fn pmi_oracle(qs: &[f64], qt: &[f64], marginal: &[f64], gamma: f64) -> f64 {
    let terms: Vec<f64> = (0..qs.len())
        .map(|c| gamma * (qs[c].ln() + qt[c].ln()) - marginal[c].ln())
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub fn pair_weight_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn aum_oracle(margins: &[Vec<f64>]) -> Vec<f64> {
    margins
        .iter()
        .map(|row| {
            let mut s = 0.0;
            for m in row {
                s += m;
            }
            -(s / row.len() as f64)
        })
        .collect()
}

pub fn el2n_oracle(norms: &[Vec<f64>], early: usize) -> Vec<f64> {
    norms
        .iter()
        .map(|row| row.iter().take(early).sum::<f64>() / early as f64)
        .collect()
}

/// NMI from empirical joint probabilities; entropies normalized by their mean.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    let mut pab: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
        *pab.entry((x, y)).or_default() += 1.0 / n;
    }
    let h = |p: &HashMap<usize, f64>| -> f64 { p.values().map(|&v| -v * v.ln()).sum() };
    let mi: f64 = pab
        .iter()
        .map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln())
        .sum();
    let denom = 0.5 * (h(&pa) + h(&pb));
    if denom <= 0.0 {
        0.0
    } else {
        (mi / denom).clamp(0.0, 1.0)
    }
}

/// ARI by enumerating all pairs.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            if sa {
                in_a += 1.0;
            }
            if sb {
                in_b += 1.0;
            }
            if sa && sb {
                both += 1.0;
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as f64;
    let expected = in_a * in_b / pairs;
    (both - expected) / (0.5 * (in_a + in_b) - expected)
}

/// Minimum-cost assignment by trying every permutation.
pub fn brute_force_assignment(cost: &[f64], n: usize) -> f64 {
    fn go(row: usize, n: usize, used: &mut Vec<bool>, acc: f64, cost: &[f64], best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                go(row + 1, n, used, acc + cost[row * n + c], cost, best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, n, &mut vec![false; n], 0.0, cost, &mut best);
    best
}

/// Best agreement over all relabelings of `pred` (C ≤ 8).
pub fn brute_force_matched_accuracy(pred: &[usize], truth: &[usize], c: usize) -> f64 {
    let mut perm: Vec<usize> = (0..c).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(x, y)| p[**x] == **y)
            .count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Cosine neighbors by sorting every other row, ties to the smaller index.
pub fn knn_oracle(store: &EmbeddingStore, k: usize) -> Vec<Vec<usize>> {
    let norm = |x: &[f32]| {
        x.iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    };
    (0..store.len())
        .map(|i| {
            let xi = store.row(i);
            let mut sims: Vec<(f64, usize)> = (0..store.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let xj = store.row(j);
                    let dot: f64 = xi.iter().zip(xj).map(|(&a, &b)| a as f64 * b as f64).sum();
                    (dot / (norm(xi) * norm(xj)), j)
                })
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            sims.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Rank window `[⌊βN⌋, ⌊βN⌋ + k)` of a hardness-descending sort, as a sorted set.
pub fn window_oracle(hardness: &[f64], alpha: f64, beta: f64) -> Vec<usize> {
    let n = hardness.len();
    let k = (n as f64 * (1.0 - alpha)).round() as usize;
    let skip = (beta * n as f64 + 1e-9).floor() as usize;
    let mut keyed: Vec<(f64, usize)> = hardness.iter().copied().zip(0..n).collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed[skip..skip + k].iter().map(|p| p.1).collect();
    out.sort_unstable();
    out
}

pub fn score_vector(hardness: Vec<f64>) -> ScoreVector {
    ScoreVector::new(elfs_core::data::Metric::Aum, hardness).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(f64::MIN_POSITIVE)
}

pub const FD_STEP: f64 = 1e-4;

/// Worst relative error between the fused clustering gradient and central
/// differences of the mean direct loss, over every head.
pub fn temi_gradient_error(n: usize, c: usize, heads: usize, k: usize, seed: u64) -> f64 {
    let store = elfs_core::data::l2_normalize(&random_store(n, 4, seed)).unwrap();
    let neighbors = elfs_core::knn::build_knn(&store, k, false).unwrap();
    let options = EnsembleOptions::default();
    let mut ens = HeadEnsemble::init(4, c, heads, options, seed).unwrap();
    let mut r = rng(seed ^ 0xfd);
    for head in &mut ens.heads {
        // decouple teacher and marginal from the student so every path is exercised
        for p in head.teacher.params_mut() {
            *p += r.random_range(-0.3..0.3);
        }
        head.marginal = random_probs(c, &mut r);
    }
    let anchors: Vec<usize> = (0..n).collect();
    let mean_loss = |e: &HeadEnsemble| -> f64 {
        anchors
            .iter()
            .map(|&a| temi_loss(e, a, &neighbors, &store).unwrap())
            .sum::<f64>()
            / n as f64
    };
    let mut worst: f64 = 0.0;
    for h in 0..heads {
        let step = head_loss_and_grad(&ens.heads[h], &options, heads, &anchors, &neighbors, &store)
            .unwrap();
        let mut numeric = vec![0.0; step.grad.len()];
        for (i, g) in numeric.iter_mut().enumerate() {
            let orig = ens.heads[h].student.params()[i];
            ens.heads[h].student.params_mut()[i] = orig + FD_STEP;
            let up = mean_loss(&ens);
            ens.heads[h].student.params_mut()[i] = orig - FD_STEP;
            let down = mean_loss(&ens);
            ens.heads[h].student.params_mut()[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&step.grad, &numeric));
    }
    worst
}

/// Fused loss over all heads against the mean direct loss.
pub fn temi_loss_gap(ens: &HeadEnsemble, neighbors: &NeighborTable, store: &EmbeddingStore) -> f64 {
    let anchors: Vec<usize> = (0..store.len()).collect();
    let fused: f64 = ens
        .heads
        .iter()
        .map(|h| {
            head_loss_and_grad(h, &ens.options, ens.num_heads(), &anchors, neighbors, store)
                .unwrap()
                .loss
        })
        .sum();
    let direct = anchors
        .iter()
        .map(|&a| temi_loss(ens, a, neighbors, store).unwrap())
        .sum::<f64>()
        / anchors.len() as f64;
    (fused - direct).abs()
}

/// Probe cross-entropy gradient against central differences. Returns
/// `(relative error, smallest |pre-activation|)`; the second value shows the
/// check stayed away from ReLU kinks.
pub fn probe_gradient_error(n: usize, d: usize, hidden: usize, c: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut model = ProbeModel::init(d, hidden, c, seed);
    let (_, grad) = model.loss_and_grad(x.view(), &y);
    let mut numeric = vec![0.0; grad.len()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + FD_STEP;
        let up = model.loss(x.view(), &y);
        model.params_mut()[i] = orig - FD_STEP;
        let down = model.loss(x.view(), &y);
        model.params_mut()[i] = orig;
        *g = (up - down) / (2.0 * FD_STEP);
    }
    // first layer is [W1 (d×h) | b1]
    let p = model.params();
    let mut min_pre = f64::INFINITY;
    for row in x.rows() {
        for j in 0..hidden {
            let mut z = p[d * hidden + j];
            for i in 0..d {
                z += row[i] * p[i * hidden + j];
            }
            min_pre = min_pre.min(z.abs());
        }
    }
    (relative_error(&grad, &numeric), min_pre)
}
