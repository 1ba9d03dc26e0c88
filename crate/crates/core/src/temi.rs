//! Teacher-ensemble clustering over k-NN pairs with a weighted PMI objective.
//!
//! Each of the H heads is a pair of affine maps d → C (student and teacher)
//! followed by a temperature-scaled softmax. For an anchor `x` and each of its
//! neighbors `x'`, head `h` contributes
//!
//! ```text
//! w_h(x, x') · (pmi_h(x, x') + pmi_h(x', x))
//! pmi_h(x, x') = log Σ_c (q_s(c|x) · q_t(c|x'))^γ / q_t(c)
//! w_h(x, x')   = Σ_c q_t(c|x) · q_t(c|x')
//! ```
//!
//! and the anchor loss is the negated sum over heads and neighbors divided by 2H.
//! Only the student receives gradients; the teacher follows it by EMA, and the
//! class marginal q_t(c) is an EMA of batch-mean teacher probabilities.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, LabelKind, LabelVector, PseudoLabels};
use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::metrics::hungarian_match;
use crate::optim::AdamW;

pub const DEFAULT_PMI_EXPONENT: f64 = 0.6;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.996;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// EMA momentum of the per-head class marginal.
pub const MARGINAL_MOMENTUM: f64 = 0.9;
/// Lower bound applied to marginal entries before dividing by them.
pub const MARGINAL_FLOOR: f64 = 1e-6;
pub const DEFAULT_NUM_HEADS: usize = 50;

const COLLAPSE_THRESHOLD: f64 = 0.999;
const COLLAPSE_PATIENCE: usize = 5;

/// Affine map d → C stored as `[W (C×d, row-major) | b (C)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    dim: usize,
    classes: usize,
    params: Vec<f64>,
}

impl AffineHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        AffineHead {
            dim,
            classes,
            params: vec![0.0; classes * dim + classes],
        }
    }

    pub fn from_parts(dim: usize, classes: usize, weights: &[f64], bias: &[f64]) -> Result<Self> {
        if weights.len() != dim * classes {
            return Err(Error::DimensionMismatch {
                expected: dim * classes,
                found: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                found: bias.len(),
            });
        }
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        Ok(AffineHead {
            dim,
            classes,
            params,
        })
    }

    fn gaussian(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut head = AffineHead::zeros(dim, classes);
        for w in &mut head.params[..classes * dim] {
            *w = normal.sample(rng);
        }
        head
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.classes * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.classes * self.dim..]
    }

    /// Affine output W·x + b.
    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f32]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.classes * self.dim);
        w.chunks_exact(self.dim)
            .zip(b)
            .map(|(row, &bias)| {
                row.iter()
                    .zip(x)
                    .map(|(&wi, &xi)| wi * f64::from(xi))
                    .sum::<f64>()
                    + bias
            })
            .collect()
    }

    fn same_shape(&self, other: &AffineHead) -> Result<()> {
        if self.dim != other.dim || self.classes != other.classes {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: other.params.len(),
            });
        }
        Ok(())
    }
}

/// Softmax of `logits / temperature`, computed with the max subtracted.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHead {
    pub student: AffineHead,
    pub teacher: AffineHead,
    /// Running estimate of the teacher's class marginal q_t(c).
    pub marginal: Vec<f64>,
}

impl ClusterHead {
    pub fn new(student: AffineHead, teacher: AffineHead, marginal: Vec<f64>) -> Result<Self> {
        student.same_shape(&teacher)?;
        if marginal.len() != student.classes {
            return Err(Error::DimensionMismatch {
                expected: student.classes,
                found: marginal.len(),
            });
        }
        Ok(ClusterHead {
            student,
            teacher,
            marginal,
        })
    }

    /// Student initialized from N(0, 1/d), teacher a copy, marginal uniform.
    fn init(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let student = AffineHead::gaussian(dim, classes, rng);
        ClusterHead {
            teacher: student.clone(),
            student,
            marginal: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn branch(&self, which: Branch) -> &AffineHead {
        match which {
            Branch::Student => &self.student,
            Branch::Teacher => &self.teacher,
        }
    }
}

pub fn head_probs(
    head: &ClusterHead,
    which: Branch,
    x: &[f32],
    temperature: f64,
) -> Result<Vec<f64>> {
    Ok(softmax(&head.branch(which).logits(x)?, temperature))
}

/// Shape-independent ensemble hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub pmi_exponent: f64,
    pub ema_momentum: f64,
    pub temperature: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            pmi_exponent: DEFAULT_PMI_EXPONENT,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl EnsembleOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.pmi_exponent > 0.0 && self.pmi_exponent <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pmi_exponent {} must be in (0, 1]",
                self.pmi_exponent
            )));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidParameter(format!(
                "ema_momentum {} must be in [0, 1)",
                self.ema_momentum
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadEnsemble {
    pub heads: Vec<ClusterHead>,
    pub options: EnsembleOptions,
}

impl HeadEnsemble {
    pub fn new(heads: Vec<ClusterHead>, options: EnsembleOptions) -> Result<Self> {
        options.validate()?;
        let first = heads
            .first()
            .ok_or_else(|| Error::InvalidParameter("ensemble needs at least one head".into()))?;
        for h in &heads[1..] {
            first.student.same_shape(&h.student)?;
        }
        Ok(HeadEnsemble { heads, options })
    }

    /// Fresh ensemble; head `h` draws from stream `h` of the seed.
    pub fn init(
        dim: usize,
        classes: usize,
        num_heads: usize,
        options: EnsembleOptions,
        seed: u64,
    ) -> Result<Self> {
        let heads = (0..num_heads)
            .map(|h| ClusterHead::init(dim, classes, &mut head_rng(seed, h)))
            .collect();
        Self::new(heads, options)
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn dim(&self) -> usize {
        self.heads[0].student.dim
    }

    pub fn num_classes(&self) -> usize {
        self.heads[0].student.classes
    }

    pub fn head_probs(&self, h: usize, which: Branch, x: &[f32]) -> Result<Vec<f64>> {
        head_probs(&self.heads[h], which, x, self.options.temperature)
    }
}

fn head_rng(seed: u64, head: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(head as u64);
    rng
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `log Σ_c (q_s_x[c] · q_t_xp[c])^exponent / marginal[c]`.
pub fn pmi_term(q_s_x: &[f64], q_t_xp: &[f64], marginal: &[f64], exponent: f64) -> Result<f64> {
    check_same_len(q_s_x, q_t_xp)?;
    check_same_len(q_s_x, marginal)?;
    let sum: f64 = q_s_x
        .iter()
        .zip(q_t_xp)
        .zip(marginal)
        .map(|((&s, &t), &m)| {
            // a class with no joint mass contributes nothing, whatever its marginal
            let joint = s * t;
            if joint == 0.0 {
                0.0
            } else {
                joint.powf(exponent) / m
            }
        })
        .sum();
    let v = sum.ln();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinitePmi)
    }
}

/// Probability that `x` and `x'` share a teacher cluster: `Σ_c q_t(c|x) q_t(c|x')`.
pub fn pair_weight(q_t_x: &[f64], q_t_xp: &[f64]) -> Result<f64> {
    check_same_len(q_t_x, q_t_xp)?;
    Ok(q_t_x.iter().zip(q_t_xp).map(|(a, b)| a * b).sum())
}

fn floored_marginal(marginal: &[f64]) -> Vec<f64> {
    marginal.iter().map(|&m| m.max(MARGINAL_FLOOR)).collect()
}

/// Loss of one anchor, evaluated directly from the definition (no gradients).
pub fn temi_loss(
    ensemble: &HeadEnsemble,
    x: usize,
    neighbors: &NeighborTable,
    store: &EmbeddingStore,
) -> Result<f64> {
    let opts = &ensemble.options;
    let xr = store.row(x);
    let mut total = 0.0;
    for head in &ensemble.heads {
        let marginal = floored_marginal(&head.marginal);
        let qs_x = head_probs(head, Branch::Student, xr, opts.temperature)?;
        let qt_x = head_probs(head, Branch::Teacher, xr, opts.temperature)?;
        for &xp in neighbors.neighbors(x) {
            let xpr = store.row(xp);
            let qs_xp = head_probs(head, Branch::Student, xpr, opts.temperature)?;
            let qt_xp = head_probs(head, Branch::Teacher, xpr, opts.temperature)?;
            let w = pair_weight(&qt_x, &qt_xp)?;
            let forward = pmi_term(&qs_x, &qt_xp, &marginal, opts.pmi_exponent)?;
            let backward = pmi_term(&qs_xp, &qt_x, &marginal, opts.pmi_exponent)?;
            total += w * (forward + backward);
        }
    }
    Ok(-total / (2.0 * ensemble.num_heads() as f64))
}

pub struct HeadStep {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean teacher probabilities over the anchors.
    pub teacher_mean: Vec<f64>,
}

/// Mean anchor loss over `anchors` for one head's share of the ensemble
/// objective, with the gradient with respect to that head's student parameters.
///
/// Summing the returned losses over all heads gives the mean of [`temi_loss`]
/// over the anchors.
pub fn head_loss_and_grad(
    head: &ClusterHead,
    options: &EnsembleOptions,
    num_heads: usize,
    anchors: &[usize],
    neighbors: &NeighborTable,
    store: &EmbeddingStore,
) -> Result<HeadStep> {
    let d = head.student.dim;
    let c = head.student.classes;
    if store.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: store.dim(),
        });
    }
    let t = options.temperature;
    let gamma = options.pmi_exponent;
    let marginal = floored_marginal(&head.marginal);

    // Every point touched by this batch gets a slot for its probabilities and logit gradient.
    let mut slot_of = vec![usize::MAX; store.len()];
    let mut points: Vec<usize> = Vec::new();
    for &a in anchors {
        for &p in std::iter::once(&a).chain(neighbors.neighbors(a)) {
            if slot_of[p] == usize::MAX {
                slot_of[p] = points.len();
                points.push(p);
            }
        }
    }
    let mut qs = Vec::with_capacity(points.len() * c);
    let mut qt = Vec::with_capacity(points.len() * c);
    for &p in &points {
        let x = store.row(p);
        qs.extend(softmax(&head.student.logits_unchecked(x), t));
        qt.extend(softmax(&head.teacher.logits_unchecked(x), t));
    }
    let mut dz = vec![0.0; points.len() * c];
    let mut teacher_mean = vec![0.0; c];
    let mut ratio = vec![0.0; c];
    let scale = -1.0 / (2.0 * num_heads as f64 * anchors.len() as f64);
    let mut loss = 0.0;

    // d pmi / d z_j = (γ / T) (r_j − q_s(j)), r_j = a_j / Σ a,  a_j = (q_s q_t)^γ / m_j
    let mut accumulate = |s_slot: usize, t_slot: usize, coef: f64, dz: &mut [f64]| -> Result<f64> {
        let qs_s = &qs[s_slot * c..(s_slot + 1) * c];
        let qt_t = &qt[t_slot * c..(t_slot + 1) * c];
        let mut sum = 0.0;
        for j in 0..c {
            ratio[j] = (qs_s[j] * qt_t[j]).powf(gamma) / marginal[j];
            sum += ratio[j];
        }
        let pmi = sum.ln();
        if !pmi.is_finite() {
            return Err(Error::NonFinitePmi);
        }
        let g = coef * gamma / t;
        let dz_s = &mut dz[s_slot * c..(s_slot + 1) * c];
        for j in 0..c {
            dz_s[j] += g * (ratio[j] / sum - qs_s[j]);
        }
        Ok(pmi)
    };

    for &a in anchors {
        let sa = slot_of[a];
        for (j, m) in teacher_mean.iter_mut().enumerate() {
            *m += qt[sa * c + j];
        }
        for &xp in neighbors.neighbors(a) {
            let sp = slot_of[xp];
            let w: f64 = (0..c).map(|j| qt[sa * c + j] * qt[sp * c + j]).sum();
            let coef = scale * w;
            let forward = accumulate(sa, sp, coef, &mut dz)?;
            let backward = accumulate(sp, sa, coef, &mut dz)?;
            loss += coef * (forward + backward);
        }
    }
    for m in &mut teacher_mean {
        *m /= anchors.len() as f64;
    }

    let mut grad = vec![0.0; c * d + c];
    let (gw, gb) = grad.split_at_mut(c * d);
    for (slot, &p) in points.iter().enumerate() {
        let x = store.row(p);
        for j in 0..c {
            let g = dz[slot * c + j];
            if g == 0.0 {
                continue;
            }
            gb[j] += g;
            for (w, &xi) in gw[j * d..(j + 1) * d].iter_mut().zip(x) {
                *w += g * f64::from(xi);
            }
        }
    }
    Ok(HeadStep {
        loss,
        grad,
        teacher_mean,
    })
}

/// `momentum · teacher + (1 − momentum) · student`, elementwise.
pub fn ema_update(teacher: &AffineHead, student: &AffineHead, momentum: f64) -> Result<AffineHead> {
    let mut out = teacher.clone();
    ema_update_in_place(&mut out, student, momentum)?;
    Ok(out)
}

fn ema_update_in_place(
    teacher: &mut AffineHead,
    student: &AffineHead,
    momentum: f64,
) -> Result<()> {
    teacher.same_shape(student)?;
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidParameter(format!(
            "ema momentum {momentum} must be in [0, 1)"
        )));
    }
    for (t, &s) in teacher.params.iter_mut().zip(&student.params) {
        *t = momentum * *t + (1.0 - momentum) * s;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 512,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be positive and weight decay {} non-negative",
                self.learning_rate, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollapseWarning {
    pub head: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean anchor loss per epoch, summed across heads.
    pub loss_curve: Vec<f64>,
    pub collapse_warnings: Vec<CollapseWarning>,
}

struct HeadRun {
    head: ClusterHead,
    epoch_losses: Vec<f64>,
    collapse_epoch: Option<usize>,
}

fn train_head(
    mut head: ClusterHead,
    head_index: usize,
    options: &EnsembleOptions,
    num_heads: usize,
    neighbors: &NeighborTable,
    store: &EmbeddingStore,
    config: &TrainConfig,
) -> Result<HeadRun> {
    let n = store.len();
    let mut rng = head_rng(config.seed ^ 0x0005_eed0_fb47_c4e5, head_index);
    let mut opt = AdamW::new(
        head.student.params.len(),
        config.learning_rate,
        config.weight_decay,
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut collapsed_for = 0;
    let mut collapse_epoch = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, anchors) in order.chunks(config.batch_size).enumerate() {
            let step = head_loss_and_grad(&head, options, num_heads, anchors, neighbors, store)
                .map_err(|e| match e {
                    Error::NonFinitePmi => Error::NonFiniteLoss { epoch, batch },
                    other => other,
                })?;
            if !step.loss.is_finite() || step.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += step.loss * anchors.len() as f64;
            opt.step(&mut head.student.params, &step.grad);
            ema_update_in_place(&mut head.teacher, &head.student, options.ema_momentum)?;
            for (m, &b) in head.marginal.iter_mut().zip(&step.teacher_mean) {
                *m = MARGINAL_MOMENTUM * *m + (1.0 - MARGINAL_MOMENTUM) * b;
            }
        }
        epoch_losses.push(epoch_loss / n as f64);

        let peak = head.marginal.iter().copied().fold(0.0, f64::max);
        if peak > COLLAPSE_THRESHOLD {
            collapsed_for += 1;
            if collapsed_for == COLLAPSE_PATIENCE && collapse_epoch.is_none() {
                collapse_epoch = Some(epoch);
            }
        } else {
            collapsed_for = 0;
        }
    }
    Ok(HeadRun {
        head,
        epoch_losses,
        collapse_epoch,
    })
}

/// Trains `num_heads` heads on the neighbor pairs of `store`.
///
/// Heads run in parallel, each with its own RNG stream, so the result does not
/// depend on the thread count.
pub fn train_ensemble(
    store: &EmbeddingStore,
    neighbors: &NeighborTable,
    num_classes: usize,
    num_heads: usize,
    options: EnsembleOptions,
    config: &TrainConfig,
) -> Result<(HeadEnsemble, TrainReport)> {
    config.validate()?;
    if neighbors.len() != store.len() {
        return Err(Error::LengthMismatch {
            left: neighbors.len(),
            right: store.len(),
        });
    }
    if num_classes < 2 || num_classes > store.len() {
        return Err(Error::InvalidParameter(format!(
            "C = {num_classes} must be in [2, N = {}]",
            store.len()
        )));
    }
    let init = HeadEnsemble::init(store.dim(), num_classes, num_heads, options, config.seed)?;
    let runs: Vec<HeadRun> = init
        .heads
        .into_par_iter()
        .enumerate()
        .map(|(h, head)| train_head(head, h, &options, num_heads, neighbors, store, config))
        .collect::<Result<_>>()?;

    let mut report = TrainReport {
        loss_curve: vec![0.0; config.epochs],
        collapse_warnings: Vec::new(),
    };
    let mut heads = Vec::with_capacity(num_heads);
    for (h, run) in runs.into_iter().enumerate() {
        for (acc, l) in report.loss_curve.iter_mut().zip(&run.epoch_losses) {
            *acc += l;
        }
        if let Some(epoch) = run.collapse_epoch {
            log::warn!("head {h}: marginal above {COLLAPSE_THRESHOLD} for {COLLAPSE_PATIENCE} epochs (epoch {epoch})");
            report
                .collapse_warnings
                .push(CollapseWarning { head: h, epoch });
        }
        heads.push(run.head);
    }
    let ensemble = align_heads(&HeadEnsemble::new(heads, options)?, store)?;
    Ok((ensemble, report))
}

impl AffineHead {
    /// Reorders output classes so new class `j` is old class `perm[j]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<AffineHead> {
        check_permutation(perm, self.classes)?;
        let d = self.dim;
        let mut w = Vec::with_capacity(self.classes * d);
        for &old in perm {
            w.extend_from_slice(&self.weights()[old * d..(old + 1) * d]);
        }
        let b: Vec<f64> = perm.iter().map(|&old| self.bias()[old]).collect();
        AffineHead::from_parts(d, self.classes, &w, &b)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::InvalidParameter(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(())
}

impl ClusterHead {
    /// Same head with its class indices reordered; the loss is unchanged.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<ClusterHead> {
        let marginal = perm.iter().map(|&old| self.marginal[old]).collect();
        ClusterHead::new(
            self.student.permute_classes(perm)?,
            self.teacher.permute_classes(perm)?,
            marginal,
        )
    }
}

/// Relabels the classes of every head to agree with head 0.
///
/// Heads are trained independently, so each finds the clusters under its own
/// arbitrary class order. Head `h` is matched to head 0 by maximizing the
/// teacher co-assignment `Σ_x q_h(a|x) · q_0(b|x)` over permutations. Every
/// head's objective is invariant under this relabeling.
pub fn align_heads(ensemble: &HeadEnsemble, store: &EmbeddingStore) -> Result<HeadEnsemble> {
    let c = ensemble.num_classes();
    if ensemble.num_heads() < 2 {
        return Ok(ensemble.clone());
    }
    let rows: Vec<Vec<Vec<f64>>> = (0..ensemble.num_heads())
        .into_par_iter()
        .map(|h| {
            store
                .rows()
                .map(|x| ensemble.head_probs(h, Branch::Teacher, x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut heads = Vec::with_capacity(ensemble.num_heads());
    heads.push(ensemble.heads[0].clone());
    for (h, probs) in rows.iter().enumerate().skip(1) {
        // cost[b][a]: reference class b against head class a
        let mut cost = vec![0.0; c * c];
        for (p, r) in probs.iter().zip(&rows[0]) {
            for b in 0..c {
                for a in 0..c {
                    cost[b * c + a] -= r[b] * p[a];
                }
            }
        }
        let perm = hungarian_match(&cost, c)?;
        heads.push(ensemble.heads[h].permute_classes(&perm)?);
    }
    HeadEnsemble::new(heads, ensemble.options)
}

/// Mean teacher probability over heads, per class.
pub fn ensemble_probs(ensemble: &HeadEnsemble, x: &[f32]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; ensemble.num_classes()];
    for h in 0..ensemble.num_heads() {
        for (m, p) in mean
            .iter_mut()
            .zip(ensemble.head_probs(h, Branch::Teacher, x)?)
        {
            *m += p;
        }
    }
    let h = ensemble.num_heads() as f64;
    mean.iter_mut().for_each(|m| *m /= h);
    Ok(mean)
}

/// Index of the largest value; the smallest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Pseudo-label of each row: argmax of the head-averaged teacher probabilities.
pub fn assign_pseudo_labels(
    ensemble: &HeadEnsemble,
    store: &EmbeddingStore,
) -> Result<PseudoLabels> {
    let labels: Vec<usize> = (0..store.len())
        .into_par_iter()
        .map(|i| ensemble_probs(ensemble, store.row(i)).map(|p| argmax(&p)))
        .collect::<Result<_>>()?;
    PseudoLabels::try_from(LabelVector::new(
        labels,
        ensemble.num_classes(),
        LabelKind::Pseudo,
    )?)
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ELFSHEAD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic, version u32, H/d/C as u64, then per head the student
/// weights and bias, teacher weights and bias, and marginal, all f32 LE.
pub fn write_checkpoint(ensemble: &HeadEnsemble, path: &Path) -> Result<()> {
    let (d, c) = (ensemble.dim(), ensemble.num_classes());
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [ensemble.num_heads(), d, c] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for head in &ensemble.heads {
        let values = head
            .student
            .params
            .iter()
            .chain(&head.teacher.params)
            .chain(&head.marginal);
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path, options: EnsembleOptions) -> Result<HeadEnsemble> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = 8 + 4 + 24;
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "ELFSHEAD".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
    let (h, d, c) = (u64_at(12), u64_at(20), u64_at(28));
    let per_head = 2 * (c * d + c) + c;
    let expected = header + 4 * h * per_head;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let p = c * d + c;
    let heads = values
        .chunks_exact(per_head)
        .map(|chunk| {
            ClusterHead::new(
                AffineHead {
                    dim: d,
                    classes: c,
                    params: chunk[..p].to_vec(),
                },
                AffineHead {
                    dim: d,
                    classes: c,
                    params: chunk[p..2 * p].to_vec(),
                },
                chunk[2 * p..].to_vec(),
            )
        })
        .collect::<Result<_>>()?;
    HeadEnsemble::new(heads, options)
}
