//! Probe classifier on frozen embeddings and the training-dynamics scores
//! computed from it (AUM, forgetting events, EL2N).

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, LabelVector, Metric, ScoreVector};
use crate::error::{Error, Result};
use crate::optim::{cosine_lr, SgdMomentum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_dim: 512,
            epochs: 50,
            batch_size: 128,
            learning_rate: 0.1,
            min_learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 2e-4,
            seed: 0,
        }
    }
}

/// Default early window for EL2N.
pub const DEFAULT_EL2N_EPOCHS: usize = 10;

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "probe hidden_dim and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.min_learning_rate < 0.0 {
            return Err(Error::InvalidParameter(
                "probe learning rates out of range".into(),
            ));
        }
        Ok(())
    }
}

/// One hidden ReLU layer d → h → C. Parameters live in a flat buffer
/// `[W1 (d×h) | b1 (h) | W2 (h×C) | b2 (C)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    dim: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

struct Forward {
    pre: Array2<f64>,
    act: Array2<f64>,
    logits: Array2<f64>,
}

impl ProbeModel {
    /// Uniform(−1/√fan_in, 1/√fan_in) weights and biases.
    pub fn init(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(dim * hidden + hidden + hidden * classes + classes);
        let b1 = 1.0 / (dim as f64).sqrt();
        let u1 = Uniform::new_inclusive(-b1, b1).expect("finite bound");
        params.extend((0..dim * hidden + hidden).map(|_| u1.sample(&mut rng)));
        let b2 = 1.0 / (hidden as f64).sqrt();
        let u2 = Uniform::new_inclusive(-b2, b2).expect("finite bound");
        params.extend((0..hidden * classes + classes).map(|_| u2.sample(&mut rng)));
        ProbeModel {
            dim,
            hidden,
            classes,
            params,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.dim * self.hidden;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.hidden * self.classes;
        [w1, b1, w2, w2 + self.classes]
    }

    fn views(
        &self,
    ) -> (
        ArrayView2<'_, f64>,
        ArrayView1<'_, f64>,
        ArrayView2<'_, f64>,
        ArrayView1<'_, f64>,
    ) {
        let [o1, o2, o3, o4] = self.offsets();
        let p = &self.params;
        (
            ArrayView2::from_shape((self.dim, self.hidden), &p[..o1]).unwrap(),
            ArrayView1::from(&p[o1..o2]),
            ArrayView2::from_shape((self.hidden, self.classes), &p[o2..o3]).unwrap(),
            ArrayView1::from(&p[o3..o4]),
        )
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Forward {
        let (w1, b1, w2, b2) = self.views();
        let pre = x.dot(&w1) + b1;
        let act = pre.mapv(|v| v.max(0.0));
        let logits = act.dot(&w2) + b2;
        Forward { pre, act, logits }
    }

    /// Class logits for each row of `x`.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x).logits
    }

    /// Mean cross-entropy over the rows of `x` and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> (f64, Vec<f64>) {
        let b = x.nrows() as f64;
        let f = self.forward(x);
        let mut probs = f.logits.clone();
        let mut loss = 0.0;
        for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(y) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
            loss -= row[label].ln();
        }
        let mut dz = probs;
        for (mut row, &label) in dz.axis_iter_mut(Axis(0)).zip(y) {
            row[label] -= 1.0;
        }
        dz /= b;

        let (_, _, w2, _) = self.views();
        let g_w2 = f.act.t().dot(&dz);
        let g_b2 = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&w2.t());
        dh.zip_mut_with(&f.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        let g_w1 = x.t().dot(&dh);
        let g_b1 = dh.sum_axis(Axis(0));

        let mut grad = Vec::with_capacity(self.params.len());
        grad.extend(g_w1.iter());
        grad.extend(g_b1.iter());
        grad.extend(g_w2.iter());
        grad.extend(g_b2.iter());
        (loss / b, grad)
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        let logits = self.logits(x);
        let mut loss = 0.0;
        for (row, &label) in logits.axis_iter(Axis(0)).zip(y) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[label];
        }
        loss / x.nrows() as f64
    }

    /// Argmax predictions (smallest class index wins ties).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x)
            .axis_iter(Axis(0))
            .map(|row| crate::temi::argmax(row.as_slice().unwrap()))
            .collect()
    }
}

/// Rows of `store` at `indices` as an f64 matrix.
pub fn gather_rows(store: &EmbeddingStore, indices: &[usize]) -> Array2<f64> {
    let d = store.dim();
    let mut out = Array2::zeros((indices.len(), d));
    for (mut row, &i) in out.axis_iter_mut(Axis(0)).zip(indices) {
        for (o, &v) in row.iter_mut().zip(store.row(i)) {
            *o = f64::from(v);
        }
    }
    out
}

/// `logits[label] − max_{i ≠ label} logits[i]`.
pub fn margin(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::InvalidParameter(
            "margin needs at least two classes".into(),
        ));
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label,
            num_classes: logits.len(),
        });
    }
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[label] - other)
}

/// Per-example, per-epoch traces. Row `r` describes example `indices[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRecord {
    indices: Vec<usize>,
    epochs: usize,
    margins: Vec<f64>,
    correct: Vec<bool>,
    error_norms: Vec<f64>,
}

impl DynamicsRecord {
    /// Builds a record from row-major `len(indices) × epochs` traces.
    pub fn new(
        indices: Vec<usize>,
        epochs: usize,
        margins: Vec<f64>,
        correct: Vec<bool>,
        error_norms: Vec<f64>,
    ) -> Result<Self> {
        let cells = indices.len() * epochs;
        for len in [margins.len(), correct.len(), error_norms.len()] {
            if len != cells {
                return Err(Error::DimensionMismatch {
                    expected: cells,
                    found: len,
                });
            }
        }
        if let Some(pos) = margins.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / epochs.max(1),
                col: pos % epochs.max(1),
            });
        }
        Ok(DynamicsRecord {
            indices,
            epochs,
            margins,
            correct,
            error_norms,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn margins(&self, row: usize) -> &[f64] {
        &self.margins[row * self.epochs..(row + 1) * self.epochs]
    }

    pub fn correct(&self, row: usize) -> &[bool] {
        &self.correct[row * self.epochs..(row + 1) * self.epochs]
    }

    pub fn error_norms(&self, row: usize) -> &[f64] {
        &self.error_norms[row * self.epochs..(row + 1) * self.epochs]
    }
}

/// Trains the probe on `subset` with `labels` and records dynamics for every
/// subset example at the end of each epoch.
pub fn train_probe_with_dynamics(
    store: &EmbeddingStore,
    labels: &LabelVector,
    subset: &[usize],
    config: &ProbeConfig,
) -> Result<(ProbeModel, DynamicsRecord)> {
    let (model, rec) = train_probe_inner(store, labels, subset, config, true)?;
    Ok((model, rec.expect("recording enabled")))
}

/// Trains the probe without recording dynamics.
pub fn train_probe(
    store: &EmbeddingStore,
    labels: &LabelVector,
    subset: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeModel> {
    Ok(train_probe_inner(store, labels, subset, config, false)?.0)
}

fn train_probe_inner(
    store: &EmbeddingStore,
    labels: &LabelVector,
    subset: &[usize],
    config: &ProbeConfig,
    record: bool,
) -> Result<(ProbeModel, Option<DynamicsRecord>)> {
    config.validate()?;
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if labels.len() != store.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: store.len(),
        });
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= store.len()) {
        return Err(Error::InvalidParameter(format!(
            "subset index {bad} out of range for N = {}",
            store.len()
        )));
    }
    let c = labels.num_classes();
    let x = gather_rows(store, subset);
    let y: Vec<usize> = subset.iter().map(|&i| labels.get(i)).collect();

    let mut model = ProbeModel::init(store.dim(), config.hidden_dim, c, config.seed);
    let mut opt = SgdMomentum::new(model.params.len(), config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let n = subset.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    let mut margins = Vec::new();
    let mut correct = Vec::new();
    let mut error_norms = Vec::new();
    let mut per_epoch: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&r| y[r]).collect();
            let (loss, grad) = model.loss_and_grad(xb.view(), &yb);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let lr = cosine_lr(
                step,
                total_steps,
                config.learning_rate,
                config.min_learning_rate,
            );
            opt.step(&mut model.params, &grad, lr);
            step += 1;
        }
        if record {
            let logits = model.logits(x.view());
            let mut m = Vec::with_capacity(n);
            let mut e = Vec::with_capacity(n);
            for (row, &label) in logits.axis_iter(Axis(0)).zip(&y) {
                let z = row.to_vec();
                m.push(margin(&z, label)?);
                let p = crate::temi::softmax(&z, 1.0);
                let err: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| {
                        let t = if i == label { 1.0 } else { 0.0 };
                        (pi - t) * (pi - t)
                    })
                    .sum::<f64>()
                    .sqrt();
                e.push(err);
            }
            per_epoch.push((m, e));
        }
    }

    if !record {
        return Ok((model, None));
    }
    let t = config.epochs;
    margins.reserve(n * t);
    correct.reserve(n * t);
    error_norms.reserve(n * t);
    for r in 0..n {
        for (m, e) in &per_epoch {
            margins.push(m[r]);
            correct.push(m[r] > 0.0);
            error_norms.push(e[r]);
        }
    }
    let rec = DynamicsRecord::new(subset.to_vec(), t, margins, correct, error_norms)?;
    Ok((model, Some(rec)))
}

/// Fraction of `indices` whose prediction equals `labels`.
pub fn probe_accuracy(
    model: &ProbeModel,
    store: &EmbeddingStore,
    labels: &LabelVector,
    indices: &[usize],
) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let x = gather_rows(store, indices);
    let pred = model.predict(x.view());
    let hits = pred
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == labels.get(i))
        .count();
    hits as f64 / indices.len() as f64
}

/// Mean margin over epochs, stored negated as hardness.
pub fn aum_scores(rec: &DynamicsRecord) -> Result<ScoreVector> {
    if rec.epochs == 0 {
        return Err(Error::InvalidParameter(
            "AUM needs at least one epoch".into(),
        ));
    }
    let aum: Vec<f64> = (0..rec.len())
        .map(|r| rec.margins(r).iter().sum::<f64>() / rec.epochs as f64)
        .collect();
    ScoreVector::from_aum(&aum)
}

/// Number of correct → incorrect transitions; never-learned examples get T + 1.
pub fn forgetting_scores(rec: &DynamicsRecord) -> Result<ScoreVector> {
    if rec.epochs == 0 {
        return Err(Error::InvalidParameter(
            "forgetting needs at least one epoch".into(),
        ));
    }
    let never = (rec.epochs + 1) as f64;
    let scores = (0..rec.len())
        .map(|r| {
            let c = rec.correct(r);
            if !c.iter().any(|&b| b) {
                return never;
            }
            c.windows(2).filter(|w| w[0] && !w[1]).count() as f64
        })
        .collect();
    ScoreVector::new(Metric::Forgetting, scores)
}

/// Mean error-vector norm over the first `early_epochs` epochs.
pub fn el2n_scores(rec: &DynamicsRecord, early_epochs: usize) -> Result<ScoreVector> {
    if early_epochs == 0 || early_epochs > rec.epochs {
        return Err(Error::InvalidParameter(format!(
            "EL2N window {early_epochs} must be in [1, {}]",
            rec.epochs
        )));
    }
    let scores = (0..rec.len())
        .map(|r| rec.error_norms(r)[..early_epochs].iter().sum::<f64>() / early_epochs as f64)
        .collect();
    ScoreVector::new(Metric::El2n, scores)
}

pub fn scores_for(
    rec: &DynamicsRecord,
    metric: Metric,
    early_epochs: usize,
) -> Result<ScoreVector> {
    match metric {
        Metric::Aum => aum_scores(rec),
        Metric::Forgetting => forgetting_scores(rec),
        Metric::El2n => el2n_scores(rec, early_epochs.min(rec.epochs).max(1)),
    }
}

pub const DYNAMICS_MAGIC: &[u8; 7] = b"ELFSDYN";
pub const DYNAMICS_VERSION: u8 = 1;
const FLAG_HAS_CLASSES: u64 = 1;
const FLAG_HAS_INDICES: u64 = 2;

/// Layout: "ELFSDYN", version u8, N u64, T u64, flags u64, [C u64],
/// [N u64 indices], margins f32 (N×T), correctness bitset (LSB first,
/// ⌈N·T/8⌉ bytes), error norms f32 (N×T).
pub fn write_dynamics(rec: &DynamicsRecord, num_classes: Option<usize>, path: &Path) -> Result<()> {
    let n = rec.len();
    let t = rec.epochs;
    let identity = rec.indices.iter().enumerate().all(|(r, &i)| r == i);
    let mut flags = 0;
    if num_classes.is_some() {
        flags |= FLAG_HAS_CLASSES;
    }
    if !identity {
        flags |= FLAG_HAS_INDICES;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(DYNAMICS_MAGIC);
    buf.push(DYNAMICS_VERSION);
    for v in [n as u64, t as u64, flags] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(c) = num_classes {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    if !identity {
        for &i in &rec.indices {
            buf.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    for &m in &rec.margins {
        buf.extend_from_slice(&(m as f32).to_le_bytes());
    }
    let mut bits = vec![0u8; (n * t).div_ceil(8)];
    for (k, &c) in rec.correct.iter().enumerate() {
        if c {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    buf.extend_from_slice(&bits);
    for &e in &rec.error_norms {
        buf.extend_from_slice(&(e as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dynamics(path: &Path) -> Result<(DynamicsRecord, Option<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..7] != DYNAMICS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "ELFSDYN".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(7)]).into_owned(),
        });
    }
    if bytes[7] != DYNAMICS_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: u32::from(DYNAMICS_VERSION),
            found: u32::from(bytes[7]),
        });
    }
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        actual: bytes.len() as u64,
    };
    let mut off = 8;
    let read_u64 = |off: &mut usize| -> Result<u64> {
        let end = *off + 8;
        let v = bytes
            .get(*off..end)
            .ok_or_else(|| truncated(end))?
            .try_into()
            .map(u64::from_le_bytes)
            .unwrap();
        *off = end;
        Ok(v)
    };
    let n = read_u64(&mut off)? as usize;
    let t = read_u64(&mut off)? as usize;
    let flags = read_u64(&mut off)?;
    let classes = if flags & FLAG_HAS_CLASSES != 0 {
        Some(read_u64(&mut off)? as usize)
    } else {
        None
    };
    let indices = if flags & FLAG_HAS_INDICES != 0 {
        (0..n)
            .map(|_| read_u64(&mut off).map(|v| v as usize))
            .collect::<Result<_>>()?
    } else {
        (0..n).collect()
    };
    let cells = n * t;
    let expected = off + 4 * cells + cells.div_ceil(8) + 4 * cells;
    if bytes.len() != expected {
        return Err(truncated(expected));
    }
    let f32s = |start: usize| -> Vec<f64> {
        bytes[start..start + 4 * cells]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect()
    };
    let margins = f32s(off);
    let bits_start = off + 4 * cells;
    let correct = (0..cells)
        .map(|k| bytes[bits_start + k / 8] & (1 << (k % 8)) != 0)
        .collect();
    let error_norms = f32s(bits_start + cells.div_ceil(8));
    let rec = DynamicsRecord::new(indices, t, margins, correct, error_norms)?;
    Ok((rec, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetManifest, LabelKind};

    fn rec(margins: &[&[f64]]) -> DynamicsRecord {
        let t = margins[0].len();
        let flat: Vec<f64> = margins.iter().flat_map(|r| r.iter().copied()).collect();
        let correct = flat.iter().map(|&m| m > 0.0).collect();
        DynamicsRecord::new((0..margins.len()).collect(), t, flat.clone(), correct, flat).unwrap()
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[2.0, 0.0, 0.0], 0).unwrap(), 2.0);
        assert_eq!(margin(&[1.0, 1.0, 1.0], 1).unwrap(), 0.0);
        assert_eq!(margin(&[0.0, 3.0, 1.0], 0).unwrap(), -3.0);
        assert!(margin(&[0.0, 3.0], 2).is_err());
    }

    #[test]
    fn aum_examples() {
        let r = rec(&[&[0.7, 0.7, 0.7], &[1.0, -1.0, 0.0]]);
        let s = aum_scores(&r).unwrap();
        assert!((s.hardness()[0] + 0.7).abs() < 1e-15);
        assert_eq!(s.hardness()[1], 0.0);
        assert_eq!(s.metric(), Metric::Aum);
    }

    #[test]
    fn forgetting_examples() {
        let mk = |c: &[bool]| {
            DynamicsRecord::new(
                vec![0],
                c.len(),
                vec![0.0; c.len()],
                c.to_vec(),
                vec![0.0; c.len()],
            )
            .unwrap()
        };
        let s = |c: &[bool]| forgetting_scores(&mk(c)).unwrap().hardness()[0];
        assert_eq!(s(&[true, true, true]), 0.0);
        assert_eq!(s(&[true, false, true, false]), 2.0);
        assert_eq!(s(&[false, false, false]), 4.0);
        // a plateau of unchanged correctness adds nothing
        assert_eq!(s(&[true, false, true, false, false, false]), 2.0);
    }

    #[test]
    fn el2n_examples() {
        let mk = |e: Vec<f64>| {
            let t = e.len();
            DynamicsRecord::new(vec![0], t, vec![1.0; t], vec![true; t], e).unwrap()
        };
        assert_eq!(
            el2n_scores(&mk(vec![0.0; 4]), 2).unwrap().hardness()[0],
            0.0
        );
        // uniform prediction over two classes: ‖(0.5, 0.5) − (1, 0)‖ = √0.5
        let p = crate::temi::softmax(&[0.0, 0.0], 1.0);
        let norm = ((p[0] - 1.0).powi(2) + p[1].powi(2)).sqrt();
        assert!((norm - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((el2n_scores(&mk(vec![norm; 3]), 3).unwrap().hardness()[0] - 0.70711).abs() < 1e-5);
        assert!(el2n_scores(&mk(vec![0.0; 3]), 0).is_err());
        assert!(el2n_scores(&mk(vec![0.0; 3]), 4).is_err());
    }

    #[test]
    fn one_epoch_record_and_empty_subset() {
        let m = DatasetManifest {
            name: "p".into(),
            num_examples: 4,
            embed_dim: 2,
            num_classes: 2,
            normalized: false,
            seed: 0,
        };
        let store = EmbeddingStore::new(m, vec![1., 0., 0.9, 0.1, 0., 1., 0.1, 0.9]).unwrap();
        let labels = LabelVector::new(vec![0, 0, 1, 1], 2, LabelKind::Pseudo).unwrap();
        let cfg = ProbeConfig {
            epochs: 1,
            hidden_dim: 8,
            ..Default::default()
        };
        let (_, r) = train_probe_with_dynamics(&store, &labels, &[0, 1, 2, 3], &cfg).unwrap();
        assert_eq!(r.epochs(), 1);
        assert_eq!(r.len(), 4);
        assert!(matches!(
            train_probe_with_dynamics(&store, &labels, &[], &cfg),
            Err(Error::EmptySubset)
        ));
    }

    #[test]
    fn dynamics_file_round_trip() {
        let r = DynamicsRecord::new(
            vec![4, 1, 7],
            3,
            vec![0.5, -1.25, 2.0, 0.0, 1.0, 3.5, -0.5, -0.75, 1.5],
            vec![true, false, true, false, true, true, false, false, true],
            vec![0.25, 1.0, 0.125, 0.5, 0.5, 0.0, 1.25, 1.0, 0.375],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_dynamics(&r, Some(10), &p).unwrap();
        let (back, c) = read_dynamics(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(c, Some(10));
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..7], b"ELFSDYN");
        fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_dynamics(&p), Err(Error::Truncated { .. })));
    }
}
