//! Partition-agreement metrics: Hungarian-matched accuracy, NMI and ARI.

use crate::data::LabelVector;
use crate::error::{Error, Result};

/// Counts of (predicted, true) label pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(pred: &LabelVector, truth: &LabelVector) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        let rows = pred.num_classes();
        let cols = truth.num_classes();
        let mut counts = vec![0u64; rows * cols];
        let mut row_sums = vec![0u64; rows];
        let mut col_sums = vec![0u64; cols];
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            counts[p * cols + t] += 1;
            row_sums[p] += 1;
            col_sums[t] += 1;
        }
        Ok(ContingencyTable {
            rows,
            cols,
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    pub fn count(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.cols + truth]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Minimum-cost perfect assignment on an n×n cost matrix (row-major).
///
/// Returns `assignment[row] = col`. Shortest augmenting paths with dual
/// potentials, O(n³).
pub fn hungarian_match(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: cost.len(),
        });
    }
    if let Some(pos) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / n.max(1),
            col: pos % n.max(1),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[f64], n: usize, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[r * n + c])
        .sum()
}

/// Fraction of positions where the labels agree, without any relabeling.
pub fn plain_accuracy(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Best predicted→true class mapping (`mapping[pred] = truth`) under the
/// one-to-one agreement-maximizing assignment.
pub fn matched_mapping(pred: &LabelVector, truth: &LabelVector) -> Result<Vec<usize>> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.rows.max(table.cols);
    let mut cost = vec![0.0; n * n];
    for r in 0..table.rows {
        for c in 0..table.cols {
            cost[r * n + c] = -(table.count(r, c) as f64);
        }
    }
    let mut assignment = hungarian_match(&cost, n)?;
    assignment.truncate(table.rows);
    Ok(assignment)
}

/// Accuracy after mapping cluster ids to classes with [`hungarian_match`].
pub fn matched_accuracy(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.total == 0 {
        return Ok(0.0);
    }
    let mapping = matched_mapping(pred, truth)?;
    let agree: u64 = mapping
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t < table.cols)
        .map(|(p, &t)| table.count(p, t))
        .sum();
    Ok(agree as f64 / table.total as f64)
}

fn entropy(sums: &[u64], total: f64) -> f64 {
    sums.iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies; 0/0 is 0.
pub fn nmi(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.total == 0 {
        return Ok(0.0);
    }
    let n = t.total as f64;
    let mut mi = 0.0;
    for r in 0..t.rows {
        for c in 0..t.cols {
            let nij = t.count(r, c);
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (t.row_sums[r] as f64 * t.col_sums[c] as f64)).ln();
        }
    }
    let denom = 0.5 * (entropy(&t.row_sums, n) + entropy(&t.col_sums, n));
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    let index: f64 = t.counts.iter().map(|&c| comb2(c)).sum();
    let sum_a: f64 = t.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = t.col_sums.iter().map(|&c| comb2(c)).sum();
    let pairs = comb2(t.total);
    if pairs == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / pairs;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // only reachable when both sides are all-singletons or both are one cluster
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterQuality {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl ClusterQuality {
    pub fn compute(pred: &LabelVector, truth: &LabelVector) -> Result<Self> {
        Ok(ClusterQuality {
            acc: matched_accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
        })
    }

    pub const CSV_HEADER: &'static str = "acc,nmi,ari";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.acc, self.nmi, self.ari)
    }
}

/// Per true class: fraction of its examples whose matched prediction is wrong.
pub fn per_class_error(pred: &LabelVector, truth: &LabelVector) -> Result<Vec<f64>> {
    let table = ContingencyTable::new(pred, truth)?;
    let mapping = matched_mapping(pred, truth)?;
    let mut correct = vec![0u64; table.cols];
    for (p, &t) in mapping.iter().enumerate() {
        if t < table.cols {
            correct[t] += table.count(p, t);
        }
    }
    Ok(table
        .col_sums
        .iter()
        .zip(&correct)
        .map(|(&n, &ok)| {
            if n == 0 {
                0.0
            } else {
                1.0 - ok as f64 / n as f64
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;

    fn lv(labels: &[usize], c: usize) -> LabelVector {
        LabelVector::new(labels.to_vec(), c, LabelKind::Pseudo).unwrap()
    }

    #[test]
    fn hungarian_small_cases() {
        let n = 4;
        let mut cost = vec![1.0; n * n];
        for i in 0..n {
            cost[i * n + i] = 0.0;
        }
        let a = hungarian_match(&cost, n).unwrap();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(assignment_cost(&cost, n, &a), 0.0);

        assert_eq!(
            hungarian_match(&[0.0, 1.0, 1.0, 0.0], 2).unwrap(),
            vec![0, 1]
        );
        assert_eq!(
            hungarian_match(&[5.0, 1.0, 1.0, 5.0], 2).unwrap(),
            vec![1, 0]
        );
        assert!(hungarian_match(&[0.0, 1.0, 2.0], 2).is_err());
        assert!(hungarian_match(&[0.0, f64::NAN, 1.0, 0.0], 2).is_err());
    }

    #[test]
    fn matched_accuracy_relabeling() {
        let truth = lv(&[0, 0, 1, 1, 2, 2, 2], 3);
        assert_eq!(matched_accuracy(&truth, &truth).unwrap(), 1.0);
        let perm = [2, 0, 1];
        let relabeled = lv(
            &truth.labels().iter().map(|&l| perm[l]).collect::<Vec<_>>(),
            3,
        );
        assert_eq!(matched_accuracy(&relabeled, &truth).unwrap(), 1.0);
        assert!(plain_accuracy(&relabeled, &truth).unwrap() < 1.0);
        assert!(matched_accuracy(&lv(&[0], 2), &truth).is_err());
    }

    #[test]
    fn nmi_cases() {
        let a = lv(&[0, 0, 1, 1], 2);
        assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let constant = lv(&[0, 0, 0, 0], 2);
        assert_eq!(nmi(&constant, &a).unwrap(), 0.0);
        assert_eq!(nmi(&constant, &constant).unwrap(), 0.0);
    }

    #[test]
    fn ari_cases() {
        let a = lv(&[0, 0, 1, 1], 2);
        assert!((ari(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let constant = lv(&[0, 0, 0, 0], 2);
        assert_eq!(ari(&constant, &a).unwrap(), 0.0);
        assert_eq!(ari(&constant, &constant).unwrap(), 1.0);
    }

    #[test]
    fn per_class_error_rates() {
        let truth = lv(&[0, 0, 1, 1], 2);
        let pred = lv(&[1, 1, 0, 1], 2);
        let err = per_class_error(&pred, &truth).unwrap();
        assert_eq!(err, vec![0.0, 0.5]);
    }

    #[test]
    fn csv_row_shape() {
        let a = lv(&[0, 1], 2);
        let q = ClusterQuality::compute(&a, &a).unwrap();
        assert_eq!(q.csv_row(), "1,1,1");
    }
}
