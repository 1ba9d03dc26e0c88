//! Exact cosine k-nearest-neighbor table.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::{l2_normalize, EmbeddingStore};
use crate::error::{Error, Result};

/// Neighbor count used for datasets up to roughly 100k examples.
pub const DEFAULT_K: usize = 50;
/// Neighbor count used for million-scale datasets.
pub const DEFAULT_K_LARGE: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    neighbors: Vec<usize>,
    similarities: Vec<f64>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbor indices of `i`, most similar first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn similarities(&self, i: usize) -> &[f64] {
        &self.similarities[i * self.k..(i + 1) * self.k]
    }

    /// Builds a table from explicit rows; every row must hold exactly `k` entries.
    pub fn from_rows(k: usize, rows: Vec<(Vec<usize>, Vec<f64>)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::KOutOfRange { k, n: rows.len() });
        }
        let n = rows.len();
        let mut neighbors = Vec::with_capacity(n * k);
        let mut similarities = Vec::with_capacity(n * k);
        for (i, (idx, sim)) in rows.into_iter().enumerate() {
            if idx.len() != k || sim.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: idx.len(),
                });
            }
            if let Some(&bad) = idx.iter().find(|&&j| j >= n || j == i) {
                return Err(Error::InvalidParameter(format!(
                    "row {i} has invalid neighbor {bad}"
                )));
            }
            neighbors.extend(idx);
            similarities.extend(sim);
        }
        Ok(NeighborTable {
            k,
            neighbors,
            similarities,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header = String::from("index");
        for j in 1..=self.k {
            header.push_str(&format!(",neighbor_{j}"));
        }
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.neighbors(i).iter().map(|j| j.to_string()).collect();
            writeln!(w, "{i},{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). The CSV holds
    /// indices only, so similarities are recomputed from `store`, which must be
    /// normalized.
    pub fn read_csv(path: &Path, store: &EmbeddingStore) -> Result<Self> {
        if !store.is_normalized() {
            return Err(Error::InvalidParameter(
                "similarities need a normalized store".into(),
            ));
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "empty neighbor file")),
        };
        let k = header.split(',').count().saturating_sub(1);
        let mut rows = Vec::with_capacity(store.len());
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<usize> = line
                .split(',')
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, lineno + 2, e.to_string()))?;
            if fields.first() != Some(&rows.len()) || fields.len() != k + 1 {
                return Err(Error::parse(path, lineno + 2, "malformed neighbor row"));
            }
            let idx = fields[1..].to_vec();
            if let Some(&bad) = idx.iter().find(|&&j| j >= store.len()) {
                return Err(Error::parse(
                    path,
                    lineno + 2,
                    format!("neighbor {bad} out of range"),
                ));
            }
            let q = store.row(rows.len());
            let sim = idx
                .iter()
                .map(|&j| {
                    let s: f64 = q
                        .iter()
                        .zip(store.row(j))
                        .map(|(&a, &b)| f64::from(a) * f64::from(b))
                        .sum();
                    s.clamp(-1.0, 1.0)
                })
                .collect();
            rows.push((idx, sim));
        }
        if rows.len() != store.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: store.len(),
            });
        }
        Self::from_rows(k, rows)
    }
}

/// Descending similarity, then ascending index.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact top-`k` cosine neighbors of every row, self excluded.
///
/// The store must be normalized unless `auto_normalize` is set, in which case a
/// normalized copy is used.
pub fn build_knn(store: &EmbeddingStore, k: usize, auto_normalize: bool) -> Result<NeighborTable> {
    let n = store.len();
    if k == 0 || k >= n {
        return Err(Error::KOutOfRange { k, n });
    }
    let normalized;
    let store = if store.is_normalized() {
        store
    } else if auto_normalize {
        normalized = l2_normalize(store)?;
        &normalized
    } else {
        return Err(Error::InvalidParameter(
            "k-NN needs a normalized store (enable auto-normalize or run l2_normalize)".into(),
        ));
    };

    let d = store.dim();
    let rows: Vec<f64> = store.as_slice().iter().map(|&v| f64::from(v)).collect();

    let per_row: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = &rows[i * d..(i + 1) * d];
            let mut cand: Vec<(f64, usize)> = rows
                .chunks_exact(d)
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, r)| {
                    let s: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
                    (s.clamp(-1.0, 1.0), j)
                })
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, rank_order);
                cand.truncate(k);
            }
            cand.sort_unstable_by(rank_order);
            cand.into_iter().map(|(s, j)| (j, s)).unzip()
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut similarities = Vec::with_capacity(n * k);
    for (idx, sim) in per_row {
        neighbors.extend(idx);
        similarities.extend(sim);
    }
    Ok(NeighborTable {
        k,
        neighbors,
        similarities,
    })
}
