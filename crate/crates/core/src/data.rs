//! Dataset manifest, label and score vectors, and the on-disk formats they use.
//!
//! Embedding file layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ELFS"
//!      4     4  version (u32) = 1
//!      8     8  N (u64)
//!     16     8  d (u64)
//!     24     8  C (u64)
//!     32     4  flags (u32), bit0 = rows are unit-L2
//!     36  4·N·d payload, f32 row-major
//! ```
//!
//! A JSON sidecar `<basename>.manifest.json` carries the full [`DatasetManifest`].

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ELFS";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 36;
const FLAG_NORMALIZED: u32 = 1;

/// Tolerance on row norms for stores flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_examples: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub normalized: bool,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_examples == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidManifest(format!(
                "N = {} and d = {} must be positive",
                self.num_examples, self.embed_dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidManifest(format!(
                "C = {} must be at least 2",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Immutable N×d embedding matrix with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    manifest: DatasetManifest,
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// Builds a store, enforcing shape, finiteness and (when flagged) unit row norms.
    pub fn new(manifest: DatasetManifest, data: Vec<f32>) -> Result<Self> {
        manifest.validate()?;
        let expected = manifest.num_examples * manifest.embed_dim;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        let store = EmbeddingStore { manifest, data };
        store.check_finite()?;
        if store.manifest.normalized {
            store.check_normalized()?;
        }
        Ok(store)
    }

    fn check_finite(&self) -> Result<()> {
        let d = self.dim();
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            }),
            None => Ok(()),
        }
    }

    fn check_normalized(&self) -> Result<()> {
        for (row, values) in self.rows().enumerate() {
            let norm = l2_norm(values);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { row, norm });
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.num_examples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.manifest.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn is_normalized(&self) -> bool {
        self.manifest.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows at `indices`, in that order. The manifest keeps name, C and seed.
    pub fn select_rows(&self, indices: &[usize]) -> Result<EmbeddingStore> {
        if indices.is_empty() {
            return Err(Error::EmptySubset);
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidParameter(format!(
                    "row index {i} out of range for N = {}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let manifest = DatasetManifest {
            num_examples: indices.len(),
            ..self.manifest.clone()
        };
        Ok(EmbeddingStore { manifest, data })
    }
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Divides every row by its L2 norm and sets the normalized flag.
pub fn l2_normalize(store: &EmbeddingStore) -> Result<EmbeddingStore> {
    let mut data = Vec::with_capacity(store.data.len());
    for (row, values) in store.rows().enumerate() {
        let norm = l2_norm(values);
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row });
        }
        data.extend(values.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    let manifest = DatasetManifest {
        normalized: true,
        ..store.manifest.clone()
    };
    EmbeddingStore::new(manifest, data)
}

/// Path of the JSON manifest sidecar for an embedding file.
pub fn manifest_sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    // Re-check invariants here so a hand-built store cannot produce a bad file.
    store.check_finite()?;
    if store.manifest.normalized {
        store.check_normalized()?;
    }
    let m = &store.manifest;
    let mut buf = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * store.data.len());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.num_examples as u64).to_le_bytes());
    buf.extend_from_slice(&(m.embed_dim as u64).to_le_bytes());
    buf.extend_from_slice(&(m.num_classes as u64).to_le_bytes());
    let flags = if m.normalized { FLAG_NORMALIZED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    for v in &store.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let sidecar = manifest_sidecar_path(path);
    let json =
        serde_json::to_string_pretty(m).map_err(|e| Error::InvalidManifest(e.to_string()))?;
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "ELFS".into(),
            found,
        });
    }
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: EMBEDDING_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

    let version = u32_at(4);
    if version != EMBEDDING_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: EMBEDDING_VERSION,
            found: version,
        });
    }
    let n = u64_at(8);
    let d = u64_at(16);
    let c = u64_at(24);
    let flags = u32_at(32);

    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(EMBEDDING_HEADER_LEN as u64))
        .ok_or_else(|| Error::InvalidManifest(format!("header shape {n}x{d} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data: Vec<f32> = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    let sidecar = manifest_sidecar_path(path);
    let (name, seed) = match fs::read_to_string(&sidecar) {
        Ok(text) => {
            let m: DatasetManifest = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidManifest(format!("{}: {e}", sidecar.display())))?;
            (m.name, m.seed)
        }
        Err(_) => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            0,
        ),
    };
    let manifest = DatasetManifest {
        name,
        num_examples: n as usize,
        embed_dim: d as usize,
        num_classes: c as usize,
        normalized: flags & FLAG_NORMALIZED != 0,
        seed,
    };
    EmbeddingStore::new(manifest, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    GroundTruth,
    Pseudo,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::GroundTruth => "ground_truth",
            LabelKind::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
    kind: LabelKind,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize, kind: LabelKind) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidParameter(
                "num_classes must be positive".into(),
            ));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        Ok(LabelVector {
            labels,
            num_classes,
            kind,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            kind: self.kind,
        }
    }
}

/// Labels known to come from clustering. Selection code accepts only this type,
/// so ground-truth labels cannot reach it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels(LabelVector);

impl PseudoLabels {
    pub fn as_labels(&self) -> &LabelVector {
        &self.0
    }

    pub fn into_inner(self) -> LabelVector {
        self.0
    }
}

impl TryFrom<LabelVector> for PseudoLabels {
    type Error = Error;

    fn try_from(v: LabelVector) -> Result<Self> {
        match v.kind {
            LabelKind::Pseudo => Ok(PseudoLabels(v)),
            other => Err(Error::LabelKind {
                expected: LabelKind::Pseudo.as_str(),
                found: other.as_str(),
            }),
        }
    }
}

pub fn write_labels(labels: &LabelVector, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in &labels.labels {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path, num_classes: usize, kind: LabelKind) -> Result<LabelVector> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let l: usize = t
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, format!("not a class index: {t:?}")))?;
        labels.push(l);
    }
    LabelVector::new(labels, num_classes, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Aum,
    Forgetting,
    El2n,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Aum => "aum",
            Metric::Forgetting => "forgetting",
            Metric::El2n => "el2n",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aum" => Ok(Metric::Aum),
            "forgetting" => Ok(Metric::Forgetting),
            "el2n" => Ok(Metric::El2n),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Per-example difficulty; larger hardness = harder, whatever the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    metric: Metric,
    hardness: Vec<f64>,
}

impl ScoreVector {
    pub fn new(metric: Metric, hardness: Vec<f64>) -> Result<Self> {
        if let Some(row) = hardness.iter().position(|h| !h.is_finite()) {
            return Err(Error::NonFinite { row, col: 0 });
        }
        Ok(ScoreVector { metric, hardness })
    }

    /// AUM is large for easy examples, so it is negated on the way in.
    pub fn from_aum(aum: &[f64]) -> Result<Self> {
        Self::new(Metric::Aum, aum.iter().map(|a| -a).collect())
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn hardness(&self) -> &[f64] {
        &self.hardness
    }

    pub fn len(&self) -> usize {
        self.hardness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hardness.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> ScoreVector {
        ScoreVector {
            metric: self.metric,
            hardness: indices.iter().map(|&i| self.hardness[i]).collect(),
        }
    }
}

pub fn write_scores(scores: &ScoreVector, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "index,hardness").map_err(|e| Error::io(path, e))?;
    for (i, h) in scores.hardness.iter().enumerate() {
        writeln!(w, "{i},{h}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path, metric: Metric) -> Result<ScoreVector> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "index,hardness" => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::parse(path, 1, "expected header \"index,hardness\"")),
    }
    let mut hardness = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let lineno = lineno + 2;
        let (idx, h) = t
            .split_once(',')
            .ok_or_else(|| Error::parse(path, lineno, "expected \"index,hardness\""))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad index"))?;
        if idx != hardness.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("index {idx} out of order (expected {})", hardness.len()),
            ));
        }
        let h: f64 = h
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad hardness"))?;
        hardness.push(h);
    }
    ScoreVector::new(metric, hardness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize, d: usize, normalized: bool) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            num_examples: n,
            embed_dim: d,
            num_classes: 2,
            normalized,
            seed: 7,
        }
    }

    #[test]
    fn smallest_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        let store = EmbeddingStore::new(manifest(1, 1, false), vec![0.0]).unwrap();
        write_embeddings(&store, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(EMBEDDING_HEADER_LEN, 36);
        assert_eq!(bytes.len(), 36 + 4);
        assert_eq!(&bytes[..4], b"ELFS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 0);
        assert!(bytes[36..].iter().all(|&b| b == 0));
        assert_eq!(read_embeddings(&path).unwrap(), store);
    }

    #[test]
    fn normalized_flag_with_non_unit_row_rejected() {
        let m = manifest(2, 2, false);
        let store = EmbeddingStore::new(m, vec![3.0, 4.0, 0.6, 0.8]).unwrap();
        let mut bad = store.clone();
        bad.manifest.normalized = true;
        let dir = tempfile::tempdir().unwrap();
        let err = write_embeddings(&bad, &dir.path().join("x.bin")).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { row: 0, .. }));
        assert!(EmbeddingStore::new(manifest(2, 2, true), vec![3.0, 4.0, 0.6, 0.8]).is_err());
    }

    #[test]
    fn nan_rejected() {
        let err =
            EmbeddingStore::new(manifest(2, 2, false), vec![0.0, f32::NAN, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let store = EmbeddingStore::new(manifest(3, 2, false), vec![1.0; 6]).unwrap();
        write_embeddings(&store, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(Error::BadMagic { .. })
        ));

        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match read_embeddings(&path) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 4);
                let msg = read_embeddings(&path).unwrap_err().to_string();
                assert!(msg.contains(&bytes.len().to_string()), "{msg}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        let mut wrong_version = bytes.clone();
        wrong_version[4..8].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let store = EmbeddingStore::new(manifest(2, 2, false), vec![3.0, 4.0, 0.0, 2.0]).unwrap();
        let n = l2_normalize(&store).unwrap();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);

        let again = l2_normalize(&n).unwrap();
        for (a, b) in n.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).abs() <= 1e-7);
        }

        let zero =
            EmbeddingStore::new(manifest(3, 2, false), vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            l2_normalize(&zero),
            Err(Error::ZeroNorm { row: 1 })
        ));
    }

    #[test]
    fn aum_is_negated() {
        let s = ScoreVector::from_aum(&[2.0, -1.0]).unwrap();
        // lower AUM = harder = larger hardness
        assert!(s.hardness()[1] > s.hardness()[0]);
    }

    #[test]
    fn pseudo_labels_reject_ground_truth() {
        let gt = LabelVector::new(vec![0, 1], 2, LabelKind::GroundTruth).unwrap();
        assert!(PseudoLabels::try_from(gt).is_err());
        let p = LabelVector::new(vec![0, 1], 2, LabelKind::Pseudo).unwrap();
        assert!(PseudoLabels::try_from(p).is_ok());
        assert!(LabelVector::new(vec![0, 2], 2, LabelKind::Pseudo).is_err());
    }

    #[test]
    fn label_and_score_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("l.txt");
        let labels = LabelVector::new(vec![2, 0, 1, 1], 3, LabelKind::Pseudo).unwrap();
        write_labels(&labels, &lp).unwrap();
        assert_eq!(fs::read_to_string(&lp).unwrap(), "2\n0\n1\n1\n");
        assert_eq!(read_labels(&lp, 3, LabelKind::Pseudo).unwrap(), labels);

        let sp = dir.path().join("s.csv");
        let scores = ScoreVector::new(Metric::El2n, vec![0.1, 1.0 / 3.0, -2.5e-17]).unwrap();
        write_scores(&scores, &sp).unwrap();
        assert!(fs::read_to_string(&sp)
            .unwrap()
            .starts_with("index,hardness\n0,0.1\n"));
        assert_eq!(read_scores(&sp, Metric::El2n).unwrap(), scores);
    }
}
