//! Tabular binary-classification data: loading, canonical snapshots,
//! content hashing, stratified holdout splits and stratified k-fold.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fmt_f64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("header has no target column `{0}`")]
    MissingTarget(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    ParseError {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: target value `{value}` is not 0 or 1")]
    NonBinaryTarget { line: u64, value: String },
    #[error("dataset needs at least 2 rows, got {0}")]
    EmptyData(usize),
    #[error("dataset needs at least one feature column")]
    NoFeatures,
    #[error("invalid column name `{0}`")]
    InvalidName(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("split would leave a class absent from one side")]
    DegenerateSplit,
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("a class has {min} samples, fewer than k = {k}")]
    TooFewPerClass { min: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense row-major matrix of `f64`. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(DatasetError::Shape(format!(
                "{} cells for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(DatasetError::Shape(format!(
                    "row {i} has {} cells, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.ncols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: indices.len(),
            ncols: self.ncols,
            data,
        }
    }
}

/// Immutable feature matrix plus binary labels, identified by the SHA-256 of
/// its canonical serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    target_name: String,
    rows: Matrix,
    labels: Vec<u8>,
    content_hash: String,
    source_path: Option<String>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['\t', '\n', '\r']) {
        return Err(DatasetError::InvalidName(name.to_string()));
    }
    Ok(())
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        rows: Matrix,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let target_name = target_name.into();
        if feature_names.is_empty() {
            return Err(DatasetError::NoFeatures);
        }
        let mut seen = HashSet::new();
        for name in feature_names.iter().chain(std::iter::once(&target_name)) {
            check_name(name)?;
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::InvalidName(name.clone()));
            }
        }
        if rows.ncols() != feature_names.len() {
            return Err(DatasetError::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                rows.ncols()
            )));
        }
        if labels.len() != rows.nrows() {
            return Err(DatasetError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                rows.nrows()
            )));
        }
        if rows.nrows() < 2 {
            return Err(DatasetError::EmptyData(rows.nrows()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y > 1) {
            return Err(DatasetError::NonBinaryTarget {
                line: i as u64 + 2,
                value: y.to_string(),
            });
        }
        for (k, v) in rows.as_slice().iter().enumerate() {
            if v.is_infinite() {
                return Err(DatasetError::NonFinite {
                    row: k / rows.ncols(),
                    col: k % rows.ncols(),
                });
            }
        }
        let mut ds = Dataset {
            feature_names,
            target_name,
            rows,
            labels,
            content_hash: String::new(),
            source_path: None,
        };
        ds.content_hash = hex::encode(Sha256::digest(ds.canonical_bytes()));
        Ok(ds)
    }

    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn source_path(&self) -> Option<&str> {
        self.source_path.as_deref()
    }

    /// `(count of label 0, count of label 1)`.
    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.labels)
    }

    /// Canonical serialization: tab-separated header (features then target),
    /// one line per row in stored order, shortest round-trip decimals, NaN as
    /// an empty cell, lines joined by `\n`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::with_capacity(self.rows.as_slice().len() * 8);
        out.push_str(&self.feature_names.join("\t"));
        out.push('\t');
        out.push_str(&self.target_name);
        for (row, y) in self.rows.rows().zip(&self.labels) {
            out.push('\n');
            for v in row {
                out.push_str(&fmt_f64(*v));
                out.push('\t');
            }
            let _ = write!(out, "{y}");
        }
        out.into_bytes()
    }

    /// Sub-dataset of the given rows, in the given order, with a fresh hash.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.feature_names.clone(),
            self.target_name.clone(),
            self.rows.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Hex SHA-256 of the dataset's canonical serialization.
pub fn content_hash(dataset: &Dataset) -> String {
    dataset.content_hash.clone()
}

pub fn class_counts(labels: &[u8]) -> (usize, usize) {
    let ones = labels.iter().filter(|&&y| y == 1).count();
    (labels.len() - ones, ones)
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Some(f64::NAN);
    }
    // Rust also accepts "NaN"/"inf"; only the empty cell means missing.
    let first = s.trim_start_matches(['+', '-']).chars().next()?;
    if !(first.is_ascii_digit() || first == '.') {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_label(raw: &str) -> Option<u8> {
    match parse_cell(raw) {
        Some(0.0) => Some(0),
        Some(1.0) => Some(1),
        _ => None,
    }
}

/// Loads a headed CSV file; `target_name` is split off as the label column.
pub fn load_csv(path: impl AsRef<Path>, target_name: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = header
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| DatasetError::MissingTarget(target_name.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, cell) in record.iter().enumerate() {
            if j == target_col {
                let y = parse_label(cell).ok_or_else(|| DatasetError::NonBinaryTarget {
                    line,
                    value: cell.to_string(),
                })?;
                labels.push(y);
            } else {
                let v = parse_cell(cell).ok_or_else(|| DatasetError::ParseError {
                    line,
                    column: header[j].clone(),
                    value: cell.to_string(),
                })?;
                data.push(v);
            }
        }
    }
    let n = labels.len();
    if n < 2 {
        return Err(DatasetError::EmptyData(n));
    }
    let rows = Matrix::new(n, feature_names.len(), data)?;
    Ok(Dataset::new(feature_names, target_name, rows, labels)?
        .with_source(path.display().to_string()))
}

/// Parses a canonical snapshot (the bytes produced by
/// [`Dataset::canonical_bytes`]). The last column is the label.
pub fn parse_snapshot(text: &str) -> Result<Dataset> {
    let mut lines = text.split('\n');
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    if header.len() < 2 {
        return Err(DatasetError::NoFeatures);
    }
    let (target, features) = header.split_last().expect("checked length");
    let d = features.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i as u64 + 2;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != d + 1 {
            return Err(DatasetError::Shape(format!(
                "line {lineno} has {} fields, expected {}",
                cells.len(),
                d + 1
            )));
        }
        for (j, cell) in cells[..d].iter().enumerate() {
            let v = parse_cell(cell).ok_or_else(|| DatasetError::ParseError {
                line: lineno,
                column: features[j].to_string(),
                value: cell.to_string(),
            })?;
            data.push(v);
        }
        let y = parse_label(cells[d]).ok_or_else(|| DatasetError::NonBinaryTarget {
            line: lineno,
            value: cells[d].to_string(),
        })?;
        labels.push(y);
    }
    let rows = Matrix::new(labels.len(), d, data)?;
    Dataset::new(
        features.iter().map(|s| s.to_string()).collect(),
        *target,
        rows,
        labels,
    )
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    Ok(parse_snapshot(&text)?.with_source(path.display().to_string()))
}

/// Per-class holdout sizes: largest-remainder rounding of the requested test
/// share, then clamped so every class keeps at least one row on each side.
fn holdout_counts(counts: [usize; 2], test_fraction: f64) -> [usize; 2] {
    let n = counts[0] + counts[1];
    let target = (test_fraction * n as f64).round() as usize;
    let ideal = counts.map(|c| test_fraction * c as f64);
    let mut take = ideal.map(|x| x.floor() as usize);
    let mut left = target.saturating_sub(take[0] + take[1]);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if take[c] < counts[c] {
            take[c] += 1;
            left -= 1;
        }
    }
    for c in 0..2 {
        take[c] = take[c].clamp(1, counts[c] - 1);
    }
    take
}

/// Stratified holdout split. Both parts keep the original relative row order.
pub fn split_holdout_indices(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadFraction(test_fraction));
    }
    let (c0, c1) = class_counts(labels);
    if c0 < 2 || c1 < 2 {
        return Err(DatasetError::DegenerateSplit);
    }
    let take = holdout_counts([c0, c1], test_fraction);
    let mut rng = seeded_rng(seed);
    let mut test = Vec::new();
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..take[class as usize]]);
    }
    test.sort_unstable();
    let in_test: HashSet<usize> = test.iter().copied().collect();
    let train = (0..labels.len()).filter(|i| !in_test.contains(i)).collect();
    Ok((train, test))
}

pub fn split_holdout(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_holdout_indices(dataset.labels(), test_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

/// Fold index per sample for stratified k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// `(train indices, held-out indices)` for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (held, train): (Vec<usize>, Vec<usize>) =
            (0..self.fold_of.len()).partition(|&i| self.fold_of[i] == f);
        (train, held)
    }
}

/// Shuffles each class by `seed`, then deals its samples round-robin over the
/// folds. The dealer position carries over from class 0 to class 1 so fold
/// totals stay balanced as well.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(DatasetError::BadK(k));
    }
    let (c0, c1) = class_counts(labels);
    if c0.min(c1) < k {
        return Err(DatasetError::TooFewPerClass { min: c0.min(c1), k });
    }
    let mut rng = seeded_rng(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Synthetic benchmark data: i.i.d. standard-normal features `x1..xd`, label
/// 1 iff the sum of the first `informative` features plus Gaussian noise
/// (standard deviation `noise_sd`) is positive.
pub fn synthetic(
    n: usize,
    d: usize,
    informative: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| DatasetError::Shape(e.to_string()))?;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let signal: f64 = row.iter().take(informative).sum::<f64>() + noise.sample(&mut rng);
        labels.push(u8::from(signal > 0.0));
        data.extend(row);
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Dataset::new(names, "y", Matrix::new(n, d, data)?, labels)
}

/// Renders a dataset as CSV (features then target), the input format of
/// [`load_csv`].
pub fn to_csv(dataset: &Dataset) -> String {
    let mut out = dataset.feature_names().join(",");
    out.push(',');
    out.push_str(dataset.target_name());
    out.push('\n');
    for (row, y) in dataset.rows().rows().zip(dataset.labels()) {
        for v in row {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        let _ = writeln!(out, "{y}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(labels: Vec<u8>) -> Dataset {
        let n = labels.len();
        let rows = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(vec!["a".into()], "y", rows, labels).unwrap()
    }

    #[test]
    fn csv_header_contract() {
        let f = write_tmp("f0,f1,y\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!((ds.n(), ds.d()), (4, 2));
        assert_eq!(ds.feature_names(), ["f0", "f1"]);
        assert_eq!(ds.labels(), [0, 1, 0, 1]);
    }

    #[test]
    fn target_column_may_sit_anywhere() {
        let f = write_tmp("y,f0,f1\n1,1,2\n0,3,4\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.rows().row(1), [3.0, 4.0]);
        assert_eq!(ds.labels(), [1, 0]);
    }

    #[test]
    fn empty_cell_is_nan() {
        let f = write_tmp("f0,f1,y\n1,2,0\n3,4,1\n5,,0\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert!(ds.rows().get(2, 1).is_nan());
    }

    #[test]
    fn csv_error_paths() {
        let f = write_tmp("f0,f1,y\n1,2,0\n3,4,2\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(DatasetError::NonBinaryTarget { .. })
        ));
        let f = write_tmp("f0,f1\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(DatasetError::MissingTarget(_))
        ));
        let f = write_tmp("f0,f1,y\n1,NA,0\n3,4,1\n");
        match load_csv(f.path(), "y") {
            Err(DatasetError::ParseError { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "f1");
            }
            other => panic!("{other:?}"),
        }
        let f = write_tmp("f0,y\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(DatasetError::EmptyData(1))
        ));
        let f = write_tmp("f0,y\nnan,0\n1,1\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(DatasetError::ParseError { .. })
        ));
    }

    #[test]
    fn hash_properties() {
        let a = toy(vec![0, 1, 0, 1]);
        assert_eq!(content_hash(&a), content_hash(&a.clone()));
        assert_eq!(a.content_hash().len(), 64);
        let flipped = toy(vec![0, 1, 1, 1]);
        assert_ne!(a.content_hash(), flipped.content_hash());
        let permuted = a.subset(&[1, 0, 2, 3]).unwrap();
        assert_ne!(a.content_hash(), permuted.content_hash());
    }

    #[test]
    fn canonical_form_is_exact() {
        let rows = Matrix::new(2, 2, vec![0.5, f64::NAN, -3.0, 1e-7]).unwrap();
        let ds = Dataset::new(vec!["a".into(), "b".into()], "t", rows, vec![1, 0]).unwrap();
        assert_eq!(
            String::from_utf8(ds.canonical_bytes()).unwrap(),
            "a\tb\tt\n0.5\t\t1\n-3\t0.0000001\t0"
        );
        let back = parse_snapshot(std::str::from_utf8(&ds.canonical_bytes()).unwrap()).unwrap();
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn holdout_examples() {
        let ds = toy(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        for seed in 0..20 {
            let (train, test) = split_holdout(&ds, 0.2, seed).unwrap();
            assert_eq!(test.n(), 2);
            assert_eq!(test.class_counts(), (1, 1));
            assert_eq!(train.n(), 8);
        }
        let ds = toy(vec![0, 1, 0, 1]);
        let (train, test) = split_holdout(&ds, 0.5, 3).unwrap();
        assert_eq!(train.class_counts(), (1, 1));
        assert_eq!(test.class_counts(), (1, 1));
        let ds = toy(vec![0, 0, 1]);
        for frac in [0.1, 0.5, 0.9] {
            assert!(matches!(
                split_holdout(&ds, frac, 1),
                Err(DatasetError::DegenerateSplit)
            ));
        }
    }

    #[test]
    fn holdout_is_a_partition_and_seeded() {
        let labels: Vec<u8> = (0..37).map(|i| u8::from(i % 3 == 0)).collect();
        let (a, b) = split_holdout_indices(&labels, 0.3, 9).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(b.len(), 11);
        assert_eq!(
            split_holdout_indices(&labels, 0.3, 9).unwrap(),
            (a, b.clone())
        );
        let (_, other) = split_holdout_indices(&labels, 0.3, 10).unwrap();
        assert_eq!(other.len(), b.len());
    }

    #[test]
    fn kfold_examples() {
        let f = stratified_kfold(&[0, 0, 0, 0, 1, 1, 1, 1], 4, 1).unwrap();
        for fold in 0..4 {
            let members: Vec<usize> = (0..8).filter(|&i| f.fold_of[i] == fold).collect();
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|&&i| i < 4).count(), 1);
        }
        let y: Vec<u8> = [vec![0; 3], vec![1; 7]].concat();
        assert!(matches!(
            stratified_kfold(&y, 5, 0),
            Err(DatasetError::TooFewPerClass { min: 3, k: 5 })
        ));
        let y: Vec<u8> = [vec![0; 4], vec![1; 6]].concat();
        let f = stratified_kfold(&y, 2, 7).unwrap();
        for fold in 0..2 {
            let zeros = (0..4).filter(|&i| f.fold_of[i] == fold).count();
            let ones = (4..10).filter(|&i| f.fold_of[i] == fold).count();
            assert_eq!((zeros, ones), (2, 3));
        }
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = synthetic(50, 4, 2, 0.25, 42).unwrap();
        let b = synthetic(50, 4, 2, 0.25, 42).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.feature_names()[3], "x4");
        let f = write_tmp(&to_csv(&a));
        assert_eq!(
            load_csv(f.path(), "y").unwrap().content_hash(),
            a.content_hash()
        );
    }
}
