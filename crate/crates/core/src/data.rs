//! Datasets: seeded synthetic generators, CSV ingestion/export, and
//! deterministic train/validation/test splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::mix_seed;
use crate::matrix::Matrix;
use crate::nnet::{Batch, ModelSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        let ds = Self {
            inputs,
            labels,
            class_count,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.rows() != self.labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                self.inputs.rows(),
                self.labels.len()
            )));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidArgument("a dataset needs at least 2 classes".into()));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                self.class_count
            )));
        }
        if self.len() < self.class_count {
            return Err(Error::InvalidArgument(format!(
                "{} rows cannot cover {} classes",
                self.len(),
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn binary_labels(&self) -> Vec<bool> {
        self.labels.iter().map(|&y| y == 1).collect()
    }

    /// Rows `indices` in order, keeping `class_count`.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: name.into(),
        }
    }

    /// Encodes labels for `spec`'s output layer.
    pub fn to_batch(&self, spec: &ModelSpec) -> Result<Batch> {
        Batch::from_labels(spec, self.inputs.clone(), &self.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    /// Standard deviation of every cluster along each axis.
    pub spread: f64,
    #[serde(default = "one")]
    pub clusters_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl BlobsConfig {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dims < 2 || self.per_class < 10 {
            return Err(Error::InvalidArgument(
                "blobs need classes >= 2, dims >= 2 and per_class >= 10".into(),
            ));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidArgument("spread must be finite and >= 0".into()));
        }
        if self.clusters_per_class == 0 || self.clusters_per_class > self.per_class {
            return Err(Error::InvalidArgument(
                "clusters_per_class must be in 1..=per_class".into(),
            ));
        }
        Ok(())
    }
}

/// Distinct cluster centers on the integer lattice `{-L..=L}^dims`, with `L`
/// the smallest radius that fits every center. Returns `(class, center)`,
/// `clusters_per_class` entries per class.
pub fn blob_centers(cfg: &BlobsConfig) -> Result<Vec<(usize, Vec<f64>)>> {
    cfg.validate()?;
    let total = cfg.classes * cfg.clusters_per_class;
    let mut radius = 1i64;
    while ((2 * radius + 1) as f64).powi(cfg.dims as i32) < total as f64 {
        radius += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xB10B));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(total);
    while centers.len() < total {
        let c: Vec<f64> = (0..cfg.dims)
            .map(|_| rng.random_range(-radius..=radius) as f64)
            .collect();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i / cfg.clusters_per_class, c))
        .collect())
}

/// Gaussian clusters around [`blob_centers`]; `per_class` rows per class,
/// dealt round-robin over that class's clusters. Rows are grouped by class.
pub fn gen_blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    let centers = blob_centers(cfg)?;
    let noise = Normal::new(0.0, cfg.spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xDA7A));
    let n = cfg.classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * cfg.dims);
    let mut labels = Vec::with_capacity(n);
    for class in 0..cfg.classes {
        let own = &centers[class * cfg.clusters_per_class..(class + 1) * cfg.clusters_per_class];
        for i in 0..cfg.per_class {
            let center = &own[i % cfg.clusters_per_class].1;
            data.extend(center.iter().map(|&c| c + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, cfg.dims, data)?,
        labels,
        cfg.classes,
        "blobs",
    )
}

/// Feature count of [`gen_imbalanced_binary`].
pub const IMBALANCED_DIMS: usize = 8;

/// Distance between the class means at `hardness = 0`, in units of the
/// per-axis noise.
const IMBALANCED_MAX_SEPARATION: f64 = 6.0;

/// Binary dataset with exactly `round(n · positive_frac)` positives.
///
/// Both classes are unit-variance Gaussians; the positive mean is shifted
/// along the diagonal by `(1 - hardness) · 6`, so `hardness = 1` makes the
/// classes indistinguishable. Row order is shuffled.
pub fn gen_imbalanced_binary(n: usize, positive_frac: f64, hardness: f64, seed: u64) -> Result<Dataset> {
    if !(positive_frac > 0.0 && positive_frac <= 0.5) {
        return Err(Error::InvalidArgument("positive_frac must be in (0, 0.5]".into()));
    }
    if !(0.0..=1.0).contains(&hardness) {
        return Err(Error::InvalidArgument("hardness must be in [0, 1]".into()));
    }
    let positives = (n as f64 * positive_frac).round() as usize;
    if (n as f64 * positive_frac) < 10.0 || positives < 10 {
        return Err(Error::InvalidArgument(
            "need at least 10 expected positives (n * positive_frac >= 10)".into(),
        ));
    }
    let shift = (1.0 - hardness) * IMBALANCED_MAX_SEPARATION / (IMBALANCED_DIMS as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1B));
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < positives)).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * IMBALANCED_DIMS);
    for &y in &labels {
        let offset = if y == 1 { shift } else { 0.0 };
        for _ in 0..IMBALANCED_DIMS {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z + offset);
        }
    }
    Dataset::new(Matrix::from_vec(n, IMBALANCED_DIMS, data)?, labels, 2, "imbalanced")
}

/// Reads a numeric CSV. With a header, `label_column` names the label
/// column; without one it is a 0-based column index.
pub fn load_csv(path: &Path, label_column: &str, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let (label_idx, width) = if has_header {
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let idx = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| parse_err(1, format!("no column named {label_column:?}")))?;
        (idx, Some(headers.len()))
    } else {
        let idx = label_column.parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!(
                "without a header the label column must be an index, got {label_column:?}"
            ))
        })?;
        (idx, None)
    };

    let mut width = width;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(line, format!("expected {w} fields, found {}", record.len())));
        }
        if label_idx >= w {
            return Err(parse_err(line, format!("label column {label_idx} out of range")));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?} in column {}", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell in column {}", j + 1)));
            }
            if j == label_idx {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(parse_err(line, format!("label {cell:?} is not a class index")));
                }
                labels.push(v as usize);
            } else {
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("CSV data rows"));
    }
    let dims = width.unwrap_or(1) - 1;
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(Matrix::from_vec(labels.len(), dims, data)?, labels, class_count, name)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Writes `x0,…,x{d-1},label` with a header row.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..ds.dims()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (row, y) in ds.inputs.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub stratified: bool,
}

fn yes() -> bool {
    true
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|&f| f.is_nan() || f <= 0.0) {
            return Err(Error::InvalidArgument("split fractions must be positive".into()));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `m` rows; test takes the remainder.
    fn sizes(&self, m: usize) -> (usize, usize, usize) {
        let train = ((m as f64 * self.train_frac).round() as usize).min(m);
        let val = ((m as f64 * self.val_frac).round() as usize).min(m - train);
        (train, val, m - train - val)
    }
}

/// Disjoint train/validation/test partition, deterministic in `spec.seed`.
///
/// Stratified splits apply the fractions within each class, so every class's
/// share of a part is within one row of the global fraction.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();

    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); ds.class_count];
        for (i, &y) in ds.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    } else {
        vec![(0..ds.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (tr, va, _) = spec.sizes(group.len());
        parts[0].extend_from_slice(&group[..tr]);
        parts[1].extend_from_slice(&group[tr..tr + va]);
        parts[2].extend_from_slice(&group[tr + va..]);
    }
    for (part, name) in parts.iter().zip(["train", "validation", "test"]) {
        if part.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{name} part would be empty for {} rows",
                ds.len()
            )));
        }
    }
    for part in &mut parts {
        part.shuffle(&mut rng);
    }
    let [tr, va, te] = parts;
    Ok((
        ds.subset(&tr, format!("{}-train", ds.name)),
        ds.subset(&va, format!("{}-val", ds.name)),
        ds.subset(&te, format!("{}-test", ds.name)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(classes: usize, per_class: usize, spread: f64, seed: u64) -> BlobsConfig {
        BlobsConfig {
            classes,
            dims: 4,
            per_class,
            spread,
            clusters_per_class: 2,
            seed,
        }
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let ds = gen_blobs(&blobs(2, 100, 1.0, 5)).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.class_counts(), [100, 100]);
        assert_eq!(ds, gen_blobs(&blobs(2, 100, 1.0, 5)).unwrap());
        assert_ne!(ds, gen_blobs(&blobs(2, 100, 1.0, 6)).unwrap());
    }

    #[test]
    fn tight_blobs_are_nearest_center_separable() {
        let cfg = blobs(3, 30, 1e-9, 11);
        let centers = blob_centers(&cfg).unwrap();
        let ds = gen_blobs(&cfg).unwrap();
        for (row, &y) in ds.inputs.iter_rows().zip(&ds.labels) {
            let nearest = centers
                .iter()
                .min_by(|a, b| {
                    let da: f64 = a.1.iter().zip(row).map(|(c, x)| (c - x).powi(2)).sum();
                    let db: f64 = b.1.iter().zip(row).map(|(c, x)| (c - x).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest.0, y);
        }
    }

    #[test]
    fn blob_argument_errors() {
        assert!(gen_blobs(&blobs(1, 100, 1.0, 0)).is_err());
        assert!(gen_blobs(&blobs(2, 9, 1.0, 0)).is_err());
        assert!(gen_blobs(&BlobsConfig { dims: 1, ..blobs(2, 10, 1.0, 0) }).is_err());
        assert!(gen_blobs(&blobs(2, 10, -1.0, 0)).is_err());
    }

    #[test]
    fn imbalanced_positive_count_is_exact() {
        let ds = gen_imbalanced_binary(10_000, 0.015, 0.5, 3).unwrap();
        assert_eq!(ds.class_counts()[1], 150);
        assert_eq!(ds, gen_imbalanced_binary(10_000, 0.015, 0.5, 3).unwrap());
        assert!(gen_imbalanced_binary(100, 0.05, 0.5, 3).is_err());
        assert!(gen_imbalanced_binary(100, 0.6, 0.5, 3).is_err());
        assert!(gen_imbalanced_binary(1000, 0.1, 1.5, 3).is_err());
    }

    #[test]
    fn csv_header_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b,label\n1.5,2,0\n-3,4e2,1\n").unwrap();
        let ds = load_csv(&p, "label", true).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.inputs.row(1), &[-3.0, 400.0]);

        std::fs::write(&p, "1.5,0,2\n-3,1,4\n").unwrap();
        let ds = load_csv(&p, "1", false).unwrap();
        assert_eq!(ds.labels, [0, 1]);
        assert_eq!(ds.inputs.row(0), &[1.5, 2.0]);

        std::fs::write(&p, "a,b,label\n1,2,0\n3,1\n").unwrap();
        match load_csv(&p, "label", true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "a,b,label\n1,x,0\n3,1,1\n").unwrap();
        assert!(matches!(load_csv(&p, "label", true), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "a,b,label\n1,2,0.5\n3,1,1\n").unwrap();
        assert!(load_csv(&p, "label", true).is_err());
        assert!(load_csv(&p, "missing", true).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("blobs.csv");
        let ds = gen_blobs(&blobs(3, 12, 0.7, 1)).unwrap();
        export_csv(&ds, &p).unwrap();
        let back = load_csv(&p, "label", true).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.class_count, ds.class_count);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = gen_blobs(&blobs(2, 50, 1.0, 2)).unwrap();
        let spec = SplitSpec {
            train_frac: 0.5,
            val_frac: 0.25,
            test_frac: 0.25,
            seed: 4,
            stratified: false,
        };
        let (tr, va, te) = split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (50, 25, 25));

        let mut all: Vec<Vec<u64>> = [&tr, &va, &te]
            .iter()
            .flat_map(|d| d.inputs.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut orig: Vec<Vec<u64>> = ds
            .inputs
            .iter_rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);

        assert_eq!(split(&ds, &spec).unwrap(), (tr, va, te));
    }

    #[test]
    fn split_errors() {
        let ds = gen_blobs(&blobs(2, 10, 1.0, 2)).unwrap();
        let bad = SplitSpec {
            train_frac: 0.5,
            val_frac: 0.4,
            test_frac: 0.2,
            ..SplitSpec::default()
        };
        assert!(split(&ds, &bad).is_err());
        let tiny = SplitSpec {
            train_frac: 0.98,
            val_frac: 0.01,
            test_frac: 0.01,
            seed: 0,
            stratified: false,
        };
        assert!(split(&ds, &tiny).is_err());
    }
}
