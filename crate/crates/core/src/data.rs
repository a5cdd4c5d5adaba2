//! Datasets, synthetic generators, file loaders and splits.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::train::Scaler;

/// Pixel statistics used to normalize MNIST-style images.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_SD: f64 = 0.3081;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Row-major `n x k` real targets.
    Values { k: usize, data: Vec<f64> },
    Labels { num_classes: usize, data: Vec<usize> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Full,
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `n x d`.
    pub features: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub targets: Targets,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Index `c` holds the name of class `c`; sorted lexicographically.
    pub class_names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn regression(features: Vec<f64>, d: usize, targets: Vec<f64>, k: usize) -> Result<Self> {
        let n = features.len().checked_div(d).unwrap_or(0);
        let ds = Dataset {
            features,
            n,
            d,
            targets: Targets::Values { k, data: targets },
            feature_names: default_names("x", d),
            target_names: default_names("y", k),
            class_names: Vec::new(),
            split: Split::Full,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn classification(
        features: Vec<f64>,
        d: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.len().checked_div(d).unwrap_or(0);
        let ds = Dataset {
            features,
            n,
            d,
            targets: Targets::Labels {
                num_classes: class_names.len(),
                data: labels,
            },
            feature_names: default_names("x", d),
            target_names: vec!["class".into()],
            class_names,
            split: Split::Full,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.features.len() != self.n * self.d {
            return Err(SpineError::Data(format!(
                "feature matrix has {} values for {} rows of {} columns",
                self.features.len(),
                self.n,
                self.d
            )));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(SpineError::Data(format!(
                "non-finite feature at row {}, column {}",
                i / self.d,
                i % self.d
            )));
        }
        match &self.targets {
            Targets::Values { k, data } => {
                if *k == 0 || data.len() != self.n * k {
                    return Err(SpineError::Data(format!(
                        "{} target values for {} rows of {k} columns",
                        data.len(),
                        self.n
                    )));
                }
                if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                    return Err(SpineError::Data(format!("non-finite target at row {}", i / k)));
                }
            }
            Targets::Labels { num_classes, data } => {
                if data.len() != self.n {
                    return Err(SpineError::Data(format!(
                        "{} labels for {} rows",
                        data.len(),
                        self.n
                    )));
                }
                if let Some(&l) = data.iter().find(|&&l| l >= *num_classes) {
                    return Err(SpineError::Data(format!(
                        "label {l} outside [0, {num_classes})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.targets, Targets::Labels { .. })
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.targets {
            Targets::Labels { num_classes, .. } => Some(num_classes),
            Targets::Values { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { data, .. } => Some(data),
            Targets::Values { .. } => None,
        }
    }

    /// Real targets and their width.
    pub fn values(&self) -> Option<(&[f64], usize)> {
        match &self.targets {
            Targets::Values { k, data } => Some((data, *k)),
            Targets::Labels { .. } => None,
        }
    }

    /// Number of model outputs this dataset calls for.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Values { k, .. } => *k,
            Targets::Labels { num_classes, .. } => *num_classes,
        }
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Values { k, data } => Targets::Values {
                k: *k,
                data: indices
                    .iter()
                    .flat_map(|&i| data[i * k..(i + 1) * k].iter().copied())
                    .collect(),
            },
            Targets::Labels { num_classes, data } => Targets::Labels {
                num_classes: *num_classes,
                data: indices.iter().map(|&i| data[i]).collect(),
            },
        };
        Dataset {
            features,
            n: indices.len(),
            d: self.d,
            targets,
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }

    /// Copy with features mapped through `scaler`.
    pub fn scaled_features(&self, scaler: &Scaler) -> Vec<f64> {
        scaler.transform(&self.features)
    }
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 {
        return vec![prefix.to_string()];
    }
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

/// Noiseless simulated regression target on `[0, 1]`.
pub fn sim_regression_target(x: f64) -> f64 {
    (20.0 * x + 3.0).sin() + 2.0 * x + 1.0 + (50.0 * x + 2.0).sin() + x.sin()
}

/// `n` grid points `x = i / (n - 1)` with targets
/// `sin(20x + 3) + 2x + 1 + sin(50x + 2) + sin(x)` plus Gaussian noise.
pub fn gen_sim_regression(n: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(SpineError::Config(format!("need at least 2 points, got {n}")));
    }
    let noise = normal(noise_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ys = xs
        .iter()
        .map(|&x| sim_regression_target(x) + noise.sample(&mut rng))
        .collect();
    Dataset::regression(xs, 1, ys, 1)
}

/// The simulated regression grid evaluated without noise.
pub fn sim_regression_noiseless(n: usize) -> Result<Dataset> {
    gen_sim_regression(n, 0.0, 0)
}

/// Two interleaved spirals in the plane. Class `A` (label 0) follows
/// `5 e^{-t} (sin 15t, cos 15t)` and class `B` (label 1)
/// `4 e^{-1.05t} (sin 15t, cos 15t)`, with `t` on a uniform grid over
/// `[0, 1]` and Gaussian noise on both coordinates.
pub fn gen_spiral(n_per_class: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(SpineError::Config(format!(
            "need at least 2 points per class, got {n_per_class}"
        )));
    }
    let noise = normal(noise_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for (label, (radius, decay)) in [(5.0, 1.0), (4.0, 1.05)].into_iter().enumerate() {
        for i in 0..n_per_class {
            let t = i as f64 / (n_per_class - 1) as f64;
            let r = radius * (-decay * t).exp();
            let (s, c) = (15.0 * t).sin_cos();
            features.push(r * s + noise.sample(&mut rng));
            features.push(r * c + noise.sample(&mut rng));
            labels.push(label);
        }
    }
    let mut ds = Dataset::classification(features, 2, labels, vec!["A".into(), "B".into()])?;
    ds.feature_names = vec!["x".into(), "y".into()];
    Ok(ds)
}

fn normal(scale: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, scale)
        .map_err(|e| SpineError::Config(format!("invalid noise scale {scale}: {e}")))
}

/// How the target column(s) of a CSV file are interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetKind {
    /// Classification when any target cell is non-numeric.
    #[default]
    Auto,
    Regression,
    Classification,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Target column names; empty means the last column.
    pub target_columns: Vec<String>,
    pub kind: TargetKind,
}

/// Reads a comma-separated file with a header row.
///
/// Class names map to labels in lexicographic order.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |line: u64, message: String| SpineError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => SpineError::io(path, io),
            other => csv_err(1, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(csv_err(1, "header needs at least one feature and one target column".into()));
    }
    let target_idx: Vec<usize> = if schema.target_columns.is_empty() {
        vec![header.len() - 1]
    } else {
        schema
            .target_columns
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| csv_err(1, format!("no column named '{name}'")))
            })
            .collect::<Result<_>>()?
    };
    let feature_idx: Vec<usize> = (0..header.len()).filter(|i| !target_idx.contains(i)).collect();
    if feature_idx.is_empty() {
        return Err(csv_err(1, "no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_targets: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(csv_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for &c in &feature_idx {
            let v: f64 = record[c].parse().map_err(|_| {
                csv_err(line, format!("column '{}': cannot parse '{}'", header[c], &record[c]))
            })?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("column '{}': non-finite value", header[c])));
            }
            features.push(v);
        }
        raw_targets.push(target_idx.iter().map(|&c| record[c].to_string()).collect());
    }
    if raw_targets.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }

    let numeric = raw_targets
        .iter()
        .all(|row| row.iter().all(|c| c.parse::<f64>().is_ok_and(f64::is_finite)));
    let classify = match schema.kind {
        TargetKind::Auto => !numeric,
        TargetKind::Classification => true,
        TargetKind::Regression => false,
    };
    let d = feature_idx.len();
    let mut ds = if classify {
        if target_idx.len() != 1 {
            return Err(csv_err(1, "classification needs exactly one target column".into()));
        }
        let names: BTreeSet<&str> = raw_targets.iter().map(|r| r[0].as_str()).collect();
        let class_names: Vec<String> = names.into_iter().map(str::to_string).collect();
        let labels = raw_targets
            .iter()
            .map(|r| class_names.binary_search(&r[0]).expect("name collected above"))
            .collect();
        Dataset::classification(features, d, labels, class_names)?
    } else {
        let mut values = Vec::with_capacity(raw_targets.len() * target_idx.len());
        for (row, cells) in raw_targets.iter().enumerate() {
            for (cell, &c) in cells.iter().zip(&target_idx) {
                let v: f64 = cell.parse().map_err(|_| {
                    csv_err(row as u64 + 2, format!("column '{}': cannot parse '{cell}'", header[c]))
                })?;
                values.push(v);
            }
        }
        Dataset::regression(features, d, values, target_idx.len())?
    };
    ds.feature_names = feature_idx.iter().map(|&i| header[i].clone()).collect();
    ds.target_names = target_idx.iter().map(|&i| header[i].clone()).collect();
    Ok(ds)
}

/// Writes features then targets with full round-trip precision; class
/// labels are written by name.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| SpineError::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file), path)
}

/// [`save_csv`] into any writer; `path` only labels errors.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, out: W, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| SpineError::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = ds.feature_names.clone();
    header.extend(ds.target_names.iter().cloned());
    w.write_record(&header).map_err(to_err)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n {
        record.clear();
        record.extend(ds.row(i).iter().map(|v| format!("{v:?}")));
        match &ds.targets {
            Targets::Values { k, data } => {
                record.extend(data[i * k..(i + 1) * k].iter().map(|v| format!("{v:?}")))
            }
            Targets::Labels { data, .. } => record.push(ds.class_names[data[i]].clone()),
        }
        w.write_record(&record).map_err(to_err)?;
    }
    w.flush().map_err(|e| SpineError::io(path, e))
}

/// Reads an IDX image file and its label file. Pixels are scaled to
/// `[0, 1]`, then standardized with the MNIST constants when `mnist_norm`.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    mnist_norm: bool,
) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = std::fs::read(images).map_err(|e| SpineError::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| SpineError::io(labels, e))?;
    let (dims, pixels) = parse_idx(images, &img, IDX_IMAGES_MAGIC, 3)?;
    let (ldims, label_bytes) = parse_idx(labels, &lab, IDX_LABELS_MAGIC, 1)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(SpineError::Idx {
            path: labels.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {n} images", ldims[0]),
        });
    }
    let d = rows * cols;
    let features = pixels
        .iter()
        .map(|&p| {
            let v = p as f64 / 255.0;
            if mnist_norm {
                (v - MNIST_MEAN) / MNIST_SD
            } else {
                v
            }
        })
        .collect();
    let labels_vec: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels_vec.iter().copied().max().map_or(0, |m| m + 1);
    let class_names = (0..num_classes).map(|c| c.to_string()).collect();
    Dataset::classification(features, d, labels_vec, class_names)
}

fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let err = |offset: usize, message: String| SpineError::Idx {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(err(0, format!("file too short for a {ndims}-dimensional header")));
    }
    let word = |o: usize| u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let found = word(0);
    if found != magic {
        return Err(err(0, format!("bad magic number: expected {magic:#010x}, found {found:#010x}")));
    }
    let dims: Vec<usize> = (0..ndims).map(|i| word(4 + 4 * i) as usize).collect();
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(err(
            header,
            format!("expected {expected} data bytes for dimensions {dims:?}, found {}", body.len()),
        ));
    }
    Ok((dims, body))
}

/// CIFAR-10 class names in label order.
pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

const CIFAR_RECORD: usize = 1 + 3072;

/// Reads a CIFAR-10 binary batch (one label byte then 3072 channel-major
/// pixel bytes per record), keeping at most `limit` records. Pixels are
/// scaled to `[0, 1]`.
pub fn load_cifar_batch(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SpineError::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(SpineError::Idx {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
            message: format!("length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        });
    }
    let n = (bytes.len() / CIFAR_RECORD).min(limit.unwrap_or(usize::MAX));
    let mut features = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).take(n).enumerate() {
        if rec[0] >= 10 {
            return Err(SpineError::Idx {
                path: path.to_path_buf(),
                offset: (i * CIFAR_RECORD) as u64,
                message: format!("label {} out of range 0..10", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        features.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Dataset::classification(features, 3072, labels, CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect())
}

/// Seeded shuffle split; `fraction` of the rows go to the training set.
///
/// Stratified splits take `round(fraction * count)` rows of every class.
pub fn split(ds: &Dataset, fraction: f64, seed: u64, stratified: bool) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SpineError::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if stratified {
        let (Some(labels), Some(k)) = (ds.labels(), ds.num_classes()) else {
            return Err(SpineError::Config("stratified split needs class labels".into()));
        };
        for c in 0..k {
            let mut idx: Vec<usize> = (0..ds.n).filter(|&i| labels[i] == c).collect();
            if idx.len() < 2 {
                return Err(SpineError::Data(format!(
                    "class '{}' has {} examples; stratification needs at least 2",
                    ds.class_names.get(c).map_or("?", String::as_str),
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let cut = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        train.shuffle(&mut rng);
        test.shuffle(&mut rng);
    } else {
        let mut idx: Vec<usize> = (0..ds.n).collect();
        idx.shuffle(&mut rng);
        let cut = (fraction * ds.n as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    let mut tr = ds.subset(&train);
    tr.split = Split::Train;
    let mut te = ds.subset(&test);
    te.split = Split::Test;
    Ok((tr, te))
}

#[cfg(test)]
// Reference values keep every digit the high-precision oracle printed.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn cifar_batch_records() {
        let mut bytes = Vec::new();
        for label in [3u8, 7] {
            bytes.push(label);
            bytes.extend((0..3072).map(|i| (i % 256) as u8));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_cifar_batch(&path, None).unwrap();
        assert_eq!((ds.n, ds.d), (2, 3072));
        assert_eq!(ds.labels().unwrap(), &[3, 7]);
        assert_eq!(ds.row(1)[255], 1.0);
        assert_eq!(load_cifar_batch(&path, Some(1)).unwrap().n, 1);
        std::fs::write(&path, &bytes[..100]).unwrap();
        assert!(load_cifar_batch(&path, None).is_err());
    }

    #[test]
    fn sim_regression_origin_value() {
        // sin 3 + 1 + sin 2, evaluated at 50 digits.
        let expected = 2.0504174348855488811;
        let ds = gen_sim_regression(11, 0.0, 1).unwrap();
        assert!((ds.values().unwrap().0[0] - expected).abs() < 1e-15);
        assert_eq!(ds.row(10), &[1.0]);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_sim_regression(50, 0.1, 3).unwrap(), gen_sim_regression(50, 0.1, 3).unwrap());
        assert_ne!(gen_sim_regression(50, 0.1, 3).unwrap(), gen_sim_regression(50, 0.1, 4).unwrap());
        assert_eq!(gen_spiral(20, 0.05, 3).unwrap(), gen_spiral(20, 0.05, 3).unwrap());
    }

    #[test]
    fn sim_regression_noise_level() {
        let ds = gen_sim_regression(100_000, 0.1, 11).unwrap();
        let ys = ds.values().unwrap().0;
        let resid: Vec<f64> = (0..ds.n).map(|i| ys[i] - sim_regression_target(ds.row(i)[0])).collect();
        let mean = resid.iter().sum::<f64>() / ds.n as f64;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ds.n - 1) as f64).sqrt();
        assert!((0.09..=0.11).contains(&sd), "{sd}");
    }

    #[test]
    fn spiral_start_points_and_counts() {
        let ds = gen_spiral(100, 0.0, 0).unwrap();
        assert_eq!(ds.row(0), &[0.0, 5.0]);
        assert_eq!(ds.row(100), &[0.0, 4.0]);
        let labels = ds.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 100);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 100);
    }

    #[test]
    fn spiral_split_sizes() {
        let ds = gen_spiral(10_000, 0.05, 0).unwrap();
        let (tr, te) = split(&ds, 0.8, 1, true).unwrap();
        assert_eq!((tr.n, te.n), (16_000, 4_000));
        let ones = tr.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 8_000);
        assert_eq!(split(&ds, 0.8, 1, true).unwrap(), (tr, te));
    }

    #[test]
    fn stratification_needs_two_per_class() {
        let ds = Dataset::classification(vec![0.0, 1.0, 2.0], 1, vec![0, 0, 1], vec!["a".into(), "b".into()])
            .unwrap();
        assert!(matches!(split(&ds, 0.5, 0, true), Err(SpineError::Data(_))));
        assert!(split(&ds, 1.0, 0, false).is_err());
    }

    #[test]
    fn csv_labels_sorted_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iris.csv");
        std::fs::write(
            &path,
            "a,b,c,d,species\n5.1,3.5,1.4,0.2,setosa\n7.0,3.2,4.7,1.4,versicolor\n\
             6.3,3.3,6.0,2.5,virginica\n4.9,3.0,1.4,0.2,setosa\n",
        )
        .unwrap();
        let ds = load_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!((ds.n, ds.d), (4, 4));
        assert_eq!(ds.labels().unwrap(), &[0, 1, 2, 0]);
        assert_eq!(ds.class_names, vec!["setosa", "versicolor", "virginica"]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n1,2\n3,oops\n").unwrap();
        let schema = CsvSchema {
            kind: TargetKind::Regression,
            ..CsvSchema::default()
        };
        let err = load_csv(&path, &schema).unwrap_err();
        assert!(matches!(err, SpineError::Csv { line: 3, .. }), "{err}");
        std::fs::write(&path, "x,y\n1,2\nabc,3\n").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(SpineError::Csv { line: 3, .. })));
        std::fs::write(&path, "x,y\n1,2\n3,4,5\n").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(SpineError::Csv { line: 3, .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        let ds = gen_sim_regression(64, 0.3, 5).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(back, ds);
        let sp = gen_spiral(16, 0.05, 5).unwrap();
        save_csv(&sp, &path).unwrap();
        assert_eq!(load_csv(&path, &CsvSchema::default()).unwrap(), sp);
    }

    fn write_idx(path: &Path, magic: u32, dims: &[u32], body: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        for d in dims {
            f.write_all(&d.to_be_bytes()).unwrap();
        }
        f.write_all(body).unwrap();
    }

    #[test]
    fn idx_fixture_loads_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&img, 0x803, &[2, 2, 2], &[0, 255, 128, 64, 1, 2, 3, 4]);
        write_idx(&lab, 0x801, &[2], &[7, 3]);
        let ds = load_idx(&img, &lab, false).unwrap();
        assert_eq!((ds.n, ds.d), (2, 4));
        assert!(ds.features.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.features[1], 1.0);
        assert_eq!(ds.labels().unwrap(), &[7, 3]);
        let norm = load_idx(&img, &lab, true).unwrap();
        assert!((norm.features[0] + MNIST_MEAN / MNIST_SD).abs() < 1e-15);
    }

    #[test]
    fn idx_bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&img, 0x801, &[1, 1, 1], &[0]);
        write_idx(&lab, 0x801, &[1], &[0]);
        let msg = load_idx(&img, &lab, false).unwrap_err().to_string();
        assert!(msg.contains("0x00000803") && msg.contains("0x00000801"), "{msg}");
    }
}
