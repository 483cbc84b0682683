use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rng_for, stream, Result, Split, TaskError};
use crate::numerics::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature scaling applied at load time. Stored with the dataset so a saved
/// file says how its values were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// `(x - mean) / std` with one pair of constants for every feature.
    Global {
        mean: f64,
        std: f64,
    },
    PerFeature {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

/// Standard MNIST pixel statistics, applied after scaling bytes to `[0, 1]`.
pub const MNIST_NORMALIZATION: Normalization = Normalization::Global {
    mean: 0.1307,
    std: 0.3081,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    fn from_fractions(total: usize, f: SplitFractions) -> Result<Self> {
        if !(f.train > 0.0 && f.val >= 0.0 && f.train + f.val <= 1.0 + 1e-12) {
            return Err(TaskError::Invalid(format!("bad split fractions {f:?}")));
        }
        let train = ((total as f64 * f.train).round() as usize).clamp(1, total);
        let val = ((total as f64 * f.val).round() as usize).min(total - train);
        Ok(Self {
            train,
            val,
            test: total - train - val,
        })
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Labelled samples stored in split order: train rows, then validation, then test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    splits: SplitSizes,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        splits: SplitSizes,
        normalization: Normalization,
    ) -> Result<Self> {
        let d = Self {
            features,
            labels,
            n_classes,
            splits,
            normalization,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        if self.features.rows() != self.labels.len() {
            return Err(TaskError::CountMismatch {
                images: self.features.rows(),
                labels: self.labels.len(),
            });
        }
        if self.splits.total() != self.labels.len() {
            return Err(TaskError::Invalid(format!(
                "split sizes {:?} do not sum to {} samples",
                self.splits,
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(TaskError::Invalid(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if !self.features.is_finite() {
            return Err(TaskError::Invalid("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn splits(&self) -> SplitSizes {
        self.splits
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        let s = self.splits;
        match split {
            Split::Train => 0..s.train,
            Split::Val => s.train..s.train + s.val,
            Split::Test => s.train + s.val..s.total(),
        }
    }

    /// Re-partitions the (already shuffled) rows with new fractions.
    pub fn with_fractions(mut self, fractions: SplitFractions) -> Result<Self> {
        self.splits = SplitSizes::from_fractions(self.len(), fractions)?;
        Ok(self)
    }

    /// Standardizes every feature with train-split statistics and records them.
    /// Constant features keep unit scale.
    pub fn standardize(mut self) -> Self {
        let (n, d) = (self.splits.train, self.n_features());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(self.features.row(i)) {
                *m += x / n as f64;
            }
        }
        let mut std = vec![0.0; d];
        for i in 0..n {
            for ((s, x), m) in std.iter_mut().zip(self.features.row(i)).zip(&mean) {
                *s += (x - m).powi(2) / n as f64;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        for i in 0..self.len() {
            for ((x, m), s) in self.features.row_mut(i).iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
        self.normalization = Normalization::PerFeature { mean, std };
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let d: Dataset = serde_json::from_str(&text)?;
        d.validate()?;
        Ok(d)
    }
}

/// Gaussian blobs with identity covariance. Class means sit at
/// `separation / sqrt(2)` along distinct orthogonal axes (random unit
/// directions when there are more classes than features), so two means are
/// `separation` apart. Classes are balanced and rows shuffled.
pub fn synthetic_classification(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 || n_features == 0 || n_classes == 0 {
        return Err(TaskError::Invalid(
            "sample, feature and class counts must be positive".into(),
        ));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(TaskError::Invalid(format!("separation must be >= 0, got {separation}")));
    }
    let mut rng = rng_for(seed, stream::DATA);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            let mut dir = vec![0.0; n_features];
            if n_classes <= n_features {
                dir[c] = 1.0;
            } else {
                for v in &mut dir {
                    *v = StandardNormal.sample(&mut rng);
                }
                let len = crate::numerics::norm(&dir).max(f64::MIN_POSITIVE);
                dir.iter_mut().for_each(|v| *v /= len);
            }
            dir.into_iter().map(|v| v * radius).collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng_for(seed, stream::SHUFFLE));
    let mut data = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for &i in &order {
        let c = i % n_classes;
        labels.push(c);
        for m in &means[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + z);
        }
    }
    let features = Matrix::new(n_samples, n_features, data).map_err(|e| TaskError::Invalid(e.to_string()))?;
    let splits = SplitSizes::from_fractions(n_samples, SplitFractions::default())?;
    Dataset::new(features, labels, n_classes, splits, Normalization::None)
}

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(TaskError::Truncated {
        offset,
        needed: 4,
        available: bytes.len().saturating_sub(offset),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(TaskError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, needed: usize) -> Result<&[u8]> {
    bytes.get(offset..offset + needed).ok_or(TaskError::Truncated {
        offset,
        needed,
        available: bytes.len().saturating_sub(offset),
    })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(TaskError::Invalid(format!("image dimensions {rows}x{cols}")));
    }
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

/// Reads an IDX image/label pair, keeps the first `limit` samples, scales
/// pixels to `[0, 1]` and then applies `normalization`. Rows keep file order.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    normalization: Normalization,
    fractions: SplitFractions,
) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| TaskError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(TaskError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    if n == 0 {
        return Err(TaskError::EmptyDataset);
    }
    let dim = images.rows * images.cols;
    let mut data: Vec<f64> = images.pixels[..n * dim].iter().map(|&p| p as f64 / 255.0).collect();
    match &normalization {
        Normalization::None => {}
        Normalization::Global { mean, std } => data.iter_mut().for_each(|x| *x = (*x - mean) / std),
        Normalization::PerFeature { mean, std } => {
            if mean.len() != dim || std.len() != dim {
                return Err(TaskError::Invalid(format!(
                    "per-feature normalization needs {dim} entries"
                )));
            }
            for row in data.chunks_mut(dim) {
                for ((x, m), s) in row.iter_mut().zip(mean).zip(std) {
                    *x = (*x - m) / s;
                }
            }
        }
    }
    let labels: Vec<usize> = labels[..n].iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::new(n, dim, data).map_err(|e| TaskError::Invalid(e.to_string()))?;
    let splits = SplitSizes::from_fractions(n, fractions)?;
    Dataset::new(features, labels, n_classes, splits, normalization)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_blob(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn labels_blob(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [LABELS_MAGIC, labels.len() as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_two_image_blob() {
        let img = parse_idx_images(&images_blob(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 255])).unwrap();
        assert_eq!((img.count, img.rows * img.cols), (2, 4));
        assert_eq!(parse_idx_labels(&labels_blob(&[3, 7])).unwrap(), vec![3, 7]);
    }

    #[test]
    fn wrong_magic_names_offset_zero() {
        let mut blob = images_blob(1, 1, 1, &[0]);
        blob[3] = 0x01;
        let err = parse_idx_images(&blob).unwrap_err();
        assert!(matches!(err, TaskError::BadMagic { found: 0x801, .. }));
        assert!(err.to_string().contains("offset 0"));
        assert!(matches!(
            parse_idx_labels(&images_blob(1, 1, 1, &[0])),
            Err(TaskError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let err = parse_idx_images(&images_blob(2, 2, 2, &[0; 5])).unwrap_err();
        assert!(matches!(
            err,
            TaskError::Truncated {
                offset: 16,
                needed: 8,
                available: 5
            }
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0]),
            Err(TaskError::Truncated { offset: 0, .. })
        ));
    }

    #[test]
    fn load_idx_normalizes_and_limits() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, images_blob(3, 1, 2, &[0, 255, 0, 0, 255, 255])).unwrap();
        std::fs::write(&lp, labels_blob(&[1, 0, 2])).unwrap();
        let d = load_idx(
            &ip,
            &lp,
            Some(2),
            MNIST_NORMALIZATION,
            SplitFractions { train: 0.5, val: 0.5 },
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_features(), 2);
        let lo = (0.0 - 0.1307) / 0.3081;
        let hi = (1.0 - 0.1307) / 0.3081;
        assert!((d.sample(0).0[0] - lo).abs() < 1e-12);
        assert!((d.sample(0).0[1] - hi).abs() < 1e-12);
        assert!((lo - -0.424).abs() < 1e-3 && (hi - 2.822).abs() < 1e-3);
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(
            d.splits(),
            SplitSizes {
                train: 1,
                val: 1,
                test: 0
            }
        );
    }

    #[test]
    fn load_idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, images_blob(2, 1, 1, &[0, 1])).unwrap();
        std::fs::write(&lp, labels_blob(&[1])).unwrap();
        let err = load_idx(&ip, &lp, None, Normalization::None, SplitFractions::default()).unwrap_err();
        assert!(matches!(err, TaskError::CountMismatch { images: 2, labels: 1 }));
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic_classification(100, 4, 3, 2.0, 5).unwrap();
        let b = synthetic_classification(100, 4, 3, 2.0, 5).unwrap();
        let bits = |d: &Dataset| d.features().as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&synthetic_classification(100, 4, 3, 2.0, 6).unwrap()));
        let counts = (0..3)
            .map(|c| a.labels().iter().filter(|&&l| l == c).count())
            .collect::<Vec<_>>();
        assert_eq!(counts, vec![34, 33, 33]);
    }

    #[test]
    fn synthetic_class_means_are_separated() {
        let d = synthetic_classification(4000, 3, 2, 6.0, 1).unwrap();
        let mut mu = [[0.0; 3]; 2];
        let mut n = [0.0; 2];
        for i in 0..d.len() {
            let (x, y) = d.sample(i);
            n[y] += 1.0;
            for j in 0..3 {
                mu[y][j] += x[j];
            }
        }
        let dist: f64 = (0..3)
            .map(|j| (mu[0][j] / n[0] - mu[1][j] / n[1]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((dist - 6.0).abs() < 0.2, "{dist}");
    }

    #[test]
    fn more_classes_than_features() {
        let d = synthetic_classification(50, 2, 5, 3.0, 0).unwrap();
        assert_eq!(d.n_classes(), 5);
        assert!(synthetic_classification(0, 2, 2, 1.0, 0).is_err());
        assert!(synthetic_classification(10, 2, 2, -1.0, 0).is_err());
    }

    #[test]
    fn splits_are_exhaustive_and_disjoint() {
        let d = synthetic_classification(101, 2, 2, 1.0, 0).unwrap();
        let (tr, va, te) = (
            d.split_range(Split::Train),
            d.split_range(Split::Val),
            d.split_range(Split::Test),
        );
        assert_eq!(tr.end, va.start);
        assert_eq!(va.end, te.start);
        assert_eq!((tr.start, te.end), (0, 101));
        assert_eq!(
            d.splits(),
            SplitSizes {
                train: 81,
                val: 10,
                test: 10
            }
        );
    }

    #[test]
    fn save_load_round_trip_keeps_normalization() {
        let d = synthetic_classification(60, 3, 2, 1.0, 2).unwrap().standardize();
        assert!(matches!(d.normalization(), Normalization::PerFeature { .. }));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        d.save(&p).unwrap();
        assert_eq!(Dataset::load(&p).unwrap(), d);
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let d = synthetic_classification(200, 2, 2, 4.0, 3).unwrap().standardize();
        let r = d.split_range(Split::Train);
        for j in 0..2 {
            let m: f64 = r.clone().map(|i| d.sample(i).0[j]).sum::<f64>() / r.len() as f64;
            let v: f64 = r.clone().map(|i| (d.sample(i).0[j] - m).powi(2)).sum::<f64>() / r.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
