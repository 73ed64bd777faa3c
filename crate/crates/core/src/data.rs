//! MNIST IDX ingestion, synthetic blobs, splits and dataset statistics.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mc::RunningMoments;
use crate::moments::ScalarMoments;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
pub const DATA_DIR_ENV: &str = "MOMENTFLOW_DATA_DIR";
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Labelled items stored row-major, one `image_shape` block per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_shape: Vec<usize>,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(image_shape: Vec<usize>, images: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n: usize = image_shape.iter().product();
        if n == 0 || images.len() != n * labels.len() {
            return Err(Error::Shape { expected: vec![labels.len(), n], got: vec![images.len()] });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label { label, classes: num_classes });
        }
        Ok(Self { image_shape, images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.item_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn subset(&self, items: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(items.len() * self.item_len());
        for &i in items {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            image_shape: self.image_shape.clone(),
            images,
            labels: items.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` items.
    pub fn head(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Same data viewed with another item shape of equal size, e.g. `[784]` for `[1, 28, 28]`.
    pub fn reshaped(&self, image_shape: &[usize]) -> Result<Dataset> {
        if image_shape.iter().product::<usize>() != self.item_len() {
            return Err(Error::Shape { expected: self.image_shape.clone(), got: image_shape.to_vec() });
        }
        Ok(Dataset { image_shape: image_shape.to_vec(), ..self.clone() })
    }
}

/// Train/validation partition of item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Seeded shuffle of `0..n`; the last `round(n · val_fraction)` indices form the validation split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::domain(format!("validation fraction must lie in [0, 1), got {val_fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let val = idx.split_off(n - n_val);
    Ok(Split { train: idx, val })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

fn header(path: &Path, bytes: &[u8], words: usize, magic: u32) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Truncated { path: path.to_path_buf(), needed: 4 * words, found: bytes.len() });
    }
    let vals: Vec<u32> = bytes[..4 * words].chunks(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]])).collect();
    if vals[0] != magic {
        return Err(Error::BadMagic { path: path.to_path_buf(), found: vals[0], expected: magic });
    }
    Ok(vals)
}

/// Parses an IDX image file (`u8`, big-endian header with magic 2051).
/// Returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let h = header(path, bytes, 4, IMAGES_MAGIC)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated { path: path.to_path_buf(), needed, found: bytes.len() });
    }
    let pixels = bytes[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

/// Parses an IDX label file (magic 2049).
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let h = header(path, bytes, 2, LABELS_MAGIC)?;
    let count = h[1] as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated { path: path.to_path_buf(), needed, found: bytes.len() });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair as single-channel `1×rows×cols` items.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_file(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::CountMismatch { images: count, labels: labels.len() });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(vec![1, rows, cols], pixels, labels, num_classes)
}

/// Data directory: the explicit path, else `$MOMENTFLOW_DATA_DIR`, else `data/mnist`.
pub fn data_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match env::var_os(DATA_DIR_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from("data/mnist"),
    }
}

/// Loads the MNIST training files from a directory.
pub fn load_mnist_train(dir: &Path) -> Result<Dataset> {
    load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))
}

/// Unit-variance Gaussian blobs. Class centres are pairwise `separation` apart: on a
/// scaled simplex when `dim ≥ n_classes`, otherwise evenly spaced along the first axis.
/// Features are unbounded (they are not pixel intensities).
pub fn make_synthetic_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(separation > 0.0) {
        return Err(Error::domain(format!("separation must be positive, got {separation}")));
    }
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::Empty("synthetic blob split"));
    }
    let center = |c: usize| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        if dim >= n_classes {
            v[c] = separation / std::f64::consts::SQRT_2;
        } else {
            v[0] = c as f64 * separation;
        }
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for _ in 0..n_per_class {
        for c in 0..n_classes {
            for x in center(c) {
                let z: f64 = StandardNormal.sample(&mut rng);
                images.push(x + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(vec![dim], images, labels, n_classes.max(2))
}

/// Per-channel statistics over all items and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub channels: Vec<ScalarMoments>,
}

/// Single-pass per-channel mean and population variance. Channels are the leading extent
/// of the item shape.
pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset split"));
    }
    let c = ds.image_shape[0];
    let plane = ds.item_len() / c;
    let mut acc = vec![RunningMoments::default(); c];
    for i in 0..ds.len() {
        for (ch, a) in acc.iter_mut().enumerate() {
            for &x in &ds.image(i)[ch * plane..(ch + 1) * plane] {
                a.push(x);
            }
        }
    }
    Ok(DatasetStats { channels: acc.iter().map(|a| ScalarMoments { mean: a.mean(), var: a.var() }).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(magic: u32, count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [magic, count, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn parses_images_and_rejects_bad_files() {
        let p = Path::new("x");
        let bytes = idx_images(2051, 2, 1, 2, &[0, 255, 51, 102]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let (count, rows, cols, px) = parse_idx_images(p, &bytes).unwrap();
        assert_eq!((count, rows, cols), (2, 1, 2));
        assert_eq!(px, vec![0.0, 1.0, 0.2, 0.4]);
        let bad = idx_images(2050, 2, 1, 2, &[0; 4]);
        assert!(matches!(parse_idx_images(p, &bad), Err(Error::BadMagic { found: 2050, .. })));
        let short = idx_images(2051, 3, 1, 2, &[0; 4]);
        assert!(matches!(parse_idx_images(p, &short), Err(Error::Truncated { needed: 22, found: 20, .. })));
        assert!(matches!(parse_idx_images(p, &[0, 0]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn load_idx_pair_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::File::create(&img).unwrap().write_all(&idx_images(2051, 2, 1, 1, &[0, 255])).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&2049u32.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[3, 7]);
        fs::write(&lab, &labels).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.image_shape, vec![1, 1, 1]);
        assert_eq!(ds.labels, vec![3, 7]);
        labels[7] = 3;
        labels.push(1);
        fs::write(&lab, &labels).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::CountMismatch { images: 2, labels: 3 })));
    }

    #[test]
    fn blobs_are_deterministic_and_validated() {
        let a = make_synthetic_blobs(3, 10, 4, 10.0, 5).unwrap();
        let b = make_synthetic_blobs(3, 10, 4, 10.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(make_synthetic_blobs(3, 0, 4, 10.0, 5).is_err());
        assert!(make_synthetic_blobs(3, 5, 4, 0.0, 5).is_err());
    }

    #[test]
    fn blobs_are_separable_by_perceptron() {
        let ds = make_synthetic_blobs(2, 200, 3, 10.0, 1).unwrap();
        // Multi-pass perceptron on the raw features with a bias term.
        let mut w = [0.0f64; 4];
        let mut converged = false;
        for _ in 0..100 {
            let mut mistakes = 0;
            for i in 0..ds.len() {
                let x = ds.image(i);
                let y = if ds.labels[i] == 1 { 1.0 } else { -1.0 };
                let s = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3];
                if y * s <= 0.0 {
                    mistakes += 1;
                    for k in 0..3 {
                        w[k] += y * x[k];
                    }
                    w[3] += y;
                }
            }
            if mistakes == 0 {
                converged = true;
                break;
            }
        }
        assert!(converged);
    }

    #[test]
    fn stats_examples() {
        let ds = Dataset::new(vec![1, 2, 2], vec![0.7; 12], vec![0, 1, 0], 2).unwrap();
        let s = dataset_stats(&ds).unwrap();
        assert!((s.channels[0].mean - 0.7).abs() < 1e-15 && s.channels[0].var.abs() < 1e-15);
        let ds = Dataset::new(vec![1], vec![0.0, 1.0], vec![0, 1], 2).unwrap();
        let s = dataset_stats(&ds).unwrap();
        assert_eq!(s.channels[0], ScalarMoments { mean: 0.5, var: 0.25 });
        let empty = Dataset::new(vec![1], vec![], vec![], 2).unwrap();
        assert!(dataset_stats(&empty).is_err());
    }

    #[test]
    fn blob_stats_match_generator() {
        let ds = make_synthetic_blobs(2, 5000, 2, 4.0, 3).unwrap();
        // Feature 0 mixes centre 0 and separation/√2 with unit noise.
        let c = 4.0 / std::f64::consts::SQRT_2;
        let want_mean = c / 2.0;
        let want_var = 1.0 + c * c / 4.0;
        let mut a = RunningMoments::default();
        for i in 0..ds.len() {
            a.push(ds.image(i)[0]);
        }
        let se = (want_var / ds.len() as f64).sqrt();
        assert!((a.mean() - want_mean).abs() < 4.0 * se);
        assert!((a.var() - want_var).abs() / want_var < 0.05);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_indices(100, 0.1, 3).unwrap();
        assert_eq!(a, split_indices(100, 0.1, 3).unwrap());
        assert_eq!(a.val.len(), 10);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(a, split_indices(100, 0.1, 4).unwrap());
    }
}
