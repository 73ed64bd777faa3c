//! Batched tensors of per-unit means and variances.

use crate::error::{Error, Result};
use crate::moments::ScalarMoments;

/// A batch of moment arrays. The first extent of `shape` is the batch size; the rest
/// is the per-item shape (e.g. `[C, H, W]` or `[features]`). Storage is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTensor {
    shape: Vec<usize>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

impl MomentTensor {
    pub fn new(shape: Vec<usize>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || means.len() != n || vars.len() != n {
            return Err(Error::Shape { expected: shape, got: vec![means.len(), vars.len()] });
        }
        if let Some(v) = vars.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("tensor variance {v} is not a finite non-negative value")));
        }
        Ok(Self { shape, means, vars })
    }

    /// Zero-variance tensor.
    pub fn deterministic(shape: Vec<usize>, means: Vec<f64>) -> Result<Self> {
        let vars = vec![0.0; means.len()];
        Self::new(shape, means, vars)
    }

    /// Every unit gets the same additional variance `var`.
    pub fn with_uniform_var(shape: Vec<usize>, means: Vec<f64>, var: f64) -> Result<Self> {
        let vars = vec![var; means.len()];
        Self::new(shape, means, vars)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, means: vec![0.0; n], vars: vec![0.0; n] }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, means: Vec<f64>, vars: Vec<f64>) -> Self {
        debug_assert_eq!(means.len(), shape.iter().product::<usize>());
        debug_assert_eq!(vars.len(), means.len());
        Self { shape, means, vars }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Shape of one batch item.
    pub fn item_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn item_means(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.means[b * n..(b + 1) * n]
    }

    pub fn item_vars(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.vars[b * n..(b + 1) * n]
    }

    pub fn get(&self, i: usize) -> ScalarMoments {
        ScalarMoments { mean: self.means[i], var: self.vars[i] }
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        (self.shape, self.means, self.vars)
    }

    /// Copies the selected batch items into a new tensor.
    pub fn select(&self, items: &[usize]) -> Self {
        let n = self.item_len();
        let mut means = Vec::with_capacity(items.len() * n);
        let mut vars = Vec::with_capacity(items.len() * n);
        for &b in items {
            means.extend_from_slice(self.item_means(b));
            vars.extend_from_slice(self.item_vars(b));
        }
        let mut shape = self.shape.clone();
        shape[0] = items.len();
        Self { shape, means, vars }
    }
}
