//! Per-unit moment types.

use crate::error::{Error, Result};
use crate::kernels::logsumexp_unchecked;

/// Mean and variance of one unit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarMoments {
    pub mean: f64,
    pub var: f64,
}

impl ScalarMoments {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var < 0.0 {
            return Err(Error::domain(format!("invalid moments (mean {mean}, var {var})")));
        }
        Ok(Self { mean, var })
    }

    /// A point mass at `mean`.
    pub const fn deterministic(mean: f64) -> Self {
        Self { mean, var: 0.0 }
    }

    pub(crate) fn clamped(mean: f64, var: f64) -> Self {
        Self { mean, var: var.max(0.0) }
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Moments of a {0,1}-valued unit: the variance is implied by the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMoments {
    pub mean: f64,
}

impl BinaryMoments {
    pub fn var(&self) -> f64 {
        self.mean * (1.0 - self.mean)
    }

    pub fn moments(&self) -> ScalarMoments {
        ScalarMoments { mean: self.mean, var: self.var() }
    }
}

impl From<BinaryMoments> for ScalarMoments {
    fn from(b: BinaryMoments) -> Self {
        b.moments()
    }
}

/// A categorical distribution stored as natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    log_probs: Vec<f64>,
}

impl ClassPosterior {
    /// Normalises arbitrary log-weights in the log domain.
    pub fn from_log_weights(mut log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::Empty("class posterior with no classes"));
        }
        let z = logsumexp_unchecked(&log_weights);
        if !z.is_finite() {
            return Err(Error::domain("class posterior weights do not normalise"));
        }
        for l in &mut log_weights {
            *l -= z;
        }
        Ok(Self { log_probs: log_weights })
    }

    /// Wraps log-probabilities that are already normalised.
    pub(crate) fn from_normalized(log_probs: Vec<f64>) -> Self {
        Self { log_probs }
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.log_probs.len()
    }

    pub fn argmax(&self) -> usize {
        self.log_probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
            .0
    }
}
