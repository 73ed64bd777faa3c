//! Monte-Carlo reference estimates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments::{ClassPosterior, ScalarMoments};
use crate::network::{item_rng, Network, PropagationMode};
use crate::tensor::MomentTensor;

/// Samples per accumulation chunk; chunks are merged in index order.
const CHUNK: usize = 16;

/// Running mean and population variance (Welford), mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance (divides by n).
    pub fn var(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }
}

/// Element-wise running moments over equally shaped arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningArray {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningArray {
    pub fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let d = x - *m;
            *m += d * inv;
            *s += d * (x - *m);
        }
    }

    pub fn merge(&mut self, other: &RunningArray) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n = self.n + other.n;
        let (a, b) = (self.n as f64, other.n as f64);
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * b / n as f64;
            self.m2[i] += other.m2[i] + d * d * a * b / n as f64;
        }
        self.n = n;
    }

    pub fn estimate(&self) -> MCEstimate {
        let n = self.n.max(1) as f64;
        let vars: Vec<f64> = self.m2.iter().map(|s| (s / n).max(0.0)).collect();
        let standard_errors = vars.iter().map(|v| (v / n).sqrt()).collect();
        MCEstimate { means: self.mean.clone(), vars, n_samples: self.n as usize, standard_errors }
    }
}

/// Sample means and variances with standard errors `√(var/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MCEstimate {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub n_samples: usize,
    pub standard_errors: Vec<f64>,
}

impl MCEstimate {
    pub fn stds(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.sqrt()).collect()
    }

    pub fn get(&self, i: usize) -> ScalarMoments {
        ScalarMoments { mean: self.means[i], var: self.vars[i] }
    }
}

/// Laplace smoothing `(p + ε)/(1 + Kε)` with `ε = 1/(10 n)`.
pub fn smooth_frequencies(freqs: &[f64], n_samples: usize) -> Result<ClassPosterior> {
    let eps = 1.0 / (10.0 * n_samples as f64);
    let norm = 1.0 + freqs.len() as f64 * eps;
    ClassPosterior::from_probs(&freqs.iter().map(|p| (p + eps) / norm).collect::<Vec<_>>())
}

/// Per-point Monte-Carlo estimates for a network.
#[derive(Debug, Clone)]
pub struct McPropagation {
    /// One estimate per network point (`[input, after layer 0, ...]`), flattened over the batch.
    pub layers: Vec<MCEstimate>,
    /// Smoothed average of the per-sample softmax outputs, per batch item.
    pub posteriors: Option<Vec<ClassPosterior>>,
}

/// Runs `n_samples` SAMPLE-mode passes; sample `s` uses noise stream `s` of `seed`.
pub fn mc_propagate(net: &Network, input: &MomentTensor, n_samples: usize, seed: u64) -> Result<McPropagation> {
    if n_samples < 2 {
        return Err(Error::domain(format!("Monte-Carlo needs at least 2 samples, got {n_samples}")));
    }
    let batch = input.batch();
    let sizes: Vec<usize> = net.shapes().iter().map(|s| s.iter().product::<usize>() * batch).collect();
    let has_head = net.config().has_head();
    let n_cls = if has_head { *sizes.last().unwrap_or(&0) } else { 0 };
    let chunks: Vec<Result<(Vec<RunningArray>, Vec<f64>)>> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc: Vec<RunningArray> = sizes.iter().map(|&n| RunningArray::new(n)).collect();
            let mut probs = vec![0.0; n_cls];
            for s in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let rec = net.forward(input, PropagationMode::Sample { seed, stream: s as u64 })?;
                for (a, t) in acc.iter_mut().zip(&rec.tensors) {
                    a.push(t.means());
                }
                if has_head {
                    probs.iter_mut().zip(rec.output().means()).for_each(|(p, x)| *p += x);
                }
            }
            Ok((acc, probs))
        })
        .collect();
    let mut total: Vec<RunningArray> = sizes.iter().map(|&n| RunningArray::new(n)).collect();
    let mut probs = vec![0.0; n_cls];
    for chunk in chunks {
        let (acc, p) = chunk?;
        for (t, a) in total.iter_mut().zip(&acc) {
            t.merge(a);
        }
        probs.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    let posteriors = if has_head {
        let k = n_cls / batch.max(1);
        Some(
            probs
                .chunks(k)
                .map(|p| {
                    let freqs: Vec<f64> = p.iter().map(|x| x / n_samples as f64).collect();
                    smooth_frequencies(&freqs, n_samples)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(McPropagation { layers: total.iter().map(RunningArray::estimate).collect(), posteriors })
}

/// Monte-Carlo estimate of `E[argmax_k (X_k + Γ_k)]` with `X_k ~ N(μ_k, σ_k²)` and
/// standard Gumbel `Γ_k`, returned as smoothed class frequencies.
pub fn mc_softmax_gumbel(logits: &[ScalarMoments], n_samples: usize, seed: u64) -> Result<ClassPosterior> {
    if logits.len() < 2 {
        return Err(Error::domain("Gumbel oracle needs at least 2 classes"));
    }
    if n_samples == 0 {
        return Err(Error::domain("Gumbel oracle needs samples"));
    }
    let k = logits.len();
    let counts: Vec<Vec<u64>> = (0..n_samples.div_ceil(4096))
        .into_par_iter()
        .map(|c| {
            let mut rng = item_rng(seed, 0x6b5f, c as u64);
            let mut counts = vec![0u64; k];
            for _ in c * 4096..((c + 1) * 4096).min(n_samples) {
                let mut best = (0, f64::NEG_INFINITY);
                for (i, m) in logits.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let v = m.mean + m.var.sqrt() * z - (-u.ln()).ln();
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                counts[best.0] += 1;
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; k];
    for c in counts {
        total.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    let freqs: Vec<f64> = total.iter().map(|&c| c as f64 / n_samples as f64).collect();
    smooth_frequencies(&freqs, n_samples)
}
