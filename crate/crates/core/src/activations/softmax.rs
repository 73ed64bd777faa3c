//! Approximate expected softmax posteriors for uncertain logits.

use crate::error::{Error, Result};
use crate::kernels::{inverse_mills, log_std_normal_cdf, logsumexp_unchecked, std_normal_cdf, SIGMA_S_SQ};
use crate::moments::{ClassPosterior, ScalarMoments};

/// How the posterior over classes is formed from per-logit moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SoftmaxVariant {
    /// Softmax of the means; variances are ignored.
    Standard,
    /// Pairwise-probit product under normal noise, renormalised.
    Normal,
    /// Pairwise logistic form, renormalised.
    Logistic,
    /// Softmax of variance-scaled means `μ_k / √(σ_k²/σ_S² + 1)`.
    #[default]
    Simplified,
}

fn validate(logits: &[ScalarMoments]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::domain(format!("softmax needs at least 2 classes, got {}", logits.len())));
    }
    if let Some(bad) = logits.iter().find(|m| !m.mean.is_finite() || !m.var.is_finite() || m.var < 0.0) {
        return Err(Error::domain(format!("invalid logit moments {bad:?}")));
    }
    Ok(())
}

/// Unnormalised log-weights for each class.
fn pre_log_weights(logits: &[ScalarMoments], variant: SoftmaxVariant) -> Vec<f64> {
    let n = logits.len();
    match variant {
        SoftmaxVariant::Standard => logits.iter().map(|m| m.mean).collect(),
        SoftmaxVariant::Simplified => logits.iter().map(|m| m.mean / (m.var / SIGMA_S_SQ + 1.0).sqrt()).collect(),
        SoftmaxVariant::Logistic => {
            let mut d = vec![0.0; n];
            (0..n)
                .map(|y| {
                    for (k, dk) in d.iter_mut().enumerate() {
                        *dk = pair_logistic(logits, k, y).0;
                    }
                    -logsumexp_unchecked(&d)
                })
                .collect()
        }
        SoftmaxVariant::Normal => (0..n)
            .map(|y| (0..n).filter(|&k| k != y).map(|k| log_std_normal_cdf(pair_normal(logits, y, k).0)).sum())
            .collect(),
    }
}

/// `((μ_k − μ_y)/c, c)` with `c = √((σ_k² + σ_y²)/σ_S² + 1)`.
fn pair_logistic(logits: &[ScalarMoments], k: usize, y: usize) -> (f64, f64) {
    let c = ((logits[k].var + logits[y].var) / SIGMA_S_SQ + 1.0).sqrt();
    ((logits[k].mean - logits[y].mean) / c, c)
}

/// `((μ_y − μ_k)/r, r)` with `r = √(σ_y² + σ_k² + σ_S²)`.
fn pair_normal(logits: &[ScalarMoments], y: usize, k: usize) -> (f64, f64) {
    let r = (logits[y].var + logits[k].var + SIGMA_S_SQ).sqrt();
    ((logits[y].mean - logits[k].mean) / r, r)
}

/// Class posterior from logit moments, renormalised in the log domain.
pub fn softmax_posterior(logits: &[ScalarMoments], variant: SoftmaxVariant) -> Result<ClassPosterior> {
    validate(logits)?;
    ClassPosterior::from_log_weights(pre_log_weights(logits, variant))
}

/// Gradient of `Σ_y g_y · log p_y` with respect to each logit's (mean, var).
pub fn softmax_posterior_vjp(
    logits: &[ScalarMoments],
    variant: SoftmaxVariant,
    g_log_probs: &[f64],
) -> Result<Vec<(f64, f64)>> {
    validate(logits)?;
    let n = logits.len();
    if g_log_probs.len() != n {
        return Err(Error::Shape { expected: vec![n], got: vec![g_log_probs.len()] });
    }
    let pre = pre_log_weights(logits, variant);
    let z = logsumexp_unchecked(&pre);
    let total: f64 = g_log_probs.iter().sum();
    // Gradient through the final renormalisation.
    let g_pre: Vec<f64> = g_log_probs.iter().zip(&pre).map(|(g, l)| g - (l - z).exp() * total).collect();
    let mut out = vec![(0.0, 0.0); n];
    match variant {
        SoftmaxVariant::Standard => {
            for (o, g) in out.iter_mut().zip(&g_pre) {
                o.0 = *g;
            }
        }
        SoftmaxVariant::Simplified => {
            for ((o, g), m) in out.iter_mut().zip(&g_pre).zip(logits) {
                let c2 = m.var / SIGMA_S_SQ + 1.0;
                let c = c2.sqrt();
                let zk = m.mean / c;
                o.0 = g / c;
                o.1 = -g * zk / (2.0 * c2 * SIGMA_S_SQ);
            }
        }
        SoftmaxVariant::Logistic => {
            let mut d = vec![0.0; n];
            let mut c = vec![0.0; n];
            for y in 0..n {
                for k in 0..n {
                    (d[k], c[k]) = pair_logistic(logits, k, y);
                }
                let lse = logsumexp_unchecked(&d);
                for k in 0..n {
                    if k == y {
                        continue;
                    }
                    // pre_y = −lse(d); ∂pre_y/∂d_k = −w_k.
                    let w = (d[k] - lse).exp();
                    let gd = -g_pre[y] * w;
                    out[k].0 += gd / c[k];
                    out[y].0 -= gd / c[k];
                    let gv = -gd * d[k] / (2.0 * c[k] * c[k] * SIGMA_S_SQ);
                    out[k].1 += gv;
                    out[y].1 += gv;
                }
            }
        }
        SoftmaxVariant::Normal => {
            for y in 0..n {
                for k in 0..n {
                    if k == y {
                        continue;
                    }
                    let (e, r) = pair_normal(logits, y, k);
                    let ge = g_pre[y] * inverse_mills(e);
                    out[y].0 += ge / r;
                    out[k].0 -= ge / r;
                    let gv = -ge * e / (2.0 * r * r);
                    out[y].1 += gv;
                    out[k].1 += gv;
                }
            }
        }
    }
    Ok(out)
}

/// Probability that class `y` wins under the pairwise normal form without renormalising.
/// Exposed for diagnostics.
pub fn pairwise_win_probability(logits: &[ScalarMoments], y: usize) -> f64 {
    (0..logits.len()).filter(|&k| k != y).map(|k| std_normal_cdf(pair_normal(logits, y, k).0)).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(mean: f64, var: f64) -> ScalarMoments {
        ScalarMoments { mean, var }
    }

    const ALL: [SoftmaxVariant; 4] =
        [SoftmaxVariant::Standard, SoftmaxVariant::Normal, SoftmaxVariant::Logistic, SoftmaxVariant::Simplified];

    #[test]
    fn normalised_and_finite() {
        let logits = [m(1.0, 0.5), m(-2.0, 3.0), m(0.3, 0.0), m(40.0, 1.0)];
        for v in ALL {
            let p = softmax_posterior(&logits, v).unwrap();
            let s: f64 = p.probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{v:?}");
            assert!(p.log_probs().iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn zero_variance_reduces_to_softmax_for_logistic_forms() {
        let logits = [m(1.0, 0.0), m(-0.5, 0.0), m(2.0, 0.0)];
        let std = softmax_posterior(&logits, SoftmaxVariant::Standard).unwrap();
        for v in [SoftmaxVariant::Logistic, SoftmaxVariant::Simplified] {
            let p = softmax_posterior(&logits, v).unwrap();
            for (a, b) in p.probs().iter().zip(std.probs()) {
                assert!((a - b).abs() < 1e-12, "{v:?}");
            }
        }
    }

    #[test]
    fn equal_logits_are_uniform() {
        let logits = [m(0.7, 2.0); 5];
        for v in ALL {
            for p in softmax_posterior(&logits, v).unwrap().probs() {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(softmax_posterior(&[m(0.0, 1.0)], SoftmaxVariant::Logistic).is_err());
        assert!(softmax_posterior(&[m(0.0, -1.0), m(0.0, 1.0)], SoftmaxVariant::Normal).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let logits = vec![m(0.4, 0.7), m(-1.2, 2.1), m(0.9, 0.3)];
        let g = [0.3, -1.1, 0.5];
        let objective = |l: &[ScalarMoments], v| -> f64 {
            softmax_posterior(l, v).unwrap().log_probs().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for v in ALL {
            let grad = softmax_posterior_vjp(&logits, v, &g).unwrap();
            for i in 0..logits.len() {
                for which in 0..2 {
                    let mut up = logits.clone();
                    let mut dn = logits.clone();
                    if which == 0 {
                        up[i].mean += h;
                        dn[i].mean -= h;
                    } else {
                        up[i].var += h;
                        dn[i].var -= h;
                    }
                    let fd = (objective(&up, v) - objective(&dn, v)) / (2.0 * h);
                    let got = if which == 0 { grad[i].0 } else { grad[i].1 };
                    assert!((fd - got).abs() < 1e-6, "{v:?} logit {i} part {which}: {got} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn pairwise_win_probability_two_classes() {
        let logits = [m(1.0, 0.5), m(0.0, 0.5)];
        let p = pairwise_win_probability(&logits, 0);
        assert!((p - std_normal_cdf(1.0 / (1.0 + SIGMA_S_SQ).sqrt())).abs() < 1e-12);
    }
}
