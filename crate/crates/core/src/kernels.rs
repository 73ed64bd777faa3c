//! Scalar special functions shared by every moment formula.
//!
//! All functions are pure and total on their documented domains.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use crate::error::{Error, Result};

/// Variance of the standard logistic distribution, π²/3.
pub const SIGMA_S_SQ: f64 = PI * PI / 3.0;

/// Standard deviation of the standard logistic distribution, π/√3.
pub const SIGMA_S: f64 = 1.813_799_364_234_217_8;

/// Slope constant of the logistic fit `S(a / t)` to the ReLU variance function.
pub const T_RELU_FIT: f64 = 0.3729;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const PI_SQ_OVER_6: f64 = PI * PI / 6.0;

/// Distribution constants used throughout the moment formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub sigma_s_sq: f64,
    pub t_relu_fit: f64,
}

impl KernelConstants {
    pub const STANDARD: KernelConstants = KernelConstants { sigma_s_sq: SIGMA_S_SQ, t_relu_fit: T_RELU_FIT };
}

impl Default for KernelConstants {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Which form of the ReLU variance function `R(a)` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RVariant {
    /// `aδ(a) + (a²+1)Φ(a) − (aΦ(a)+δ(a))²`, clamped at zero.
    #[default]
    Exact,
    /// The logistic curve `S(a / 0.3729)`.
    Fitted,
}

/// Standard normal density δ(x).
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cdf Φ(x), accurate to double precision via `erfc`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Fast logistic substitute `Φ(x) ≈ S(xπ/√3)` (variance-matched).
#[inline]
pub fn std_normal_cdf_fast(x: f64) -> f64 {
    logistic_sigmoid(x * SIGMA_S)
}

/// `ln Φ(x)`, finite far into the lower tail.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return std_normal_cdf(x).ln();
    }
    // Asymptotic Mills-ratio expansion.
    let z2 = 1.0 / (x * x);
    let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
    -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
}

/// Ratio δ(x)/Φ(x), the derivative of `ln Φ`.
pub fn inverse_mills(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI - log_std_normal_cdf(x)).exp()
}

/// Logistic sigmoid S(x) = 1/(1+e^{-x}), evaluated without overflow.
#[inline]
pub fn logistic_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative S'(x) = S(x)(1−S(x)) = S(x)S(−x).
#[inline]
pub fn logistic_sigmoid_deriv(x: f64) -> f64 {
    logistic_sigmoid(x) * logistic_sigmoid(-x)
}

/// log(1 + e^x), stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Dilogarithm Li₂(x) for x ≤ 0.
pub fn dilog(x: f64) -> Result<f64> {
    if x.is_nan() || x > 0.0 {
        return Err(Error::domain(format!("dilog is only defined here for x <= 0, got {x}")));
    }
    if x == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(dilog_nonpositive(x))
}

fn dilog_nonpositive(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x >= -0.5 {
        dilog_series(x)
    } else if x >= -1.0 {
        // Landen: the image x/(x-1) lies in [1/3, 1/2].
        let y = x / (x - 1.0);
        let l = (-x).ln_1p();
        -dilog_series(y) - 0.5 * l * l
    } else {
        let l = (-x).ln();
        -PI_SQ_OVER_6 - 0.5 * l * l - dilog_nonpositive(1.0 / x)
    }
}

/// Σ x^k / k² for |x| ≤ 1/2.
fn dilog_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = x;
    for k in 1..200u32 {
        let term = power / f64::from(k * k);
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
        power *= x;
    }
    sum
}

/// Li₂(−e^m) for any real m, without forming e^m when it would overflow.
pub fn dilog_neg_exp(m: f64) -> f64 {
    if m <= 0.0 {
        dilog_nonpositive(-m.exp())
    } else {
        -PI_SQ_OVER_6 - 0.5 * m * m - dilog_nonpositive(-(-m).exp())
    }
}

/// log Σ exp(xᵢ) with the maximum subtracted before exponentiation.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("logsumexp of an empty list"));
    }
    Ok(logsumexp_unchecked(xs))
}

pub(crate) fn logsumexp_unchecked(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalised ReLU mean g(a) = aΦ(a) + δ(a), i.e. E[max(0, a + N(0,1))].
#[inline]
pub fn relu_mean_g(a: f64) -> f64 {
    if a.is_infinite() {
        return a.max(0.0);
    }
    a * std_normal_cdf(a) + std_normal_pdf(a)
}

/// ReLU variance function R(a) before clamping.
pub fn relu_var_r_unclamped(a: f64) -> f64 {
    if a == f64::INFINITY {
        return 1.0;
    }
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    let d = std_normal_pdf(a);
    if a >= 0.0 {
        // Written in terms of the upper tail Q = Φ(−a) to avoid the a² cancellation.
        let q = std_normal_cdf(-a);
        1.0 + (a * a - 1.0) * q - a * d - a * a * q * q - d * d + 2.0 * a * q * d
    } else {
        let p = std_normal_cdf(a);
        let g = a * p + d;
        a * d + (a * a + 1.0) * p - g * g
    }
}

/// ReLU variance function R(a) (exact form clamped at zero, or the logistic fit).
pub fn relu_var_r(a: f64, variant: RVariant) -> f64 {
    match variant {
        RVariant::Exact => relu_var_r_unclamped(a).clamp(0.0, 1.0),
        RVariant::Fitted => logistic_sigmoid(a / T_RELU_FIT),
    }
}

/// dR/da. For the exact form this is 2(1−Φ(a))(aΦ(a)+δ(a)).
pub fn relu_var_r_deriv(a: f64, variant: RVariant) -> f64 {
    if a.is_infinite() {
        return 0.0;
    }
    match variant {
        RVariant::Exact => {
            if relu_var_r_unclamped(a) <= 0.0 {
                0.0
            } else {
                2.0 * std_normal_cdf(-a) * relu_mean_g(a)
            }
        }
        RVariant::Fitted => logistic_sigmoid_deriv(a / T_RELU_FIT) / T_RELU_FIT,
    }
}

/// Normalised variance of max(0, X) for logistic X with unit scale and location b:
/// h(b) = −2Li₂(−e^b) − softplus(b)².
pub fn relu_logistic_var_h(b: f64) -> f64 {
    if b > 0.0 {
        let sp = softplus(-b);
        // −2Li₂(−e^b) = π²/3 + b² + 2Li₂(−e^{−b}); the b² terms cancel analytically.
        SIGMA_S_SQ + 2.0 * dilog_neg_exp(-b) - 2.0 * b * sp - sp * sp
    } else {
        let sp = softplus(b);
        -2.0 * dilog_neg_exp(b) - sp * sp
    }
}

/// dh/db = 2·softplus(b)·(1 − S(b)).
pub fn relu_logistic_var_h_deriv(b: f64) -> f64 {
    2.0 * softplus(b) * logistic_sigmoid(-b)
}

/// ln 2, re-exported for the piecewise-exponential sigmoid.
pub(crate) const LN2: f64 = LN_2;
