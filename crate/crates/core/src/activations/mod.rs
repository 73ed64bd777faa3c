//! Moment maps `(μ, σ²) → (μ', σ'²)` for activations and stochastic units.
//!
//! Every map comes in two flavours: a plain one returning the output moments and a
//! `_jac` one that also returns the partial derivatives of the outputs with respect to
//! the input mean and variance. The derivatives are used by the training backward pass.
//!
//! Normal-assumption formulas treat the input as Gaussian, logistic-assumption formulas
//! as logistic with the same mean and variance. When the input variance is zero every map
//! short-circuits to its deterministic limit before any `μ/σ` division; the derivatives
//! returned there are the right-limits as σ² → 0⁺ (taken as 0 where that limit diverges,
//! which only happens exactly at a kink).

mod softmax;

pub use softmax::{pairwise_win_probability, softmax_posterior, softmax_posterior_vjp, SoftmaxVariant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{
    log_std_normal_cdf, logistic_sigmoid, logistic_sigmoid_deriv, relu_logistic_var_h, relu_logistic_var_h_deriv,
    relu_mean_g, relu_var_r, relu_var_r_deriv, relu_var_r_unclamped, softplus, std_normal_cdf, std_normal_pdf,
    RVariant, LN2, SIGMA_S, SIGMA_S_SQ, T_RELU_FIT,
};
use crate::moments::{BinaryMoments, ScalarMoments};

/// Distribution family assumed for the input of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assumption {
    #[default]
    Normal,
    Logistic,
}

/// Approximation used for the mean of a logistic-Bernoulli unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BernoulliMean {
    /// `Φ(μ / √(σ² + σ_S²))`
    Ap2a,
    /// `S(μ / √(σ²/σ_S² + 1))`
    #[default]
    Ap2b,
    /// `S(μ)`, ignoring the variance.
    Ap1,
    /// Expectation of the piecewise-exponential (Laplace cdf) surrogate of `S`.
    Pea,
}

/// Variance approximation for the logistic transform `Y = S(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformVariance {
    /// `4 (1 + 4σ⁻²)⁻¹ (μ'(1−μ'))²`
    #[default]
    Heuristic,
    /// `Φ((μ−1)/√(σ²+σ_S²−1)) − μ'²`, meant for σ ≥ 2.
    LargeSigma,
}

/// Partial derivatives of output (mean, var) with respect to input (mean, var).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentJacobian {
    pub dmean_dmean: f64,
    pub dmean_dvar: f64,
    pub dvar_dmean: f64,
    pub dvar_dvar: f64,
}

impl MomentJacobian {
    pub const IDENTITY: MomentJacobian =
        MomentJacobian { dmean_dmean: 1.0, dmean_dvar: 0.0, dvar_dmean: 0.0, dvar_dvar: 1.0 };

    /// Vector-Jacobian product: maps output gradients to input gradients.
    #[inline]
    pub fn pullback(&self, g_mean: f64, g_var: f64) -> (f64, f64) {
        (g_mean * self.dmean_dmean + g_var * self.dvar_dmean, g_mean * self.dmean_dvar + g_var * self.dvar_dvar)
    }

    /// `self ∘ inner`, for chaining `out = self(mid)`, `mid = inner(in)`.
    pub fn compose(&self, inner: &MomentJacobian) -> MomentJacobian {
        MomentJacobian {
            dmean_dmean: self.dmean_dmean * inner.dmean_dmean + self.dmean_dvar * inner.dvar_dmean,
            dmean_dvar: self.dmean_dmean * inner.dmean_dvar + self.dmean_dvar * inner.dvar_dvar,
            dvar_dmean: self.dvar_dmean * inner.dmean_dmean + self.dvar_dvar * inner.dvar_dmean,
            dvar_dvar: self.dvar_dmean * inner.dmean_dvar + self.dvar_dvar * inner.dvar_dvar,
        }
    }
}

/// Output of a binary unit with mean `m`: variance m(1−m) and its derivatives.
fn binary_with_jac(m: f64, dm_dmu: f64, dm_dv: f64) -> (BinaryMoments, MomentJacobian) {
    let slope = 1.0 - 2.0 * m;
    (
        BinaryMoments { mean: m },
        MomentJacobian { dmean_dmean: dm_dmu, dmean_dvar: dm_dv, dvar_dmean: slope * dm_dmu, dvar_dvar: slope * dm_dv },
    )
}

fn step(mu: f64) -> f64 {
    if mu > 0.0 {
        1.0
    } else if mu < 0.0 {
        0.0
    } else {
        0.5
    }
}

// ---------------------------------------------------------------------------
// Heaviside

pub fn heaviside_moments(input: ScalarMoments, assumption: Assumption) -> BinaryMoments {
    heaviside_moments_jac(input, assumption).0
}

pub fn heaviside_moments_jac(input: ScalarMoments, assumption: Assumption) -> (BinaryMoments, MomentJacobian) {
    let ScalarMoments { mean: mu, var: v } = input;
    if v <= 0.0 {
        return binary_with_jac(step(mu), 0.0, 0.0);
    }
    let sigma = v.sqrt();
    match assumption {
        Assumption::Normal => {
            let a = mu / sigma;
            let d = std_normal_pdf(a);
            binary_with_jac(std_normal_cdf(a), d / sigma, -d * a / (2.0 * v))
        }
        Assumption::Logistic => {
            let s = sigma / SIGMA_S;
            let c = mu / s;
            let d = logistic_sigmoid_deriv(c);
            binary_with_jac(logistic_sigmoid(c), d / s, -d * c / (2.0 * v))
        }
    }
}

// ---------------------------------------------------------------------------
// ReLU and leaky ReLU

/// ReLU moments; the normal assumption uses the exact variance function.
pub fn relu_moments(input: ScalarMoments, assumption: Assumption) -> ScalarMoments {
    relu_moments_jac(input, assumption, RVariant::Exact).0
}

/// ReLU moments with an explicit choice of the normal-assumption variance form.
pub fn relu_moments_with(input: ScalarMoments, assumption: Assumption, var_form: RVariant) -> ScalarMoments {
    relu_moments_jac(input, assumption, var_form).0
}

pub fn relu_moments_jac(
    input: ScalarMoments,
    assumption: Assumption,
    var_form: RVariant,
) -> (ScalarMoments, MomentJacobian) {
    let ScalarMoments { mean: mu, var: v } = input;
    if v <= 0.0 {
        let on = step(mu);
        let dvar_dvar = if mu == 0.0 {
            match assumption {
                Assumption::Normal => relu_var_r(0.0, var_form),
                Assumption::Logistic => relu_logistic_var_h(0.0) / SIGMA_S_SQ,
            }
        } else {
            on
        };
        return (
            ScalarMoments::deterministic(mu.max(0.0)),
            MomentJacobian { dmean_dmean: on, dmean_dvar: 0.0, dvar_dmean: 0.0, dvar_dvar },
        );
    }
    let sigma = v.sqrt();
    match assumption {
        Assumption::Normal => {
            let a = mu / sigma;
            let p = std_normal_cdf(a);
            let d = std_normal_pdf(a);
            let r = relu_var_r(a, var_form);
            let dr = relu_var_r_deriv(a, var_form);
            (
                ScalarMoments::clamped(sigma * relu_mean_g(a), v * r),
                MomentJacobian {
                    dmean_dmean: p,
                    dmean_dvar: d / (2.0 * sigma),
                    dvar_dmean: sigma * dr,
                    dvar_dvar: r - 0.5 * a * dr,
                },
            )
        }
        Assumption::Logistic => {
            let s = sigma / SIGMA_S;
            let b = mu / s;
            let sp = softplus(b);
            let sb = logistic_sigmoid(b);
            let h = relu_logistic_var_h(b);
            let dh = relu_logistic_var_h_deriv(b);
            (
                ScalarMoments::clamped(s * sp, s * s * h),
                MomentJacobian {
                    dmean_dmean: sb,
                    dmean_dvar: (sp - b * sb) / (2.0 * SIGMA_S * sigma),
                    dvar_dmean: s * dh,
                    dvar_dvar: (2.0 * h - b * dh) / (2.0 * SIGMA_S_SQ),
                },
            )
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::domain(format!("leaky ReLU slope must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

/// Moments of `max(X, αX)` under a normal input.
pub fn lrelu_moments(input: ScalarMoments, alpha: f64, var_form: RVariant) -> Result<ScalarMoments> {
    Ok(lrelu_moments_jac(input, alpha, var_form)?.0)
}

pub fn lrelu_moments_jac(
    input: ScalarMoments,
    alpha: f64,
    var_form: RVariant,
) -> Result<(ScalarMoments, MomentJacobian)> {
    check_alpha(alpha)?;
    let ScalarMoments { mean: mu, var: v } = input;
    let one_m = 1.0 - alpha;
    let q_of = |a: f64| -> (f64, f64) {
        match var_form {
            RVariant::Exact => {
                let r = relu_var_r(a, RVariant::Exact);
                let dr = relu_var_r_deriv(a, RVariant::Exact);
                let p = std_normal_cdf(a);
                let d = std_normal_pdf(a);
                (
                    alpha * alpha + 2.0 * alpha * one_m * p + one_m * one_m * r,
                    2.0 * alpha * one_m * d + one_m * one_m * dr,
                )
            }
            RVariant::Fitted => (
                alpha * alpha + (1.0 - alpha * alpha) * logistic_sigmoid(a / T_RELU_FIT),
                (1.0 - alpha * alpha) * logistic_sigmoid_deriv(a / T_RELU_FIT) / T_RELU_FIT,
            ),
        }
    };
    if v <= 0.0 {
        let slope = if mu > 0.0 {
            1.0
        } else if mu < 0.0 {
            alpha
        } else {
            0.5 * (1.0 + alpha)
        };
        let dvar_dvar = if mu > 0.0 {
            1.0
        } else if mu < 0.0 {
            alpha * alpha
        } else {
            q_of(0.0).0
        };
        return Ok((
            ScalarMoments::deterministic(mu.max(alpha * mu)),
            MomentJacobian { dmean_dmean: slope, dmean_dvar: 0.0, dvar_dmean: 0.0, dvar_dvar },
        ));
    }
    let sigma = v.sqrt();
    let a = mu / sigma;
    let p = std_normal_cdf(a);
    let d = std_normal_pdf(a);
    let (q, dq) = q_of(a);
    Ok((
        ScalarMoments::clamped(alpha * mu + one_m * sigma * relu_mean_g(a), v * q),
        MomentJacobian {
            dmean_dmean: alpha + one_m * p,
            dmean_dvar: one_m * d / (2.0 * sigma),
            dvar_dmean: sigma * dq,
            dvar_dvar: q - 0.5 * a * dq,
        },
    ))
}

// ---------------------------------------------------------------------------
// Logistic-Bernoulli, probit and sigmoid-like transforms

pub fn logistic_bernoulli_mean(input: ScalarMoments, variant: BernoulliMean) -> BinaryMoments {
    logistic_bernoulli_mean_jac(input, variant).0
}

pub fn logistic_bernoulli_mean_jac(input: ScalarMoments, variant: BernoulliMean) -> (BinaryMoments, MomentJacobian) {
    let (m, dmu, dv) = bernoulli_mean_parts(input, variant);
    binary_with_jac(m, dmu, dv)
}

/// Mean and its two partials for each Bernoulli-logistic approximation.
fn bernoulli_mean_parts(input: ScalarMoments, variant: BernoulliMean) -> (f64, f64, f64) {
    let ScalarMoments { mean: mu, var: v } = input;
    match variant {
        BernoulliMean::Ap2a => {
            let r2 = v + SIGMA_S_SQ;
            let r = r2.sqrt();
            let c = mu / r;
            let d = std_normal_pdf(c);
            (std_normal_cdf(c), d / r, -d * c / (2.0 * r2))
        }
        BernoulliMean::Ap2b => {
            let s2 = v / SIGMA_S_SQ + 1.0;
            let s = s2.sqrt();
            let c = mu / s;
            let d = logistic_sigmoid_deriv(c);
            (logistic_sigmoid(c), d / s, -d * c / (2.0 * s2 * SIGMA_S_SQ))
        }
        BernoulliMean::Ap1 => (logistic_sigmoid(mu), logistic_sigmoid_deriv(mu), 0.0),
        BernoulliMean::Pea => pea_mean_parts(mu, v),
    }
}

/// E[L(X)] for X ~ N(μ, σ²) and the Laplace-cdf surrogate L of the sigmoid
/// (`2^{z−1}` for z < 0, `1 − 2^{−z−1}` otherwise), with ∂/∂μ = E[L'] and
/// ∂/∂σ² = ½E[L''].
fn pea_mean_parts(mu: f64, v: f64) -> (f64, f64, f64) {
    let k = LN2;
    if v <= 0.0 {
        return if mu >= 0.0 {
            let e = (-k * mu).exp();
            (1.0 - 0.5 * e, 0.5 * k * e, -0.25 * k * k * e)
        } else {
            let e = (k * mu).exp();
            (0.5 * e, 0.5 * k * e, 0.25 * k * k * e)
        };
    }
    let sigma = v.sqrt();
    let a = mu / sigma;
    // E[e^{-kX}; X > 0] and E[e^{kX}; X < 0], assembled in the log domain.
    let upper = (-k * mu + 0.5 * k * k * v + log_std_normal_cdf(a - k * sigma)).exp();
    let lower = (k * mu + 0.5 * k * k * v + log_std_normal_cdf(-a - k * sigma)).exp();
    (std_normal_cdf(a) - 0.5 * upper + 0.5 * lower, 0.5 * k * (upper + lower), 0.25 * k * k * (lower - upper))
}

/// Logistic transform `Y = S(X)`; the mean follows the AP2b form.
pub fn logistic_transform_moments(input: ScalarMoments, var_form: TransformVariance) -> ScalarMoments {
    logistic_transform_moments_jac(input, var_form).0
}

pub fn logistic_transform_moments_jac(
    input: ScalarMoments,
    var_form: TransformVariance,
) -> (ScalarMoments, MomentJacobian) {
    let (m, dm_dmu, dm_dv) = bernoulli_mean_parts(input, BernoulliMean::Ap2b);
    let v = input.var;
    match var_form {
        TransformVariance::Heuristic => heuristic_transform_var(m, dm_dmu, dm_dv, v, 1.0),
        TransformVariance::LargeSigma => {
            let r2 = v + SIGMA_S_SQ - 1.0;
            let r = r2.sqrt();
            let e = (input.mean - 1.0) / r;
            let d = std_normal_pdf(e);
            let raw = std_normal_cdf(e) - m * m;
            let (var, dvar_dmean, dvar_dvar) = if raw <= 0.0 || raw >= 0.25 {
                (raw.clamp(0.0, 0.25), 0.0, 0.0)
            } else {
                (raw, d / r - 2.0 * m * dm_dmu, -d * e / (2.0 * r2) - 2.0 * m * dm_dv)
            };
            (
                ScalarMoments { mean: m, var },
                MomentJacobian { dmean_dmean: dm_dmu, dmean_dvar: dm_dv, dvar_dmean, dvar_dvar },
            )
        }
    }
}

/// Variance `4 w (m(1−m))²` with `w = κ²σ²/(κ²σ²+4)`; κ rescales the input slope.
fn heuristic_transform_var(m: f64, dm_dmu: f64, dm_dv: f64, v: f64, kappa_sq: f64) -> (ScalarMoments, MomentJacobian) {
    let kv = kappa_sq * v;
    let w = kv / (kv + 4.0);
    let dw_dv = 4.0 * kappa_sq / ((kv + 4.0) * (kv + 4.0));
    let p = m * (1.0 - m);
    let dp = 1.0 - 2.0 * m;
    (
        ScalarMoments::clamped(m, 4.0 * w * p * p),
        MomentJacobian {
            dmean_dmean: dm_dmu,
            dmean_dvar: dm_dv,
            dvar_dmean: 8.0 * w * p * dp * dm_dmu,
            dvar_dvar: 4.0 * p * p * dw_dv + 8.0 * w * p * dp * dm_dv,
        },
    )
}

fn probit_parts(input: ScalarMoments) -> (f64, f64, f64) {
    let r2 = input.var + 1.0;
    let r = r2.sqrt();
    let c = input.mean / r;
    let d = std_normal_pdf(c);
    (std_normal_cdf(c), d / r, -d * c / (2.0 * r2))
}

/// Bernoulli unit with `P(Y=1|X) = Φ(X)`; exact under a Gaussian input.
pub fn probit_mean(input: ScalarMoments) -> BinaryMoments {
    probit_mean_jac(input).0
}

pub fn probit_mean_jac(input: ScalarMoments) -> (BinaryMoments, MomentJacobian) {
    let (m, dmu, dv) = probit_parts(input);
    binary_with_jac(m, dmu, dv)
}

/// Normal-cdf transform `Y = Φ(X)`.
///
/// The mean is exact. The variance is an approximation without a published
/// closed form: the logistic-transform heuristic applied after rescaling the input
/// by π/√3 (the slope that matches Φ to a logistic cdf).
pub fn normalcdf_transform_moments(input: ScalarMoments) -> ScalarMoments {
    normalcdf_transform_moments_jac(input).0
}

pub fn normalcdf_transform_moments_jac(input: ScalarMoments) -> (ScalarMoments, MomentJacobian) {
    let (m, dmu, dv) = probit_parts(input);
    heuristic_transform_var(m, dmu, dv, input.var, SIGMA_S_SQ)
}

// ---------------------------------------------------------------------------
// Max of independent inputs

/// Moments of `max(X₁, X₂)` for independent normal inputs.
pub fn max2_moments(a: ScalarMoments, b: ScalarMoments, var_form: RVariant) -> ScalarMoments {
    max2_moments_jac(a, b, var_form).0
}

/// As [`max2_moments`], plus the Jacobians with respect to each input.
pub fn max2_moments_jac(
    x1: ScalarMoments,
    x2: ScalarMoments,
    var_form: RVariant,
) -> (ScalarMoments, MomentJacobian, MomentJacobian) {
    let (mu1, v1, mu2, v2) = (x1.mean, x1.var, x2.mean, x2.var);
    let s2 = v1 + v2;
    if s2 <= 0.0 {
        let w1 = step(mu1 - mu2);
        let j = |w: f64| MomentJacobian { dmean_dmean: w, dmean_dvar: 0.0, dvar_dmean: 0.0, dvar_dvar: w };
        return (ScalarMoments::deterministic(mu1.max(mu2)), j(w1), j(1.0 - w1));
    }
    let s = s2.sqrt();
    let a = (mu1 - mu2) / s;
    let p = std_normal_cdf(a);
    let d = std_normal_pdf(a);
    let mean = mu2 + s * relu_mean_g(a);
    let (weight, var_da, explicit) = match var_form {
        RVariant::Exact => {
            let k = relu_var_r_unclamped(a) - p;
            let dk = 2.0 * std_normal_cdf(-a) * relu_mean_g(a) - d;
            (p, (v1 - v2) * d + s2 * dk, k)
        }
        RVariant::Fitted => {
            let f = logistic_sigmoid(a / T_RELU_FIT);
            (f, (v1 - v2) * logistic_sigmoid_deriv(a / T_RELU_FIT) / T_RELU_FIT, 0.0)
        }
    };
    let var = v1 * weight + v2 * (1.0 - weight) + s2 * explicit;
    let dvar_dmu1 = var_da / s;
    let shared = explicit - a * var_da / (2.0 * s2);
    let mut j1 =
        MomentJacobian { dmean_dmean: p, dmean_dvar: d / (2.0 * s), dvar_dmean: dvar_dmu1, dvar_dvar: weight + shared };
    let mut j2 = MomentJacobian {
        dmean_dmean: 1.0 - p,
        dmean_dvar: d / (2.0 * s),
        dvar_dmean: -dvar_dmu1,
        dvar_dvar: 1.0 - weight + shared,
    };
    if var < 0.0 {
        j1.dvar_dmean = 0.0;
        j1.dvar_dvar = 0.0;
        j2.dvar_dmean = 0.0;
        j2.dvar_dvar = 0.0;
    }
    (ScalarMoments::clamped(mean, var), j1, j2)
}

/// Hierarchical maximum over a window, reduced as a balanced binary tree whose left
/// half takes the extra element when the length is odd.
pub fn maxpool_moments(window: &[ScalarMoments]) -> Result<ScalarMoments> {
    if window.is_empty() {
        return Err(Error::Empty("max pooling window"));
    }
    Ok(maxpool_reduce(window, RVariant::Exact, &mut None))
}

/// As [`maxpool_moments`], with the Jacobian of the result with respect to every element.
pub fn maxpool_moments_jac(
    window: &[ScalarMoments],
    var_form: RVariant,
) -> Result<(ScalarMoments, Vec<MomentJacobian>)> {
    if window.is_empty() {
        return Err(Error::Empty("max pooling window"));
    }
    let mut jacs = Some(vec![MomentJacobian::IDENTITY; window.len()]);
    let out = maxpool_reduce(window, var_form, &mut jacs);
    Ok((out, jacs.unwrap_or_default()))
}

fn maxpool_reduce(
    window: &[ScalarMoments],
    var_form: RVariant,
    jacs: &mut Option<Vec<MomentJacobian>>,
) -> ScalarMoments {
    if window.len() == 1 {
        return window[0];
    }
    let mid = window.len().div_ceil(2);
    let (left, right) = window.split_at(mid);
    let mut left_jacs = jacs.as_ref().map(|_| vec![MomentJacobian::IDENTITY; left.len()]);
    let mut right_jacs = jacs.as_ref().map(|_| vec![MomentJacobian::IDENTITY; right.len()]);
    let l = maxpool_reduce(left, var_form, &mut left_jacs);
    let r = maxpool_reduce(right, var_form, &mut right_jacs);
    let (out, jl, jr) = max2_moments_jac(l, r, var_form);
    if let (Some(all), Some(lj), Some(rj)) = (jacs.as_mut(), left_jacs, right_jacs) {
        for (slot, inner) in all.iter_mut().zip(lj.iter().map(|j| jl.compose(j))) {
            *slot = inner;
        }
        for (slot, inner) in all[mid..].iter_mut().zip(rj.iter().map(|j| jr.compose(j))) {
            *slot = inner;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Products, absolute value, dropout

/// Moments of `X₁X₂` for independent inputs (exact).
pub fn product_moments(a: ScalarMoments, b: ScalarMoments) -> ScalarMoments {
    product_moments_jac(a, b).0
}

pub fn product_moments_jac(a: ScalarMoments, b: ScalarMoments) -> (ScalarMoments, MomentJacobian, MomentJacobian) {
    let out =
        ScalarMoments { mean: a.mean * b.mean, var: a.var * b.var + a.var * b.mean * b.mean + a.mean * a.mean * b.var };
    let ja = MomentJacobian {
        dmean_dmean: b.mean,
        dmean_dvar: 0.0,
        dvar_dmean: 2.0 * a.mean * b.var,
        dvar_dvar: b.var + b.mean * b.mean,
    };
    let jb = MomentJacobian {
        dmean_dmean: a.mean,
        dmean_dvar: 0.0,
        dvar_dmean: 2.0 * b.mean * a.var,
        dvar_dvar: a.var + a.mean * a.mean,
    };
    (out, ja, jb)
}

/// Moments of `|X|` under a normal input.
pub fn abs_moments(input: ScalarMoments) -> ScalarMoments {
    abs_moments_jac(input).0
}

pub fn abs_moments_jac(input: ScalarMoments) -> (ScalarMoments, MomentJacobian) {
    let ScalarMoments { mean: mu, var: v } = input;
    if v <= 0.0 {
        let sign = if mu > 0.0 {
            1.0
        } else if mu < 0.0 {
            -1.0
        } else {
            0.0
        };
        return (
            ScalarMoments::deterministic(mu.abs()),
            MomentJacobian { dmean_dmean: sign, dmean_dvar: 0.0, dvar_dmean: 0.0, dvar_dvar: 1.0 },
        );
    }
    let sigma = v.sqrt();
    let a = mu / sigma;
    let p = std_normal_cdf(a);
    let d = std_normal_pdf(a);
    let m = 2.0 * sigma * relu_mean_g(a) - mu;
    let dm_dmu = 2.0 * p - 1.0;
    let dm_dv = d / sigma;
    let var = mu * mu + v - m * m;
    let (dvar_dmean, dvar_dvar) =
        if var > 0.0 { (2.0 * mu - 2.0 * m * dm_dmu, 1.0 - 2.0 * m * dm_dv) } else { (0.0, 0.0) };
    (ScalarMoments::clamped(m, var), MomentJacobian { dmean_dmean: dm_dmu, dmean_dvar: dm_dv, dvar_dmean, dvar_dvar })
}

pub(crate) fn check_drop_prob(drop_prob: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::domain(format!("drop probability must lie in [0, 1), got {drop_prob}")));
    }
    Ok(())
}

/// Multiplicative Bernoulli(keep = 1 − p) noise; with `rescale` the output is divided
/// by the keep probability so that the mean is preserved.
pub fn bernoulli_dropout_moments(input: ScalarMoments, drop_prob: f64, rescale: bool) -> Result<ScalarMoments> {
    Ok(bernoulli_dropout_moments_jac(input, drop_prob, rescale)?.0)
}

pub fn bernoulli_dropout_moments_jac(
    input: ScalarMoments,
    drop_prob: f64,
    rescale: bool,
) -> Result<(ScalarMoments, MomentJacobian)> {
    check_drop_prob(drop_prob)?;
    let keep = 1.0 - drop_prob;
    let mask = BinaryMoments { mean: keep }.moments();
    let (out, j, _) = product_moments_jac(input, mask);
    if !rescale {
        return Ok((out, j));
    }
    let (sm, sv) = (1.0 / keep, 1.0 / (keep * keep));
    Ok((
        ScalarMoments { mean: out.mean * sm, var: out.var * sv },
        MomentJacobian {
            dmean_dmean: j.dmean_dmean * sm,
            dmean_dvar: j.dmean_dvar * sm,
            dvar_dmean: j.dvar_dmean * sv,
            dvar_dvar: j.dvar_dvar * sv,
        },
    ))
}

// ---------------------------------------------------------------------------
// Activation selector used by network layers

/// A coordinate-wise activation or stochastic unit together with its approximation options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu { assumption: Assumption, var: RVariant },
    LeakyRelu { alpha: f64, var: RVariant },
    Heaviside { assumption: Assumption },
    LogisticBernoulli { mean: BernoulliMean },
    LogisticTransform { var: TransformVariance },
    Probit,
    NormalCdf,
    Abs,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu { .. } => "relu",
            Activation::LeakyRelu { .. } => "lrelu",
            Activation::Heaviside { .. } => "heaviside",
            Activation::LogisticBernoulli { .. } => "bernoulli",
            Activation::LogisticTransform { .. } => "logistic",
            Activation::Probit => "probit",
            Activation::NormalCdf => "normcdf",
            Activation::Abs => "abs",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { alpha, .. } = self {
            check_alpha(*alpha)?;
        }
        Ok(())
    }

    /// Units whose output is random given the input.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Activation::LogisticBernoulli { .. } | Activation::Probit)
    }

    /// AP2 moment map with its Jacobian.
    pub fn moments_jac(&self, input: ScalarMoments) -> (ScalarMoments, MomentJacobian) {
        match *self {
            Activation::Relu { assumption, var } => relu_moments_jac(input, assumption, var),
            Activation::LeakyRelu { alpha, var } => match lrelu_moments_jac(input, alpha, var) {
                Ok(r) => r,
                Err(_) => (ScalarMoments::deterministic(f64::NAN), MomentJacobian::default()),
            },
            Activation::Heaviside { assumption } => {
                let (b, j) = heaviside_moments_jac(input, assumption);
                (b.moments(), j)
            }
            Activation::LogisticBernoulli { mean } => {
                let (b, j) = logistic_bernoulli_mean_jac(input, mean);
                (b.moments(), j)
            }
            Activation::LogisticTransform { var } => logistic_transform_moments_jac(input, var),
            Activation::Probit => {
                let (b, j) = probit_mean_jac(input);
                (b.moments(), j)
            }
            Activation::NormalCdf => normalcdf_transform_moments_jac(input),
            Activation::Abs => abs_moments_jac(input),
        }
    }

    /// AP1 map: `f(μ)` for deterministic units, the mean map for stochastic ones.
    /// Returns the value and its derivative.
    pub fn mean_map(&self, x: f64) -> (f64, f64) {
        match *self {
            Activation::Relu { .. } => (x.max(0.0), step(x)),
            Activation::LeakyRelu { alpha, .. } => {
                if x >= 0.0 {
                    (x, 1.0)
                } else {
                    (alpha * x, alpha)
                }
            }
            Activation::Heaviside { .. } => (step(x), 0.0),
            Activation::LogisticBernoulli { .. } | Activation::LogisticTransform { .. } => {
                (logistic_sigmoid(x), logistic_sigmoid_deriv(x))
            }
            Activation::Probit | Activation::NormalCdf => (std_normal_cdf(x), std_normal_pdf(x)),
            Activation::Abs => (x.abs(), if x >= 0.0 { 1.0 } else { -1.0 }),
        }
    }

    /// One draw of the unit in its latent-variable form `f(x − Z)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        match *self {
            Activation::LogisticBernoulli { .. } => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let z = (u / (1.0 - u)).ln();
                if x - z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Probit => {
                let z: f64 = StandardNormal.sample(rng);
                if x - z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Heaviside { .. } => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.mean_map(x).0,
        }
    }

    /// Pathwise derivative of a sampled deterministic unit; `None` for stochastic units.
    pub fn sample_deriv(&self, x: f64) -> Option<f64> {
        if self.is_stochastic() {
            None
        } else {
            Some(self.mean_map(x).1)
        }
    }
}

#[cfg(test)]
mod properties;
