//! Per-item forward and adjoint kernels for every layer kind.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{channels, LayerParams, LayerSpec, ModeKind};
use crate::activations::{
    bernoulli_dropout_moments_jac, maxpool_moments_jac, softmax_posterior, softmax_posterior_vjp, SoftmaxVariant,
};
use crate::error::{Error, Result};
use crate::kernels::RVariant;
use crate::moments::ScalarMoments;

pub(crate) struct LayerOut {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub log_probs: Option<Vec<f64>>,
}

impl LayerOut {
    fn plain(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { mean, var, mask: None, log_probs: None }
    }
}

pub(crate) fn sample_input(mean: &[f64], var: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    mean.iter()
        .zip(var)
        .map(|(&m, &v)| {
            if v > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            } else {
                m
            }
        })
        .collect()
}

fn head_variant(kind: ModeKind, variant: SoftmaxVariant) -> SoftmaxVariant {
    if kind == ModeKind::Ap2 {
        variant
    } else {
        SoftmaxVariant::Standard
    }
}

fn zip_moments(mean: &[f64], var: &[f64]) -> Vec<ScalarMoments> {
    mean.iter().zip(var).map(|(&mean, &var)| ScalarMoments { mean, var }).collect()
}

/// Index of the input element read by output `(o, oy, ox)` at kernel tap `(c, ky, kx)`.
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
}

impl ConvGeom {
    fn new(in_shape: &[usize], out_shape: &[usize], k: usize, stride: usize) -> Self {
        Self {
            c_in: in_shape[0],
            h: in_shape[1],
            w: in_shape[2],
            c_out: out_shape[0],
            oh: out_shape[1],
            ow: out_shape[2],
            k,
            stride,
        }
    }
}

/// Max-pool windows as lists of flat input indices, one per output element.
fn pool_windows(in_shape: &[usize], out_shape: &[usize], k: usize) -> Vec<Vec<usize>> {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut windows = Vec::with_capacity(c_out * oh * ow);
    for c in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut idx = Vec::with_capacity(k * k);
                for dy in 0..k {
                    for dx in 0..k {
                        idx.push(c * h * w + (oy * k + dy) * w + ox * k + dx);
                    }
                }
                windows.push(idx);
            }
        }
    }
    windows
}

fn argmax(xs: impl Iterator<Item = (usize, f64)>) -> usize {
    xs.fold(
        (usize::MAX, f64::NEG_INFINITY),
        |best, (i, x)| if x > best.1 || best.0 == usize::MAX { (i, x) } else { best },
    )
    .0
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward_item(
    layer: &LayerSpec,
    params: &LayerParams,
    in_shape: &[usize],
    out_shape: &[usize],
    mean: &[f64],
    var: &[f64],
    kind: ModeKind,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<LayerOut> {
    let with_var = kind == ModeKind::Ap2;
    let n_out: usize = out_shape.iter().product();
    match *layer {
        LayerSpec::Linear { in_features, out_features, .. } => {
            let w = &params.weight;
            let mut m_out = vec![0.0; out_features];
            let mut v_out = vec![0.0; out_features];
            for j in 0..out_features {
                let row = &w[j * in_features..(j + 1) * in_features];
                let mut acc = params.bias.get(j).copied().unwrap_or(0.0);
                for (wi, xi) in row.iter().zip(mean) {
                    acc += wi * xi;
                }
                m_out[j] = acc;
                if with_var {
                    let mut acc = 0.0;
                    for (wi, vi) in row.iter().zip(var) {
                        acc += wi * wi * vi;
                    }
                    v_out[j] = acc;
                }
            }
            Ok(LayerOut::plain(m_out, v_out))
        }
        LayerSpec::Conv2d { kernel, stride, .. } => {
            let g = ConvGeom::new(in_shape, out_shape, kernel, stride);
            let w = &params.weight;
            let mut m_out = vec![0.0; n_out];
            let mut v_out = vec![0.0; n_out];
            let kk = g.k * g.k;
            for o in 0..g.c_out {
                let b = params.bias.get(o).copied().unwrap_or(0.0);
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let (mut am, mut av) = (b, 0.0);
                        for c in 0..g.c_in {
                            let wbase = (o * g.c_in + c) * kk;
                            for ky in 0..g.k {
                                let row = c * g.h * g.w + (oy * g.stride + ky) * g.w + ox * g.stride;
                                let wrow = &w[wbase + ky * g.k..wbase + (ky + 1) * g.k];
                                let xm = &mean[row..row + g.k];
                                for (wi, xi) in wrow.iter().zip(xm) {
                                    am += wi * xi;
                                }
                                if with_var {
                                    let xv = &var[row..row + g.k];
                                    for (wi, vi) in wrow.iter().zip(xv) {
                                        av += wi * wi * vi;
                                    }
                                }
                            }
                        }
                        let idx = (o * g.oh + oy) * g.ow + ox;
                        m_out[idx] = am;
                        v_out[idx] = av;
                    }
                }
            }
            Ok(LayerOut::plain(m_out, v_out))
        }
        LayerSpec::Activation(act) => match kind {
            ModeKind::Ap2 => {
                let (m, v): (Vec<f64>, Vec<f64>) = mean
                    .iter()
                    .zip(var)
                    .map(|(&mean, &var)| {
                        let out = act.moments_jac(ScalarMoments { mean, var }).0;
                        (out.mean, out.var)
                    })
                    .unzip();
                if m.iter().chain(&v).any(|x| !x.is_finite()) {
                    return Err(Error::domain(format!("{} produced non-finite moments", act.name())));
                }
                Ok(LayerOut::plain(m, v))
            }
            ModeKind::Ap1 => Ok(LayerOut::plain(mean.iter().map(|&x| act.mean_map(x).0).collect(), vec![0.0; n_out])),
            ModeKind::Sample => {
                let rng = rng.ok_or(Error::MissingRecording("sampling stream"))?;
                Ok(LayerOut::plain(mean.iter().map(|&x| act.sample(x, rng)).collect(), vec![0.0; n_out]))
            }
        },
        LayerSpec::Dropout { p, rescale } => {
            let keep = 1.0 - p;
            match kind {
                ModeKind::Ap2 => {
                    let mut m_out = Vec::with_capacity(n_out);
                    let mut v_out = Vec::with_capacity(n_out);
                    for (&mu, &v) in mean.iter().zip(var) {
                        let out = bernoulli_dropout_moments_jac(ScalarMoments { mean: mu, var: v }, p, rescale)?.0;
                        m_out.push(out.mean);
                        v_out.push(out.var);
                    }
                    Ok(LayerOut::plain(m_out, v_out))
                }
                ModeKind::Ap1 => {
                    let s = if rescale { 1.0 } else { keep };
                    Ok(LayerOut::plain(mean.iter().map(|x| x * s).collect(), vec![0.0; n_out]))
                }
                ModeKind::Sample => {
                    let rng = rng.ok_or(Error::MissingRecording("sampling stream"))?;
                    let on = if rescale { 1.0 / keep } else { 1.0 };
                    let mask: Vec<f64> =
                        (0..n_out).map(|_| if rng.random::<f64>() < keep { on } else { 0.0 }).collect();
                    let m_out = mean.iter().zip(&mask).map(|(x, k)| x * k).collect();
                    Ok(LayerOut { mean: m_out, var: vec![0.0; n_out], mask: Some(mask), log_probs: None })
                }
            }
        }
        LayerSpec::AvgPool { window } => {
            let c = in_shape[0];
            let plane = in_shape[1] * in_shape[2];
            let k = window.unwrap_or(0);
            let n = if window.is_some() { (k * k) as f64 } else { plane as f64 };
            let mut m_out = vec![0.0; n_out];
            let mut v_out = vec![0.0; n_out];
            if window.is_none() {
                for ch in 0..c {
                    m_out[ch] = mean[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / n;
                    v_out[ch] = var[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / (n * n);
                }
            } else {
                for (o, win) in pool_windows(in_shape, out_shape, k).iter().enumerate() {
                    m_out[o] = win.iter().map(|&i| mean[i]).sum::<f64>() / n;
                    v_out[o] = win.iter().map(|&i| var[i]).sum::<f64>() / (n * n);
                }
            }
            Ok(LayerOut::plain(m_out, v_out))
        }
        LayerSpec::MaxPool { window } => {
            let windows = pool_windows(in_shape, out_shape, window);
            let mut m_out = vec![0.0; n_out];
            let mut v_out = vec![0.0; n_out];
            for (o, win) in windows.iter().enumerate() {
                if with_var {
                    let ms: Vec<ScalarMoments> =
                        win.iter().map(|&i| ScalarMoments { mean: mean[i], var: var[i] }).collect();
                    let (out, _) = maxpool_moments_jac(&ms, RVariant::Exact)?;
                    m_out[o] = out.mean;
                    v_out[o] = out.var;
                } else {
                    m_out[o] = win.iter().map(|&i| mean[i]).fold(f64::NEG_INFINITY, f64::max);
                }
            }
            Ok(LayerOut::plain(m_out, v_out))
        }
        LayerSpec::Normalize => {
            let c = channels(in_shape);
            let spatial = mean.len() / c;
            let mut m_out = Vec::with_capacity(n_out);
            let mut v_out = Vec::with_capacity(n_out);
            for ch in 0..c {
                let (s, t) = (params.weight[ch], params.bias[ch]);
                for i in ch * spatial..(ch + 1) * spatial {
                    m_out.push(s * mean[i] + t);
                    v_out.push(s * s * var[i]);
                }
            }
            Ok(LayerOut::plain(m_out, v_out))
        }
        LayerSpec::SoftmaxHead { variant } => {
            let logits = zip_moments(mean, var);
            let post = softmax_posterior(&logits, head_variant(kind, variant))?;
            Ok(LayerOut {
                mean: post.probs(),
                var: vec![0.0; n_out],
                mask: None,
                log_probs: Some(post.log_probs().to_vec()),
            })
        }
    }
}

/// Inputs for one layer's adjoint on one batch item.
pub(crate) struct ItemGrad<'a> {
    pub kind: ModeKind,
    pub in_shape: &'a [usize],
    pub out_shape: &'a [usize],
    pub mean_in: &'a [f64],
    pub var_in: &'a [f64],
    pub mask: Option<&'a [f64]>,
    /// Gradient with respect to the output means; for a softmax head, with respect to
    /// the class log-probabilities.
    pub g_mean: &'a [f64],
    pub g_var: &'a [f64],
}

/// Maps output gradients to input gradients, accumulating parameter gradients.
pub(crate) fn layer_backward_item(
    layer: &LayerSpec,
    params: &LayerParams,
    grads: &mut LayerParams,
    it: &ItemGrad<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_in = it.mean_in.len();
    let with_var = it.kind == ModeKind::Ap2;
    let (gm, gv) = (it.g_mean, it.g_var);
    match *layer {
        LayerSpec::Linear { in_features, out_features, .. } => {
            let w = &params.weight;
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            for j in 0..out_features {
                let row = &w[j * in_features..(j + 1) * in_features];
                let grow = &mut grads.weight[j * in_features..(j + 1) * in_features];
                let (a, b) = (gm[j], if with_var { gv[j] } else { 0.0 });
                if !grads.bias.is_empty() {
                    grads.bias[j] += a;
                }
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                for i in 0..in_features {
                    gmi[i] += row[i] * a;
                    grow[i] += a * it.mean_in[i];
                }
                if b != 0.0 {
                    for i in 0..in_features {
                        gvi[i] += row[i] * row[i] * b;
                        grow[i] += 2.0 * b * row[i] * it.var_in[i];
                    }
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::Conv2d { kernel, stride, .. } => {
            let g = ConvGeom::new(it.in_shape, it.out_shape, kernel, stride);
            let w = &params.weight;
            let kk = g.k * g.k;
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            for o in 0..g.c_out {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let idx = (o * g.oh + oy) * g.ow + ox;
                        let (a, b) = (gm[idx], if with_var { gv[idx] } else { 0.0 });
                        if !grads.bias.is_empty() {
                            grads.bias[o] += a;
                        }
                        if a == 0.0 && b == 0.0 {
                            continue;
                        }
                        for c in 0..g.c_in {
                            let wbase = (o * g.c_in + c) * kk;
                            for ky in 0..g.k {
                                let row = c * g.h * g.w + (oy * g.stride + ky) * g.w + ox * g.stride;
                                for kx in 0..g.k {
                                    let wi = w[wbase + ky * g.k + kx];
                                    let xi = row + kx;
                                    gmi[xi] += wi * a;
                                    let mut gw = a * it.mean_in[xi];
                                    if b != 0.0 {
                                        gvi[xi] += wi * wi * b;
                                        gw += 2.0 * b * wi * it.var_in[xi];
                                    }
                                    grads.weight[wbase + ky * g.k + kx] += gw;
                                }
                            }
                        }
                    }
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::Activation(act) => {
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            match it.kind {
                ModeKind::Ap2 => {
                    for i in 0..n_in {
                        let (_, j) = act.moments_jac(ScalarMoments { mean: it.mean_in[i], var: it.var_in[i] });
                        (gmi[i], gvi[i]) = j.pullback(gm[i], gv[i]);
                    }
                }
                ModeKind::Ap1 => {
                    for i in 0..n_in {
                        gmi[i] = gm[i] * act.mean_map(it.mean_in[i]).1;
                    }
                }
                ModeKind::Sample => {
                    for i in 0..n_in {
                        let d = act
                            .sample_deriv(it.mean_in[i])
                            .ok_or_else(|| Error::NotDifferentiable(format!("{} unit", act.name())))?;
                        gmi[i] = gm[i] * d;
                    }
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::Dropout { p, rescale } => {
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            match it.kind {
                ModeKind::Ap2 => {
                    for i in 0..n_in {
                        let (_, j) = bernoulli_dropout_moments_jac(
                            ScalarMoments { mean: it.mean_in[i], var: it.var_in[i] },
                            p,
                            rescale,
                        )?;
                        (gmi[i], gvi[i]) = j.pullback(gm[i], gv[i]);
                    }
                }
                ModeKind::Ap1 => {
                    let s = if rescale { 1.0 } else { 1.0 - p };
                    for i in 0..n_in {
                        gmi[i] = gm[i] * s;
                    }
                }
                ModeKind::Sample => {
                    let mask = it.mask.ok_or(Error::MissingRecording("dropout mask"))?;
                    for i in 0..n_in {
                        gmi[i] = gm[i] * mask[i];
                    }
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::AvgPool { window } => {
            let c = it.in_shape[0];
            let plane = it.in_shape[1] * it.in_shape[2];
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            match window {
                None => {
                    let n = plane as f64;
                    for ch in 0..c {
                        for i in ch * plane..(ch + 1) * plane {
                            gmi[i] = gm[ch] / n;
                            gvi[i] = gv[ch] / (n * n);
                        }
                    }
                }
                Some(k) => {
                    let n = (k * k) as f64;
                    for (o, win) in pool_windows(it.in_shape, it.out_shape, k).iter().enumerate() {
                        for &i in win {
                            gmi[i] = gm[o] / n;
                            gvi[i] = gv[o] / (n * n);
                        }
                    }
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::MaxPool { window } => {
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            for (o, win) in pool_windows(it.in_shape, it.out_shape, window).iter().enumerate() {
                if with_var {
                    let ms: Vec<ScalarMoments> =
                        win.iter().map(|&i| ScalarMoments { mean: it.mean_in[i], var: it.var_in[i] }).collect();
                    let (_, jacs) = maxpool_moments_jac(&ms, RVariant::Exact)?;
                    for (&i, j) in win.iter().zip(&jacs) {
                        let (a, b) = j.pullback(gm[o], gv[o]);
                        gmi[i] += a;
                        gvi[i] += b;
                    }
                } else {
                    let best = argmax(win.iter().map(|&i| (i, it.mean_in[i])));
                    gmi[best] += gm[o];
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::Normalize => {
            let c = channels(it.in_shape);
            let spatial = n_in / c;
            let mut gmi = vec![0.0; n_in];
            let mut gvi = vec![0.0; n_in];
            for ch in 0..c {
                let s = params.weight[ch];
                for i in ch * spatial..(ch + 1) * spatial {
                    let b = if with_var { gv[i] } else { 0.0 };
                    gmi[i] = s * gm[i];
                    gvi[i] = s * s * b;
                    grads.weight[ch] += gm[i] * it.mean_in[i] + 2.0 * b * s * it.var_in[i];
                    grads.bias[ch] += gm[i];
                }
            }
            Ok((gmi, gvi))
        }
        LayerSpec::SoftmaxHead { variant } => {
            let logits = zip_moments(it.mean_in, it.var_in);
            let g = softmax_posterior_vjp(&logits, head_variant(it.kind, variant), gm)?;
            Ok(g.into_iter().map(|(a, b)| (a, if with_var { b } else { 0.0 })).unzip())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{Activation, Assumption, BernoulliMean, TransformVariance};
    use rand::SeedableRng;

    /// Central-difference check of a layer adjoint at one AP2 point, including parameters.
    fn check_layer(layer: LayerSpec, in_shape: &[usize], seed: u64) {
        let out_shape = layer.output_shape(in_shape).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in: usize = in_shape.iter().product();
        let n_out: usize = out_shape.iter().product();
        let (nw, nb) = super::super::param_sizes(&layer, in_shape);
        let mut params = LayerParams {
            weight: (0..nw).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let mean: Vec<f64> = (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..n_in).map(|_| rng.random_range(0.2f64..3.0).powi(2)).collect();
        let wm: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let is_head = matches!(layer, LayerSpec::SoftmaxHead { .. });
        let objective = |p: &LayerParams, m: &[f64], v: &[f64]| -> f64 {
            let out = layer_forward_item(&layer, p, in_shape, &out_shape, m, v, ModeKind::Ap2, None).unwrap();
            if is_head {
                out.log_probs.unwrap().iter().zip(&wm).map(|(a, b)| a * b).sum()
            } else {
                out.mean.iter().zip(&wm).map(|(a, b)| a * b).sum::<f64>()
                    + out.var.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>()
            }
        };
        let mut grads = params.zeros_like();
        let zero = vec![0.0; n_out];
        let it = ItemGrad {
            kind: ModeKind::Ap2,
            in_shape,
            out_shape: &out_shape,
            mean_in: &mean,
            var_in: &var,
            mask: None,
            g_mean: &wm,
            g_var: if is_head { &zero } else { &wv },
        };
        let (gm, gv) = layer_backward_item(&layer, &params, &mut grads, &it).unwrap();
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-2);
        for i in 0..n_in {
            let (mut up, mut dn) = (mean.clone(), mean.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&params, &up, &var) - objective(&params, &dn, &var)) / (2.0 * h);
            assert!(rel(gm[i], fd) < 1e-4, "{layer:?} dmean[{i}]: {} vs {fd}", gm[i]);
            let (mut up, mut dn) = (var.clone(), var.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&params, &mean, &up) - objective(&params, &mean, &dn)) / (2.0 * h);
            assert!(rel(gv[i], fd) < 1e-4, "{layer:?} dvar[{i}]: {} vs {fd}", gv[i]);
        }
        for k in 0..params.weight.len().min(40) {
            let orig = params.weight[k];
            params.weight[k] = orig + h;
            let up = objective(&params, &mean, &var);
            params.weight[k] = orig - h;
            let dn = objective(&params, &mean, &var);
            params.weight[k] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(rel(grads.weight[k], fd) < 1e-4, "{layer:?} dw[{k}]: {} vs {fd}", grads.weight[k]);
        }
        for k in 0..params.bias.len() {
            let orig = params.bias[k];
            params.bias[k] = orig + h;
            let up = objective(&params, &mean, &var);
            params.bias[k] = orig - h;
            let dn = objective(&params, &mean, &var);
            params.bias[k] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(rel(grads.bias[k], fd) < 1e-4, "{layer:?} db[{k}]: {} vs {fd}", grads.bias[k]);
        }
    }

    #[test]
    fn linear_and_conv_adjoints() {
        check_layer(LayerSpec::Linear { in_features: 6, out_features: 4, bias: true }, &[6], 1);
        check_layer(LayerSpec::Linear { in_features: 12, out_features: 3, bias: false }, &[3, 2, 2], 2);
        let conv = LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2, bias: true };
        check_layer(conv, &[2, 7, 7], 3);
    }

    #[test]
    fn pooling_normalize_dropout_adjoints() {
        check_layer(LayerSpec::AvgPool { window: Some(2) }, &[2, 4, 4], 4);
        check_layer(LayerSpec::AvgPool { window: None }, &[3, 3, 3], 5);
        check_layer(LayerSpec::MaxPool { window: 2 }, &[2, 4, 4], 6);
        check_layer(LayerSpec::Normalize, &[3, 2, 2], 7);
        check_layer(LayerSpec::Dropout { p: 0.3, rescale: true }, &[5], 8);
        check_layer(LayerSpec::Dropout { p: 0.2, rescale: false }, &[5], 9);
    }

    #[test]
    fn activation_and_head_adjoints() {
        let acts = [
            Activation::Relu { assumption: Assumption::Normal, var: RVariant::Exact },
            Activation::Relu { assumption: Assumption::Logistic, var: RVariant::Exact },
            Activation::LeakyRelu { alpha: 0.1, var: RVariant::Fitted },
            Activation::Heaviside { assumption: Assumption::Normal },
            Activation::LogisticBernoulli { mean: BernoulliMean::Ap2b },
            Activation::LogisticBernoulli { mean: BernoulliMean::Pea },
            Activation::LogisticTransform { var: TransformVariance::Heuristic },
            Activation::Probit,
            Activation::NormalCdf,
            Activation::Abs,
        ];
        for (i, a) in acts.into_iter().enumerate() {
            check_layer(LayerSpec::Activation(a), &[7], 20 + i as u64);
        }
        for (i, v) in
            [SoftmaxVariant::Standard, SoftmaxVariant::Simplified, SoftmaxVariant::Logistic, SoftmaxVariant::Normal]
                .into_iter()
                .enumerate()
        {
            check_layer(LayerSpec::SoftmaxHead { variant: v }, &[5], 40 + i as u64);
        }
    }
}
