//! Dataset statistics propagated per channel, and analytic normalization.
//!
//! Spatial positions and batch items are collapsed: each point in the network carries one
//! `(μ, σ²)` per channel (the leading extent of the item shape). A linear or conv layer
//! acts as a channel-mixing map whose coefficients are the kernel sums for the mean and
//! the squared-kernel sums for the variance.

use super::{channels, LayerParams, LayerSpec, Network};
use crate::activations::{bernoulli_dropout_moments, maxpool_moments};
use crate::error::{Error, Result};
use crate::moments::ScalarMoments;

/// Mixing coefficients: `coef[o][c] = (Σ w, Σ w²)` over the weights linking channel `c`
/// to output channel `o`.
fn mixing(layer: &LayerSpec, params: &LayerParams, in_shape: &[usize]) -> Vec<Vec<(f64, f64)>> {
    match *layer {
        LayerSpec::Linear { in_features, out_features, .. } => {
            let c_in = channels(in_shape);
            let spatial = in_features / c_in;
            (0..out_features)
                .map(|j| {
                    let row = &params.weight[j * in_features..(j + 1) * in_features];
                    row.chunks(spatial).map(|ch| (ch.iter().sum(), ch.iter().map(|w| w * w).sum())).collect()
                })
                .collect()
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
            let kk = kernel * kernel;
            (0..out_channels)
                .map(|o| {
                    (0..in_channels)
                        .map(|c| {
                            let w = &params.weight[(o * in_channels + c) * kk..(o * in_channels + c + 1) * kk];
                            (w.iter().sum(), w.iter().map(|x| x * x).sum())
                        })
                        .collect()
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn propagate_layer(
    layer: &LayerSpec,
    params: &LayerParams,
    in_shape: &[usize],
    stats: &[ScalarMoments],
) -> Result<Vec<ScalarMoments>> {
    Ok(match *layer {
        LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. } => mixing(layer, params, in_shape)
            .iter()
            .enumerate()
            .map(|(o, row)| {
                let mut m = params.bias.get(o).copied().unwrap_or(0.0);
                let mut v = 0.0;
                for ((sw, sw2), s) in row.iter().zip(stats) {
                    m += sw * s.mean;
                    v += sw2 * s.var;
                }
                ScalarMoments { mean: m, var: v }
            })
            .collect(),
        LayerSpec::Activation(act) => stats.iter().map(|&s| act.moments_jac(s).0).collect(),
        LayerSpec::Dropout { p, rescale } => {
            stats.iter().map(|&s| bernoulli_dropout_moments(s, p, rescale)).collect::<Result<_>>()?
        }
        LayerSpec::AvgPool { window } => {
            let n = match window {
                Some(k) => (k * k) as f64,
                None => (in_shape[1] * in_shape[2]) as f64,
            };
            stats.iter().map(|s| ScalarMoments { mean: s.mean, var: s.var / n }).collect()
        }
        LayerSpec::MaxPool { window } => {
            stats.iter().map(|&s| maxpool_moments(&vec![s; window * window])).collect::<Result<_>>()?
        }
        LayerSpec::Normalize => stats
            .iter()
            .zip(params.weight.iter().zip(&params.bias))
            .map(|(s, (&a, &b))| ScalarMoments { mean: a * s.mean + b, var: a * a * s.var })
            .collect(),
        LayerSpec::SoftmaxHead { .. } => stats.to_vec(),
    })
}

fn broadcast_input(net: &Network, input_stats: &[ScalarMoments]) -> Result<Vec<ScalarMoments>> {
    let c = channels(&net.shapes()[0]);
    match input_stats.len() {
        n if n == c => Ok(input_stats.to_vec()),
        1 => Ok(vec![input_stats[0]; c]),
        n => Err(Error::Shape { expected: vec![c], got: vec![n] }),
    }
}

/// Per-channel dataset statistics at every point of the network: `[input, after layer 0, ...]`.
/// A single input statistic is broadcast to every input channel. The softmax head passes
/// its logit statistics through unchanged.
pub fn propagate_dataset_stats(net: &Network, input_stats: &[ScalarMoments]) -> Result<Vec<Vec<ScalarMoments>>> {
    let mut out = vec![broadcast_input(net, input_stats)?];
    for (i, layer) in net.layers().iter().enumerate() {
        let next = propagate_layer(layer, &net.params()[i], &net.shapes()[i], out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Rescales the network so that the propagated dataset statistics are `(0, 1)` per channel
/// at every normalization point, processing layers front to back.
///
/// With `normalize` layers present, each one gets scale `1/σ` and shift `−μ/σ` from the
/// statistics reaching it, and biases of the linear or conv layers directly before it are
/// zeroed. Without them, every linear and conv layer is folded instead: its weights are
/// divided by `σ` and its bias becomes `(b − μ)/σ` (only the scale is applied when the
/// layer has no bias).
///
/// Returns the indices of the network points (as in [`propagate_dataset_stats`]) that were
/// normalized.
pub fn apply_analytic_normalization(net: &mut Network, input_stats: &[ScalarMoments]) -> Result<Vec<usize>> {
    let has_norm = net.layers().iter().any(|l| matches!(l, LayerSpec::Normalize));
    let mut stats = broadcast_input(net, input_stats)?;
    let mut points = Vec::new();
    let layers = net.layers().to_vec();
    let shapes = net.shapes().to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let is_affine = matches!(layer, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. });
        if has_norm && is_affine && matches!(layers.get(i + 1), Some(LayerSpec::Normalize)) {
            net.params_mut()[i].bias.iter_mut().for_each(|b| *b = 0.0);
        }
        if has_norm && matches!(layer, LayerSpec::Normalize) {
            let p = &mut net.params_mut()[i];
            for (ch, s) in stats.iter().enumerate() {
                let sigma = s.var.sqrt();
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::DegenerateChannel { layer: i, channel: ch });
                }
                p.weight[ch] = 1.0 / sigma;
                p.bias[ch] = -s.mean / sigma;
            }
            points.push(i + 1);
        }
        let mut next = propagate_layer(layer, &net.params()[i], &shapes[i], &stats)?;
        if !has_norm && is_affine {
            let p = &mut net.params_mut()[i];
            let per_out = p.weight.len() / next.len();
            let has_bias = !p.bias.is_empty();
            for (o, s) in next.iter().enumerate() {
                let sigma = s.var.sqrt();
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::DegenerateChannel { layer: i, channel: o });
                }
                p.weight[o * per_out..(o + 1) * per_out].iter_mut().for_each(|w| *w /= sigma);
                if has_bias {
                    p.bias[o] = (p.bias[o] - s.mean) / sigma;
                }
            }
            next = propagate_layer(layer, &net.params()[i], &shapes[i], &stats)?;
            points.push(i + 1);
        }
        stats = next;
    }
    Ok(points)
}
