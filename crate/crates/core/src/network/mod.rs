//! Layered networks and the three propagation modes.
//!
//! * AP1 carries means only (variances are explicit zeros) and applies `f(μ)`, or the
//!   mean map for stochastic units. It is the standard forward pass.
//! * AP2 carries means and variances under a diagonal-covariance assumption.
//! * SAMPLE draws input noise, dropout masks and stochastic unit outputs from a seeded
//!   stream and pushes plain values through the same layers.

mod config;
mod layers;
mod stats;

pub use config::parse_config;
pub(crate) use layers::{layer_backward_item, ItemGrad};
pub use stats::{apply_analytic_normalization, propagate_dataset_stats};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activations::{check_drop_prob, Activation, SoftmaxVariant};
use crate::error::{Error, Result};
use crate::moments::ClassPosterior;
use crate::tensor::MomentTensor;

/// One layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Dense layer; flattens its input.
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Square-kernel convolution with valid padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    },
    Activation(Activation),
    /// Multiplicative Bernoulli noise with drop probability `p`.
    Dropout {
        p: f64,
        rescale: bool,
    },
    /// Non-overlapping average pooling; `None` pools the whole plane.
    AvgPool {
        window: Option<usize>,
    },
    /// Non-overlapping max pooling.
    MaxPool {
        window: usize,
    },
    /// Per-channel affine map `scale·x + shift`.
    Normalize,
    SoftmaxHead {
        variant: SoftmaxVariant,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Normalize => "normalize",
            LayerSpec::SoftmaxHead { .. } => "softmax",
        }
    }

    /// Short label used in reports, e.g. `activation:relu`.
    pub fn label(&self) -> String {
        match self {
            LayerSpec::Activation(a) => format!("activation:{}", a.name()),
            other => other.kind().to_string(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Normalize)
    }

    /// Output item shape for the given input item shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        match *self {
            LayerSpec::Linear { in_features, out_features, .. } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::layer("linear layer needs positive dimensions"));
                }
                if numel != in_features {
                    return Err(Error::Shape { expected: vec![in_features], got: input.to_vec() });
                }
                Ok(vec![out_features])
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::layer("conv2d needs positive channels, kernel and stride"));
                }
                let [c, h, w] = spatial(input)?;
                if c != in_channels {
                    return Err(Error::Shape { expected: vec![in_channels, h, w], got: input.to_vec() });
                }
                if h < kernel || w < kernel {
                    return Err(Error::layer(format!("conv2d kernel {kernel} exceeds input {h}x{w}")));
                }
                Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Activation(a) => {
                a.validate()?;
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { p, .. } => {
                check_drop_prob(p)?;
                Ok(input.to_vec())
            }
            LayerSpec::Normalize => Ok(input.to_vec()),
            LayerSpec::AvgPool { window: None } => {
                let [c, _, _] = spatial(input)?;
                Ok(vec![c, 1, 1])
            }
            LayerSpec::AvgPool { window: Some(k) } | LayerSpec::MaxPool { window: k } => {
                let [c, h, w] = spatial(input)?;
                if k == 0 || h % k != 0 || w % k != 0 {
                    return Err(Error::layer(format!("pool window {k} must divide the {h}x{w} plane")));
                }
                Ok(vec![c, h / k, w / k])
            }
            LayerSpec::SoftmaxHead { .. } => {
                if numel < 2 {
                    return Err(Error::layer("softmax head needs at least 2 classes"));
                }
                Ok(vec![numel])
            }
        }
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::layer(format!("expected a CxHxW input, got {shape:?}"))),
    }
}

/// Number of channels of an item shape: the leading extent.
pub(crate) fn channels(shape: &[usize]) -> usize {
    shape.first().copied().unwrap_or(1)
}

/// Propagation mode tag without the sampling seed, used in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeKind {
    Ap1,
    #[default]
    Ap2,
    Sample,
}

impl ModeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap1" => Some(ModeKind::Ap1),
            "ap2" => Some(ModeKind::Ap2),
            "sample" => Some(ModeKind::Sample),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModeKind::Ap1 => "ap1",
            ModeKind::Ap2 => "ap2",
            ModeKind::Sample => "sample",
        }
    }
}

/// How a forward pass treats uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMode {
    Ap1,
    Ap2,
    /// Monte-Carlo draw; `stream` selects an independent noise stream for the same seed.
    Sample {
        seed: u64,
        stream: u64,
    },
}

impl PropagationMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            PropagationMode::Ap1 => ModeKind::Ap1,
            PropagationMode::Ap2 => ModeKind::Ap2,
            PropagationMode::Sample { .. } => ModeKind::Sample,
        }
    }
}

/// Network description: input shape, layer stack and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub default_mode: ModeKind,
    /// Default input noise variance applied by drivers.
    pub input_var: f64,
}

impl NetworkConfig {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input_shape, layers, seed: 0, default_mode: ModeKind::Ap2, input_var: 0.0 }
    }

    /// Item shapes at every point of the network: `[input, after layer 0, ...]`.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::layer("input shape must have positive extents"));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::SoftmaxHead { .. }) && i + 1 != self.layers.len() {
                return Err(Error::layer(format!("softmax head at layer {i} must be the last layer")));
            }
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::layer(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    pub fn has_head(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::SoftmaxHead { .. }))
    }

    pub fn num_classes(&self) -> Result<Option<usize>> {
        if !self.has_head() {
            return Ok(None);
        }
        Ok(self.layer_shapes()?.last().map(|s| s.iter().product()))
    }

    /// Same network with every activation replaced by `act`.
    pub fn with_activation(&self, act: Activation) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            if let LayerSpec::Activation(a) = l {
                *a = act;
            }
        }
        out
    }

    /// Same network with a dropout layer after every activation (replacing existing ones).
    pub fn with_dropout(&self, p: f64) -> Self {
        let mut out = self.clone();
        out.layers.retain(|l| !matches!(l, LayerSpec::Dropout { .. }));
        if p > 0.0 {
            let mut layers = Vec::with_capacity(out.layers.len() * 2);
            for l in out.layers.drain(..) {
                let is_act = matches!(l, LayerSpec::Activation(_));
                layers.push(l);
                if is_act {
                    layers.push(LayerSpec::Dropout { p, rescale: true });
                }
            }
            out.layers = layers;
        }
        out
    }

    /// Canonical text form accepted by [`parse_config`].
    pub fn to_text(&self) -> String {
        config::write_config(self)
    }
}

/// Trainable parameters of one layer. For linear layers `weight` is `[out, in]`, for
/// convolutions `[out, in, k, k]`, for normalize layers `weight` holds the per-channel
/// scale and `bias` the shift. Parameter-free layers hold empty vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.bias.len()] }
    }
}

/// Expected parameter sizes (weight, bias) for a layer given its input shape.
pub(crate) fn param_sizes(layer: &LayerSpec, input: &[usize]) -> (usize, usize) {
    match *layer {
        LayerSpec::Linear { in_features, out_features, bias } => {
            (in_features * out_features, if bias { out_features } else { 0 })
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel, bias, .. } => {
            (out_channels * in_channels * kernel * kernel, if bias { out_channels } else { 0 })
        }
        LayerSpec::Normalize => (channels(input), channels(input)),
        _ => (0, 0),
    }
}

/// A network configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    shapes: Vec<Vec<usize>>,
    params: Vec<LayerParams>,
}

impl Network {
    /// Builds a network with uniform `±1/√fan_in` initialisation seeded by `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let shapes = config.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, input)| {
                let (nw, nb) = param_sizes(layer, input);
                let fan_in = match *layer {
                    LayerSpec::Linear { in_features, .. } => in_features,
                    LayerSpec::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
                    LayerSpec::Normalize => {
                        return LayerParams { weight: vec![1.0; nw], bias: vec![0.0; nb] };
                    }
                    _ => return LayerParams::default(),
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
                let weight = draw(nw);
                let bias = draw(nb);
                LayerParams { weight, bias }
            })
            .collect();
        Ok(Self { config, shapes, params })
    }

    /// Wraps explicit parameters after checking their sizes.
    pub fn with_params(config: NetworkConfig, params: Vec<LayerParams>) -> Result<Self> {
        let shapes = config.layer_shapes()?;
        check_params(&config, &shapes, &params)?;
        Ok(Self { config, shapes, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<LayerParams>) -> Result<()> {
        check_params(&self.config, &self.shapes, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    /// Runs the network on a batch, recording every intermediate tensor.
    pub fn forward(&self, input: &MomentTensor, mode: PropagationMode) -> Result<ForwardRecord> {
        if input.item_shape() != self.shapes[0].as_slice() {
            let mut expected = vec![input.batch()];
            expected.extend_from_slice(&self.shapes[0]);
            return Err(Error::Shape { expected, got: input.shape().to_vec() });
        }
        let batch = input.batch();
        let items: Vec<Result<ItemTrace>> = (0..batch)
            .into_par_iter()
            .map(|b| self.forward_item(input.item_means(b), input.item_vars(b), mode, b as u64))
            .collect();
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(assemble(&self.config.layers, &self.shapes, input, mode, items))
    }

    fn forward_item(&self, mean_in: &[f64], var_in: &[f64], mode: PropagationMode, item: u64) -> Result<ItemTrace> {
        let kind = mode.kind();
        let mut rng = match mode {
            PropagationMode::Sample { seed, stream } => Some(item_rng(seed, stream, item)),
            _ => None,
        };
        let (mut mean, mut var) = match (kind, rng.as_mut()) {
            (ModeKind::Sample, Some(r)) => (layers::sample_input(mean_in, var_in, r), vec![0.0; mean_in.len()]),
            (ModeKind::Ap1, _) => (mean_in.to_vec(), vec![0.0; mean_in.len()]),
            _ => (mean_in.to_vec(), var_in.to_vec()),
        };
        let mut trace = ItemTrace {
            input: if kind == ModeKind::Sample { Some(mean.clone()) } else { None },
            outputs: Vec::with_capacity(self.config.layers.len()),
            masks: Vec::with_capacity(self.config.layers.len()),
            log_probs: None,
        };
        for (i, layer) in self.config.layers.iter().enumerate() {
            let out = layers::layer_forward_item(
                layer,
                &self.params[i],
                &self.shapes[i],
                &self.shapes[i + 1],
                &mean,
                &var,
                kind,
                rng.as_mut(),
            )
            .map_err(|e| match e {
                Error::Domain(m) => Error::layer(format!("layer {i} ({}): {m}", layer.kind())),
                other => other,
            })?;
            mean = out.mean;
            var = out.var;
            trace.masks.push(out.mask);
            if out.log_probs.is_some() {
                trace.log_probs = out.log_probs;
            }
            trace.outputs.push((mean.clone(), var.clone()));
        }
        Ok(trace)
    }
}

fn check_params(config: &NetworkConfig, shapes: &[Vec<usize>], params: &[LayerParams]) -> Result<()> {
    if params.len() != config.layers.len() {
        return Err(Error::Shape { expected: vec![config.layers.len()], got: vec![params.len()] });
    }
    for (i, (layer, p)) in config.layers.iter().zip(params).enumerate() {
        let (nw, nb) = param_sizes(layer, &shapes[i]);
        if p.weight.len() != nw || p.bias.len() != nb {
            return Err(Error::layer(format!(
                "layer {i} ({}) expects {nw} weights and {nb} biases, got {} and {}",
                layer.kind(),
                p.weight.len(),
                p.bias.len()
            )));
        }
        if p.weight.iter().chain(&p.bias).any(|x| !x.is_finite()) {
            return Err(Error::layer(format!("layer {i} has non-finite parameters")));
        }
    }
    Ok(())
}

/// Independent noise stream for one batch item of one sampling call.
pub(crate) fn item_rng(seed: u64, stream: u64, item: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)));
    rng.set_stream(item);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct ItemTrace {
    input: Option<Vec<f64>>,
    outputs: Vec<(Vec<f64>, Vec<f64>)>,
    masks: Vec<Option<Vec<f64>>>,
    log_probs: Option<Vec<f64>>,
}

/// Everything a forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub mode: PropagationMode,
    /// `tensors[0]` is the effective input (the drawn input in SAMPLE mode);
    /// `tensors[i + 1]` is the output of layer `i`.
    pub tensors: Vec<MomentTensor>,
    /// Multiplicative dropout masks drawn in SAMPLE mode, per layer.
    pub masks: Vec<Option<Vec<f64>>>,
    /// Class posteriors per batch item when the network ends in a softmax head.
    pub posteriors: Option<Vec<ClassPosterior>>,
}

impl ForwardRecord {
    pub fn output(&self) -> &MomentTensor {
        self.tensors.last().expect("record holds the input tensor")
    }

    pub fn posteriors(&self) -> Result<&[ClassPosterior]> {
        self.posteriors.as_deref().ok_or(Error::MissingRecording("network has no softmax head"))
    }

    /// Class predictions per item: posterior argmax, or output argmax without a head.
    pub fn predictions(&self) -> Vec<usize> {
        match &self.posteriors {
            Some(ps) => ps.iter().map(ClassPosterior::argmax).collect(),
            None => {
                let out = self.output();
                (0..out.batch())
                    .map(|b| {
                        out.item_means(b)
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                            .0
                    })
                    .collect()
            }
        }
    }
}

fn assemble(
    layers: &[LayerSpec],
    shapes: &[Vec<usize>],
    input: &MomentTensor,
    mode: PropagationMode,
    items: Vec<ItemTrace>,
) -> ForwardRecord {
    let batch = items.len();
    let with_batch = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![batch];
        v.extend_from_slice(s);
        v
    };
    let first = match mode {
        PropagationMode::Sample { .. } => {
            let means: Vec<f64> = items.iter().flat_map(|t| t.input.clone().unwrap_or_default()).collect();
            let n = means.len();
            MomentTensor::from_parts_unchecked(input.shape().to_vec(), means, vec![0.0; n])
        }
        PropagationMode::Ap1 => {
            MomentTensor::from_parts_unchecked(input.shape().to_vec(), input.means().to_vec(), vec![0.0; input.len()])
        }
        PropagationMode::Ap2 => input.clone(),
    };
    let mut tensors = Vec::with_capacity(layers.len() + 1);
    tensors.push(first);
    for (i, shape) in shapes.iter().enumerate().skip(1) {
        let n = shape.iter().product::<usize>() * batch;
        let mut means = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for t in &items {
            means.extend_from_slice(&t.outputs[i - 1].0);
            vars.extend_from_slice(&t.outputs[i - 1].1);
        }
        tensors.push(MomentTensor::from_parts_unchecked(with_batch(shape), means, vars));
    }
    let masks = (0..layers.len())
        .map(|i| {
            if items.iter().all(|t| t.masks[i].is_some()) && !items.is_empty() {
                Some(items.iter().flat_map(|t| t.masks[i].clone().unwrap_or_default()).collect())
            } else {
                None
            }
        })
        .collect();
    let posteriors = if items.iter().all(|t| t.log_probs.is_some()) && !items.is_empty() {
        Some(items.into_iter().map(|t| ClassPosterior::from_normalized(t.log_probs.unwrap_or_default())).collect())
    } else {
        None
    };
    ForwardRecord { mode, tensors, masks, posteriors }
}
