//! Gradient training under the negative log-likelihood of the class posterior.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{split_indices, Dataset};
use crate::error::{Error, Result};
use crate::moments::ClassPosterior;
use crate::network::{layer_backward_item, ForwardRecord, ItemGrad, LayerParams, ModeKind, Network, PropagationMode};
use crate::tensor::MomentTensor;

/// Batch items per gradient-accumulation chunk. Chunks are summed in index order, so
/// results do not depend on the number of worker threads.
const CHUNK: usize = 8;

/// `−log p(label)`.
pub fn nll_loss(posterior: &ClassPosterior, label: usize) -> Result<f64> {
    let classes = posterior.num_classes();
    posterior.log_probs().get(label).map(|l| -l).ok_or(Error::Label { label, classes })
}

/// Gradients with respect to the network input moments.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub shape: Vec<usize>,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
}

/// Loss gradients for every parameter and for the input moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub params: Vec<LayerParams>,
    pub input: InputGradient,
}

/// Mean NLL over the batch and its gradient.
pub fn backward(net: &Network, record: &ForwardRecord, labels: &[usize]) -> Result<(f64, GradientBundle)> {
    let posteriors = record.posteriors()?;
    if labels.len() != posteriors.len() {
        return Err(Error::Shape { expected: vec![posteriors.len()], got: vec![labels.len()] });
    }
    let classes = posteriors[0].num_classes();
    let scale = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    for (p, &y) in posteriors.iter().zip(labels) {
        loss += nll_loss(p, y)? * scale;
    }
    let bundle = backward_from_output(net, record, |b, g_mean, _| {
        g_mean.fill(0.0);
        if labels[b] < classes {
            g_mean[labels[b]] = -scale;
        }
    })?;
    Ok((loss, bundle))
}

/// Reverse sweep seeded by output gradients written by `seed(item, g_mean, g_var)`.
/// For networks ending in a softmax head `g_mean` is the gradient with respect to the
/// class log-probabilities.
pub fn backward_from_output<F>(net: &Network, record: &ForwardRecord, seed: F) -> Result<GradientBundle>
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    let layers = net.layers();
    if record.tensors.len() != layers.len() + 1 {
        return Err(Error::MissingRecording("per-layer tensors"));
    }
    let shapes = net.shapes();
    let kind = record.mode.kind();
    let batch = record.tensors[0].batch();
    let n_out: usize = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
    let chunks: Vec<Result<(Vec<LayerParams>, Vec<(Vec<f64>, Vec<f64>)>)>> = (0..batch.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut grads: Vec<LayerParams> = net.params().iter().map(LayerParams::zeros_like).collect();
            let mut inputs = Vec::new();
            for b in c * CHUNK..((c + 1) * CHUNK).min(batch) {
                let mut gm = vec![0.0; n_out];
                let mut gv = vec![0.0; n_out];
                seed(b, &mut gm, &mut gv);
                for i in (0..layers.len()).rev() {
                    let t_in = &record.tensors[i];
                    let mask = record.masks.get(i).and_then(|m| m.as_ref()).map(|m| {
                        let n = t_in.item_len();
                        &m[b * n..(b + 1) * n]
                    });
                    let it = ItemGrad {
                        kind,
                        in_shape: &shapes[i],
                        out_shape: &shapes[i + 1],
                        mean_in: t_in.item_means(b),
                        var_in: t_in.item_vars(b),
                        mask,
                        g_mean: &gm,
                        g_var: &gv,
                    };
                    (gm, gv) = layer_backward_item(&layers[i], &net.params()[i], &mut grads[i], &it)?;
                }
                inputs.push((gm, gv));
            }
            Ok((grads, inputs))
        })
        .collect();
    let mut total: Vec<LayerParams> = net.params().iter().map(LayerParams::zeros_like).collect();
    let mut d_mean = Vec::with_capacity(record.tensors[0].len());
    let mut d_var = Vec::with_capacity(record.tensors[0].len());
    for chunk in chunks {
        let (grads, inputs) = chunk?;
        for (t, g) in total.iter_mut().zip(&grads) {
            t.weight.iter_mut().zip(&g.weight).for_each(|(a, b)| *a += b);
            t.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
        }
        for (m, v) in inputs {
            d_mean.extend(m);
            d_var.extend(v);
        }
    }
    Ok(GradientBundle {
        params: total,
        input: InputGradient { shape: record.tensors[0].shape().to_vec(), d_mean, d_var },
    })
}

/// Optimizer family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::ADAM
    }
}

/// Optimizer accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    first: Vec<LayerParams>,
    second: Vec<LayerParams>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[LayerParams]) -> Self {
        let zeros: Vec<LayerParams> = params.iter().map(LayerParams::zeros_like).collect();
        Self { kind, step: 0, first: zeros.clone(), second: zeros }
    }

    /// One update with learning rate `lr`.
    pub fn update(&mut self, params: &mut [LayerParams], grads: &[LayerParams], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.weight.iter_mut().zip(&g.weight).for_each(|(w, d)| *w -= lr * d);
                    p.bias.iter_mut().zip(&g.bias).for_each(|(w, d)| *w -= lr * d);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                };
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    apply(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight);
                    apply(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias);
                }
            }
        }
    }
}

/// Training settings. The learning rate in epoch `k` is `lr · lr_decay^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub optimizer: OptimizerKind,
    pub mode: ModeKind,
    /// Fraction of the data held out for validation (the tail of a seeded shuffle).
    pub val_fraction: f64,
    pub seed: u64,
    /// Noise variance attached to every input pixel.
    pub input_var: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            lr_decay: 0.96,
            optimizer: OptimizerKind::ADAM,
            mode: ModeKind::Ap2,
            val_fraction: 0.1,
            seed: 0,
            input_var: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    /// Mode used for evaluation: sampling-trained networks are evaluated by the mean pass.
    pub fn eval_mode(&self) -> ModeKind {
        match self.mode {
            ModeKind::Sample => ModeKind::Ap1,
            m => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                fmt6(e.lr),
                fmt6(e.train_loss),
                fmt6(e.val_loss),
                fmt6(e.val_acc)
            ));
        }
        out
    }
}

/// Formats a number with 6 significant digits.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// Loss and accuracy of a network on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub(crate) fn batch_tensor(data: &Dataset, items: &[usize], input_var: f64) -> Result<MomentTensor> {
    let n = data.item_len();
    let mut means = Vec::with_capacity(items.len() * n);
    for &i in items {
        means.extend_from_slice(data.image(i));
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(&data.image_shape);
    MomentTensor::with_uniform_var(shape, means, input_var)
}

/// Mean NLL and accuracy over `items` (all items when `None`).
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    items: Option<&[usize]>,
    mode: PropagationMode,
    input_var: f64,
) -> Result<Evaluation> {
    let all: Vec<usize>;
    let items = match items {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    if items.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for (k, chunk) in items.chunks(512).enumerate() {
        let x = batch_tensor(data, chunk, input_var)?;
        let mode = match mode {
            PropagationMode::Sample { seed, stream } => {
                PropagationMode::Sample { seed, stream: stream.wrapping_add(k as u64) }
            }
            m => m,
        };
        let rec = net.forward(&x, mode)?;
        let posts = rec.posteriors()?;
        for (p, &i) in posts.iter().zip(chunk) {
            loss += nll_loss(p, data.labels[i])?;
            if p.argmax() == data.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(Evaluation { loss: loss / items.len() as f64, accuracy: correct as f64 / items.len() as f64 })
}

fn analytic(mode: ModeKind) -> PropagationMode {
    match mode {
        ModeKind::Ap1 => PropagationMode::Ap1,
        _ => PropagationMode::Ap2,
    }
}

/// Mini-batch training with a fixed seed. Validation metrics are computed on the held-out
/// split in [`Hyperparams::eval_mode`]; with no held-out data they fall back to the
/// training split.
pub fn train(net: &mut Network, data: &Dataset, hp: &Hyperparams) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if hp.batch_size == 0 {
        return Err(Error::domain("batch size must be positive"));
    }
    let split = split_indices(data.len(), hp.val_fraction, hp.seed)?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let eval_items = if split.val.is_empty() { &split.train } else { &split.val };
    let mut opt = OptimizerState::new(hp.optimizer, net.params());
    let mut log = TrainLog::default();
    let mut order = split.train.clone();
    let mut step: u64 = 0;
    for epoch in 0..hp.epochs {
        let lr = hp.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(hp.batch_size).enumerate() {
            let x = batch_tensor(data, batch, hp.input_var)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let mode = match hp.mode {
                ModeKind::Sample => PropagationMode::Sample { seed: hp.seed, stream: step },
                m => analytic(m),
            };
            let rec = net.forward(&x, mode)?;
            let (loss, grads) = backward(net, &rec, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: bi });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.update(net.params_mut(), &grads.params, lr);
            step += 1;
        }
        let val = evaluate(net, data, Some(eval_items), analytic(hp.eval_mode()), hp.input_var)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss { loss: val.loss, epoch, batch: usize::MAX });
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: epoch_loss / order.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests;
