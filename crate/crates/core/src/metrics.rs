//! Accuracy of analytic approximations against Monte-Carlo estimates.

use rand_distr::{Distribution, StandardNormal};

use crate::activations::{softmax_posterior, SoftmaxVariant};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mc::{mc_propagate, MCEstimate, RunningMoments};
use crate::moments::{ClassPosterior, ScalarMoments};
use crate::network::{item_rng, LayerSpec, ModeKind, Network, PropagationMode};
use crate::tensor::MomentTensor;
use crate::train::{batch_tensor, evaluate, fmt6};

/// Mean absolute error of the means relative to the mean Monte-Carlo std.
pub fn eps_mu(approx: &[f64], mc: &MCEstimate) -> Result<f64> {
    if approx.len() != mc.means.len() {
        return Err(Error::Shape { expected: vec![mc.means.len()], got: vec![approx.len()] });
    }
    if approx.is_empty() {
        return Err(Error::Empty("eps_mu input"));
    }
    let n = approx.len() as f64;
    let sigma = mc.vars.iter().map(|v| v.sqrt()).sum::<f64>() / n;
    if sigma <= 0.0 {
        return Err(Error::domain("eps_mu undefined: Monte-Carlo std is zero everywhere"));
    }
    Ok(abs_err(approx, &mc.means) / n / sigma)
}

fn abs_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// [`eps_mu`] extended to noiseless points: 0 when the means agree exactly, else infinity.
pub fn eps_mu_or_exact(approx: &[f64], mc: &MCEstimate) -> Result<f64> {
    match eps_mu(approx, mc) {
        Err(Error::Domain(_)) => Ok(if abs_err(approx, &mc.means) == 0.0 { 0.0 } else { f64::INFINITY }),
        r => r,
    }
}

/// Geometric mean of `σ/σ*`; 1 means exact.
pub fn eps_sigma(approx_std: &[f64], true_std: &[f64]) -> Result<f64> {
    if approx_std.len() != true_std.len() {
        return Err(Error::Shape { expected: vec![true_std.len()], got: vec![approx_std.len()] });
    }
    if approx_std.is_empty() {
        return Err(Error::Empty("eps_sigma input"));
    }
    let mut acc = 0.0;
    for (&a, &t) in approx_std.iter().zip(true_std) {
        if !(a > 0.0 && t > 0.0) || !a.is_finite() || !t.is_finite() {
            return Err(Error::domain(format!("eps_sigma needs positive stds, got {a} and {t}")));
        }
        acc += (a / t).ln();
    }
    Ok((acc / approx_std.len() as f64).exp())
}

/// [`eps_sigma`] over the units where both stds are positive, with the number excluded.
/// The value is `None` when every unit is excluded.
pub fn eps_sigma_filtered(approx_std: &[f64], true_std: &[f64]) -> Result<(Option<f64>, usize)> {
    if approx_std.len() != true_std.len() {
        return Err(Error::Shape { expected: vec![true_std.len()], got: vec![approx_std.len()] });
    }
    let (a, t): (Vec<f64>, Vec<f64>) =
        approx_std.iter().zip(true_std).filter(|(a, t)| **a > 0.0 && **t > 0.0).map(|(a, t)| (*a, *t)).unzip();
    let excluded = approx_std.len() - a.len();
    if a.is_empty() {
        return Ok((None, excluded));
    }
    Ok((Some(eps_sigma(&a, &t)?), excluded))
}

/// `KL(p ‖ q)` in nats.
pub fn posterior_kl(p: &ClassPosterior, q: &ClassPosterior) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::Shape { expected: vec![p.num_classes()], got: vec![q.num_classes()] });
    }
    let kl: f64 = p
        .log_probs()
        .iter()
        .zip(q.log_probs())
        .filter(|(lp, _)| **lp > f64::NEG_INFINITY)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum();
    Ok(kl.max(0.0))
}

/// KL between two Bernoulli distributions with success probabilities `p` and `q`, in nats.
pub fn bernoulli_kl(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("Bernoulli probabilities must lie in [0, 1], got {p} and {q}")));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok((term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0))
}

pub const BITS_PER_NAT: f64 = std::f64::consts::LOG2_E;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAccuracy {
    pub layer_index: usize,
    pub layer_kind: &'static str,
    pub eps_mu_ap1: f64,
    pub eps_mu_ap2: f64,
    pub eps_sigma_ap2: Option<f64>,
    pub sigma_excluded: usize,
}

/// Per-layer comparison of AP1 and AP2 with a Monte-Carlo reference. KL values are in
/// nats, averaged over the batch, and measure the divergence of the Monte-Carlo posterior
/// from the analytic one.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub layers: Vec<LayerAccuracy>,
    pub kl_simplified: Option<f64>,
    pub kl_full: Option<f64>,
    pub kl_ap1: Option<f64>,
    pub n_samples: usize,
    pub modes: [ModeKind; 2],
}

impl AccuracyReport {
    pub const CSV_HEADER: &'static str =
        "layer_index,layer_kind,eps_mu_ap1,eps_mu_ap2,eps_sigma_ap2,sigma_excluded,kl_simplified,kl_full,kl_ap1";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{},{},,,\n",
                l.layer_index,
                l.layer_kind,
                fmt6(l.eps_mu_ap1),
                fmt6(l.eps_mu_ap2),
                l.eps_sigma_ap2.map(fmt6).unwrap_or_default(),
                l.sigma_excluded
            ));
        }
        if let (Some(ks), Some(kf), Some(k1)) = (self.kl_simplified, self.kl_full, self.kl_ap1) {
            s.push_str(&format!("{},softmax,,,,,{},{},{}\n", self.layers.len(), fmt6(ks), fmt6(kf), fmt6(k1)));
        }
        s
    }
}

fn mean_kl(mc: &[ClassPosterior], approx: &[ClassPosterior]) -> Result<f64> {
    let mut total = 0.0;
    for (p, q) in mc.iter().zip(approx) {
        total += posterior_kl(p, q)?;
    }
    Ok(total / mc.len() as f64)
}

/// Runs AP1, AP2 and `n_samples` Monte-Carlo passes on `input` and compares them at every
/// layer output. The head layer, if any, contributes the KL values instead of a row.
pub fn layerwise_accuracy_report(
    net: &Network,
    input: &MomentTensor,
    n_samples: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let ap1 = net.forward(input, PropagationMode::Ap1)?;
    let ap2 = net.forward(input, PropagationMode::Ap2)?;
    let mc = mc_propagate(net, input, n_samples, seed)?;
    let mut rows = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if matches!(layer, LayerSpec::SoftmaxHead { .. }) {
            continue;
        }
        let est = &mc.layers[i + 1];
        let (a1, a2) = (&ap1.tensors[i + 1], &ap2.tensors[i + 1]);
        let approx_std: Vec<f64> = a2.vars().iter().map(|v| v.sqrt()).collect();
        let (eps_sigma_ap2, sigma_excluded) = eps_sigma_filtered(&approx_std, &est.stds())?;
        rows.push(LayerAccuracy {
            layer_index: i,
            layer_kind: layer.kind(),
            eps_mu_ap1: eps_mu_or_exact(a1.means(), est)?,
            eps_mu_ap2: eps_mu_or_exact(a2.means(), est)?,
            eps_sigma_ap2,
            sigma_excluded,
        });
    }
    let (mut kl_simplified, mut kl_full, mut kl_ap1) = (None, None, None);
    if let Some(mc_post) = &mc.posteriors {
        let n = net.layers().len();
        let logits = &ap2.tensors[n - 1];
        let post = |variant| -> Result<Vec<ClassPosterior>> {
            (0..logits.batch())
                .map(|b| {
                    let ms: Vec<ScalarMoments> = logits
                        .item_means(b)
                        .iter()
                        .zip(logits.item_vars(b))
                        .map(|(&mean, &var)| ScalarMoments { mean, var })
                        .collect();
                    softmax_posterior(&ms, variant)
                })
                .collect()
        };
        kl_simplified = Some(mean_kl(mc_post, &post(SoftmaxVariant::Simplified)?)?);
        kl_full = Some(mean_kl(mc_post, &post(SoftmaxVariant::Logistic)?)?);
        kl_ap1 = Some(mean_kl(mc_post, ap1.posteriors()?)?);
    }
    Ok(AccuracyReport {
        layers: rows,
        kl_simplified,
        kl_full,
        kl_ap1,
        n_samples,
        modes: [ModeKind::Ap1, ModeKind::Ap2],
    })
}

/// Classification accuracy under Gaussian input noise of each std in `sigmas`.
///
/// AP2 receives the noise as input variance, SAMPLE draws it inside the forward pass, and
/// AP1 classifies inputs perturbed by seeded noise.
pub fn noise_stability_curve(
    net: &Network,
    data: &Dataset,
    sigmas: &[f64],
    mode: ModeKind,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if data.is_empty() {
        return Err(Error::Empty("stability dataset"));
    }
    let mut out = Vec::with_capacity(sigmas.len());
    for (k, &sigma) in sigmas.iter().enumerate() {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("noise std must be finite and non-negative, got {sigma}")));
        }
        let var = sigma * sigma;
        let acc = match mode {
            ModeKind::Ap2 => evaluate(net, data, None, PropagationMode::Ap2, var)?.accuracy,
            ModeKind::Sample => {
                evaluate(net, data, None, PropagationMode::Sample { seed, stream: (k as u64) << 32 }, var)?.accuracy
            }
            ModeKind::Ap1 => {
                let mut images = data.images.clone();
                if sigma > 0.0 {
                    for (i, img) in images.chunks_mut(data.item_len()).enumerate() {
                        let mut rng = item_rng(seed, k as u64, i as u64);
                        for x in img {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *x += sigma * z;
                        }
                    }
                }
                let noisy = Dataset::new(data.image_shape.clone(), images, data.labels.clone(), data.num_classes)?;
                evaluate(net, &noisy, None, PropagationMode::Ap1, 0.0)?.accuracy
            }
        };
        out.push((sigma, acc));
    }
    Ok(out)
}

/// Per-channel statistics measured by sampling: each item passes once through a SAMPLE-mode
/// forward with input noise variance `input_var`, and every network point accumulates the
/// values of each channel over items and spatial positions. The layout matches
/// [`crate::network::propagate_dataset_stats`]; the head point holds its probabilities.
pub fn empirical_channel_stats(
    net: &Network,
    data: &Dataset,
    input_var: f64,
    seed: u64,
) -> Result<Vec<Vec<ScalarMoments>>> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let shapes = net.shapes();
    let mut acc: Vec<Vec<RunningMoments>> =
        shapes.iter().map(|s| vec![RunningMoments::default(); s.first().copied().unwrap_or(1)]).collect();
    let items: Vec<usize> = (0..data.len()).collect();
    for (k, chunk) in items.chunks(256).enumerate() {
        let x = batch_tensor(data, chunk, input_var)?;
        let rec = net.forward(&x, PropagationMode::Sample { seed, stream: k as u64 })?;
        for (point, t) in rec.tensors.iter().enumerate() {
            let c = acc[point].len();
            let plane = t.item_len() / c;
            for b in 0..t.batch() {
                let m = t.item_means(b);
                for (ch, a) in acc[point].iter_mut().enumerate() {
                    m[ch * plane..(ch + 1) * plane].iter().for_each(|&v| a.push(v));
                }
            }
        }
    }
    Ok(acc.iter().map(|p| p.iter().map(|a| ScalarMoments { mean: a.mean(), var: a.var() }).collect()).collect())
}

pub fn stability_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("sigma,accuracy\n");
    for &(sigma, acc) in curve {
        s.push_str(&format!("{},{}\n", fmt6(sigma), fmt6(acc)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;
    use crate::network::parse_config;

    fn est(means: Vec<f64>, vars: Vec<f64>) -> MCEstimate {
        let standard_errors = vars.iter().map(|v: &f64| (v / 100.0).sqrt()).collect();
        MCEstimate { means, vars, n_samples: 100, standard_errors }
    }

    #[test]
    fn eps_mu_examples() {
        let mc = est(vec![1.0, -2.0, 0.5], vec![1.0; 3]);
        assert_eq!(eps_mu(&[1.0, -2.0, 0.5], &mc).unwrap(), 0.0);
        assert!((eps_mu(&[1.5, -1.5, 1.0], &mc).unwrap() - 0.5).abs() < 1e-15);
        let flat = est(vec![1.0, 2.0], vec![0.0; 2]);
        assert!(eps_mu(&[1.0, 2.0], &flat).is_err());
        assert_eq!(eps_mu_or_exact(&[1.0, 2.0], &flat).unwrap(), 0.0);
        assert!(eps_mu_or_exact(&[1.0, 2.5], &flat).unwrap().is_infinite());
        assert!(eps_mu(&[1.0], &mc).is_err());
    }

    #[test]
    fn eps_sigma_examples() {
        assert_eq!(eps_sigma(&[0.3, 2.0], &[0.3, 2.0]).unwrap(), 1.0);
        assert!((eps_sigma(&[2.0, 4.0], &[1.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((eps_sigma(&[1.0, 4.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(eps_sigma(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        let (v, n) = eps_sigma_filtered(&[2.0, 0.0, 1.0], &[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(n, 1);
        assert!((v.unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(eps_sigma_filtered(&[0.0], &[0.0]).unwrap(), (None, 1));
    }

    #[test]
    fn kl_examples() {
        let p = ClassPosterior::from_probs(&[0.8, 0.2]).unwrap();
        let q = ClassPosterior::from_probs(&[0.6, 0.4]).unwrap();
        // 0.8·ln(4/3) + 0.2·ln(1/2)
        assert!((posterior_kl(&p, &q).unwrap() - 0.0915163).abs() < 1e-6);
        assert_eq!(posterior_kl(&p, &p).unwrap(), 0.0);
        let one = ClassPosterior::from_probs(&[1.0, 0.0]).unwrap();
        let half = ClassPosterior::from_probs(&[0.5, 0.5]).unwrap();
        assert!((posterior_kl(&one, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let three = ClassPosterior::from_probs(&[0.2, 0.3, 0.5]).unwrap();
        assert!(posterior_kl(&p, &three).is_err());
        assert!((bernoulli_kl(0.8, 0.6).unwrap() - 0.0915163).abs() < 1e-6);
        assert_eq!(bernoulli_kl(0.3, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_report_is_exact() {
        let net = Network::new(
            parse_config("input shape=4\nlinear in=4 out=5\nactivation name=relu\nlinear in=5 out=3\nsoftmax\n")
                .unwrap(),
        )
        .unwrap();
        let x = MomentTensor::deterministic(vec![2, 4], (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let r = layerwise_accuracy_report(&net, &x, 10, 0).unwrap();
        assert_eq!(r.layers.len(), 3);
        for l in &r.layers {
            assert_eq!(l.eps_mu_ap1, 0.0);
            assert_eq!(l.eps_mu_ap2, 0.0);
            assert_eq!(l.eps_sigma_ap2, None);
        }
        assert!(r.kl_full.unwrap() < 1e-3);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("3,softmax,,,,,"));
    }

    #[test]
    fn single_stochastic_layer_ap2_mean_is_exact() {
        let net = Network::new(parse_config("input shape=3\nactivation name=relu\n").unwrap()).unwrap();
        let x = MomentTensor::new(vec![1, 3], vec![-1.0, 0.0, 0.7], vec![0.5, 1.0, 2.0]).unwrap();
        let n = 100_000;
        let r = layerwise_accuracy_report(&net, &x, n, 5).unwrap();
        // Relative to the average std, four standard errors are at most 4/√n.
        assert!(r.layers[0].eps_mu_ap2 < 4.0 / (n as f64).sqrt());
        assert!(r.layers[0].eps_mu_ap1 > r.layers[0].eps_mu_ap2);
        assert!((r.layers[0].eps_sigma_ap2.unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn stability_curve_limits() {
        let data = make_synthetic_blobs(3, 40, 4, 8.0, 2).unwrap();
        let mut net = Network::new(
            parse_config("input shape=4\nlinear in=4 out=8\nactivation name=relu\nlinear in=8 out=3\nsoftmax\n")
                .unwrap(),
        )
        .unwrap();
        let hp = crate::train::Hyperparams { epochs: 20, batch_size: 16, lr: 0.05, ..Default::default() };
        crate::train::train(&mut net, &data, &hp).unwrap();
        let clean = evaluate(&net, &data, None, PropagationMode::Ap1, 0.0).unwrap().accuracy;
        for mode in [ModeKind::Ap1, ModeKind::Ap2, ModeKind::Sample] {
            let curve = noise_stability_curve(&net, &data, &[0.0, 1e4], mode, 1).unwrap();
            assert_eq!(curve[0], (0.0, clean), "{mode:?}");
            assert!(curve[1].1 < 0.6, "{mode:?}: {}", curve[1].1);
        }
        assert_eq!(stability_csv(&[(0.0, 1.0)]), "sigma,accuracy\n0,1\n");
    }

    #[test]
    fn empirical_stats_match_analytic_on_identity() {
        let data = make_synthetic_blobs(2, 30, 3, 3.0, 4).unwrap();
        let net = Network::new(parse_config("input shape=3\nnormalize\n").unwrap()).unwrap();
        let stats = crate::data::dataset_stats(&data).unwrap();
        let analytic = crate::network::propagate_dataset_stats(&net, &stats.channels).unwrap();
        let empirical = empirical_channel_stats(&net, &data, 0.0, 1).unwrap();
        assert_eq!(empirical.len(), 2);
        for (a, e) in analytic.iter().flatten().zip(empirical.iter().flatten()) {
            assert!((a.mean - e.mean).abs() < 1e-12 && (a.var - e.var).abs() < 1e-12);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_self(
            w in prop::collection::vec(-10.0f64..10.0, 2..6),
            u in prop::collection::vec(-10.0f64..10.0, 2..6),
        ) {
            let k = w.len().min(u.len());
            let p = ClassPosterior::from_log_weights(w[..k].to_vec()).unwrap();
            let q = ClassPosterior::from_log_weights(u[..k].to_vec()).unwrap();
            prop_assert!(posterior_kl(&p, &q).unwrap() >= -1e-12);
            prop_assert!(posterior_kl(&p, &p).unwrap().abs() < 1e-12);
        }
    }
}
