use super::*;
use crate::data::make_synthetic_blobs;
use crate::network::parse_config;

fn mlp() -> Network {
    let cfg = parse_config(
        "input shape=6 seed=3\n\
         linear in=6 out=5\nnormalize\nactivation name=bernoulli\n\
         linear in=5 out=4 bias=true\nactivation name=relu\n\
         linear in=4 out=3\nsoftmax variant=logistic\n",
    )
    .unwrap();
    let mut net = Network::new(cfg).unwrap();
    // Non-trivial normalize parameters so their gradients are exercised too.
    for (i, p) in net.params_mut()[1].weight.iter_mut().enumerate() {
        *p = 0.8 + 0.1 * i as f64;
    }
    for (i, p) in net.params_mut()[1].bias.iter_mut().enumerate() {
        *p = 0.05 * i as f64 - 0.1;
    }
    net
}

fn input() -> MomentTensor {
    let means = (0..18).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
    let vars = (0..18).map(|i| 0.05 + ((i * 13) % 7) as f64 / 20.0).collect();
    MomentTensor::new(vec![3, 6], means, vars).unwrap()
}

fn loss_of(net: &Network, x: &MomentTensor, labels: &[usize]) -> f64 {
    let rec = net.forward(x, PropagationMode::Ap2).unwrap();
    rec.posteriors().unwrap().iter().zip(labels).map(|(p, &y)| nll_loss(p, y).unwrap()).sum::<f64>()
        / labels.len() as f64
}

#[test]
fn nll_examples() {
    let uniform = ClassPosterior::from_probs(&[0.1; 10]).unwrap();
    assert!((nll_loss(&uniform, 3).unwrap() - 10f64.ln()).abs() < 1e-12);
    let sure = ClassPosterior::from_probs(&[0.0, 1.0]).unwrap();
    assert_eq!(nll_loss(&sure, 1).unwrap(), 0.0);
    let p = ClassPosterior::from_probs(&[0.3, 0.7]).unwrap();
    assert!((nll_loss(&p, 0).unwrap() - 1.203973).abs() < 1e-6);
    assert!(matches!(nll_loss(&p, 2), Err(Error::Label { label: 2, classes: 2 })));
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let net = mlp();
    let x = input();
    let labels = [0, 2, 1];
    let rec = net.forward(&x, PropagationMode::Ap2).unwrap();
    let (loss, grads) = backward(&net, &rec, &labels).unwrap();
    assert!((loss - loss_of(&net, &x, &labels)).abs() < 1e-12);
    let h = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for li in 0..net.params().len() {
        for (is_bias, n) in [(false, net.params()[li].weight.len()), (true, net.params()[li].bias.len())] {
            for k in 0..n {
                let shifted = |d: f64| {
                    let mut m = net.clone();
                    let p = &mut m.params_mut()[li];
                    if is_bias {
                        p.bias[k] += d;
                    } else {
                        p.weight[k] += d;
                    }
                    m
                };
                let fd = (loss_of(&shifted(h), &x, &labels) - loss_of(&shifted(-h), &x, &labels)) / (2.0 * h);
                let g = if is_bias { grads.params[li].bias[k] } else { grads.params[li].weight[k] };
                num += (g - fd).powi(2);
                den += fd.powi(2).max(g * g);
            }
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel < 1e-3, "relative gradient error {rel}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let net = mlp();
    let x = input();
    let labels = [1, 1, 0];
    let rec = net.forward(&x, PropagationMode::Ap2).unwrap();
    let (_, grads) = backward(&net, &rec, &labels).unwrap();
    let h = 1e-6;
    for i in [0, 4, 9, 17] {
        for var in [false, true] {
            let shift = |d: f64| {
                let (shape, mut m, mut v) = x.clone().into_parts();
                if var {
                    v[i] += d
                } else {
                    m[i] += d
                }
                MomentTensor::new(shape, m, v).unwrap()
            };
            let fd = (loss_of(&net, &shift(h), &labels) - loss_of(&net, &shift(-h), &labels)) / (2.0 * h);
            let g = if var { grads.input.d_var[i] } else { grads.input.d_mean[i] };
            assert!((g - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "input {i} var={var}: {g} vs {fd}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = make_synthetic_blobs(3, 10, 6, 4.0, 1).unwrap();
    let mut net = mlp();
    let before = net.params().to_vec();
    let hp = Hyperparams { epochs: 2, batch_size: 8, lr: 0.0, ..Default::default() };
    let log = train(&mut net, &data, &hp).unwrap();
    assert_eq!(net.params(), before.as_slice());
    assert_eq!(log.epochs.len(), 2);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let net = mlp();
    let mut params = net.params().to_vec();
    let mut grads: Vec<LayerParams> = params.iter().map(LayerParams::zeros_like).collect();
    grads[0].weight[0] = 3.0;
    grads[0].weight[1] = -0.01;
    let before = params.clone();
    let mut opt = OptimizerState::new(OptimizerKind::ADAM, &params);
    opt.update(&mut params, &grads, 0.1);
    assert!((before[0].weight[0] - params[0].weight[0] - 0.1).abs() < 1e-6);
    assert!((params[0].weight[1] - before[0].weight[1] - 0.1).abs() < 1e-4);
    assert_eq!(params[0].weight[2], before[0].weight[2]);
}

#[test]
fn blobs_are_learned_in_every_mode() {
    let data = make_synthetic_blobs(3, 50, 4, 8.0, 7).unwrap();
    let cfg = parse_config(
        "input shape=4\nlinear in=4 out=16\nactivation name=relu\ndropout p=0.1\nlinear in=16 out=3\nsoftmax\n",
    )
    .unwrap();
    for mode in [ModeKind::Ap1, ModeKind::Ap2, ModeKind::Sample] {
        let mut net = Network::new(cfg.clone()).unwrap();
        let hp = Hyperparams { epochs: 20, batch_size: 16, lr: 0.02, mode, val_fraction: 0.0, ..Default::default() };
        let log = train(&mut net, &data, &hp).unwrap();
        assert!(log.epochs.last().unwrap().val_acc >= 0.99, "{mode:?}: {:?}", log.epochs.last());
    }
}

#[test]
fn training_is_reproducible_across_worker_counts() {
    let data = make_synthetic_blobs(3, 20, 6, 4.0, 5).unwrap();
    let hp = Hyperparams { epochs: 2, batch_size: 16, lr: 0.01, mode: ModeKind::Sample, ..Default::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = parse_config(
                "input shape=6\nlinear in=6 out=8\nactivation name=relu\ndropout p=0.3\nlinear in=8 out=3\nsoftmax\n",
            )
            .unwrap();
            let mut net = Network::new(cfg).unwrap();
            let log = train(&mut net, &data, &hp).unwrap();
            (net.params().to_vec(), log)
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn checkpoint_round_trip() {
    let net = mlp();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &net).unwrap();
    assert_eq!(&bytes[..4], b"MFCK");
    let back = read_checkpoint(bytes.as_slice(), net.config().clone()).unwrap();
    assert_eq!(back.params(), net.params());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &net).unwrap();
    assert_eq!(load_checkpoint(&path, net.config().clone()).unwrap().params(), net.params());

    let other = parse_config("input shape=6\nlinear in=6 out=3\nsoftmax\n").unwrap();
    assert!(matches!(read_checkpoint(bytes.as_slice(), other), Err(Error::Checkpoint(_))));
    assert!(read_checkpoint(&bytes[..bytes.len() - 3], net.config().clone()).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(bad.as_slice(), net.config().clone()).is_err());
}

#[test]
fn fmt6_examples() {
    assert_eq!(fmt6(0.0), "0");
    assert_eq!(fmt6(1.0), "1");
    assert_eq!(fmt6(0.091632928), "0.0916329");
    assert_eq!(fmt6(123456.7), "123457");
    assert_eq!(fmt6(-2.5), "-2.5");
    assert_eq!(fmt6(1.5e-7), "1.50000e-7");
    assert_eq!(fmt6(f64::INFINITY), "inf");
}

#[test]
fn train_log_csv() {
    let log =
        TrainLog { epochs: vec![EpochLog { epoch: 0, lr: 0.001, train_loss: 0.5, val_loss: 0.25, val_acc: 0.9 }] };
    assert_eq!(log.to_csv(), "epoch,lr,train_loss,val_loss,val_acc\n0,0.001,0.5,0.25,0.9\n");
}
