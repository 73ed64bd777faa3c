//! Python bindings. Tensors cross the boundary as flat lists plus a batch size.

#[pyo3::pymodule]
mod momentflow_py {
    use std::path::PathBuf;

    use pyo3::exceptions::{PyOSError, PyValueError};
    use pyo3::prelude::*;

    use momentflow_core::andgate;
    use momentflow_core::data::{dataset_stats, make_synthetic_blobs};
    use momentflow_core::metrics::{layerwise_accuracy_report, posterior_kl as kl};
    use momentflow_core::network::{apply_analytic_normalization, parse_config};
    use momentflow_core::train::{evaluate, load_checkpoint, save_checkpoint, train};
    use momentflow_core::{
        ClassPosterior, Dataset, Error, Hyperparams, LayerSpec, ModeKind, MomentTensor, PropagationMode, ScalarMoments,
        SoftmaxVariant,
    };

    fn py_err(e: Error) -> PyErr {
        match e {
            Error::Io(e) => PyOSError::new_err(e.to_string()),
            other => PyValueError::new_err(other.to_string()),
        }
    }

    fn mode(name: &str, seed: u64) -> PyResult<PropagationMode> {
        match ModeKind::parse(name) {
            Some(ModeKind::Ap1) => Ok(PropagationMode::Ap1),
            Some(ModeKind::Ap2) => Ok(PropagationMode::Ap2),
            Some(ModeKind::Sample) => Ok(PropagationMode::Sample { seed, stream: 0 }),
            None => Err(PyValueError::new_err(format!("unknown mode `{name}` (expected ap1, ap2 or sample)"))),
        }
    }

    fn parse_variant(name: &str) -> PyResult<SoftmaxVariant> {
        let cfg = parse_config(&format!("input shape=2\nsoftmax variant={name}\n")).map_err(py_err)?;
        match cfg.layers[0] {
            LayerSpec::SoftmaxHead { variant } => Ok(variant),
            _ => unreachable!("single softmax layer"),
        }
    }

    /// Mean and variance of an activation applied to a Gaussian input. `activation` uses the
    /// network-file syntax, e.g. `"name=relu var=fitted"`.
    #[pyfunction]
    fn activation_moments(activation: &str, mean: f64, var: f64) -> PyResult<(f64, f64)> {
        let cfg = parse_config(&format!("input shape=1\nactivation {activation}\n")).map_err(py_err)?;
        let LayerSpec::Activation(act) = cfg.layers[0] else { unreachable!("single activation layer") };
        let x = ScalarMoments::new(mean, var).map_err(py_err)?;
        let (y, _) = act.moments_jac(x);
        Ok((y.mean, y.var))
    }

    /// Class probabilities for Gaussian logits.
    #[pyfunction]
    #[pyo3(signature = (means, vars, variant = "simplified"))]
    fn softmax(means: Vec<f64>, vars: Vec<f64>, variant: &str) -> PyResult<Vec<f64>> {
        if means.len() != vars.len() {
            return Err(PyValueError::new_err("means and vars differ in length"));
        }
        let logits: Vec<ScalarMoments> =
            means.iter().zip(&vars).map(|(&mean, &var)| ScalarMoments { mean, var }).collect();
        let p = momentflow_core::activations::softmax_posterior(&logits, parse_variant(variant)?).map_err(py_err)?;
        Ok(p.probs())
    }

    /// KL(p || q) in nats between two probability vectors.
    #[pyfunction]
    fn posterior_kl(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
        let post = |v: Vec<f64>| ClassPosterior::from_log_weights(v.into_iter().map(f64::ln).collect()).map_err(py_err);
        kl(&post(p)?, &post(q)?).map_err(py_err)
    }

    /// A soft AND gate built from one logistic-Bernoulli unit.
    #[pyclass(frozen)]
    struct AndGate(andgate::AndGate);

    #[pymethods]
    impl AndGate {
        #[new]
        #[pyo3(signature = (epsilon = 0.05))]
        fn new(epsilon: f64) -> PyResult<Self> {
            andgate::AndGate::new(epsilon).map(Self).map_err(py_err)
        }

        #[getter]
        fn a(&self) -> f64 {
            self.0.a
        }

        #[getter]
        fn b(&self) -> f64 {
            self.0.b
        }

        fn exact(&self, p1: f64, p2: f64) -> PyResult<f64> {
            self.0.exact(p1, p2).map_err(py_err)
        }

        fn ap1(&self, p1: f64, p2: f64) -> PyResult<f64> {
            self.0.ap1(p1, p2).map_err(py_err)
        }

        fn ap2b(&self, p1: f64, p2: f64) -> PyResult<f64> {
            self.0.ap2b(p1, p2).map_err(py_err)
        }

        /// Rows `(p1, p2, exact_and, exact, ap1, ap2b)`.
        fn table(&self) -> PyResult<Vec<(f64, f64, f64, f64, f64, f64)>> {
            let rows = self.0.table().map_err(py_err)?;
            Ok(rows.iter().map(|r| (r.p1, r.p2, r.exact_and, r.exact, r.ap1, r.ap2b)).collect())
        }
    }

    /// A network built from its text description.
    #[pyclass]
    struct Network(momentflow_core::Network);

    impl Network {
        fn input(&self, means: Vec<f64>, vars: Option<Vec<f64>>, noise: f64) -> PyResult<MomentTensor> {
            let item: Vec<usize> = self.0.config().input_shape.clone();
            let len: usize = item.iter().product();
            if means.is_empty() || !means.len().is_multiple_of(len) {
                return Err(PyValueError::new_err(format!("input length {} is not a multiple of {len}", means.len())));
            }
            let mut shape = vec![means.len() / len];
            shape.extend(item);
            match vars {
                Some(v) => MomentTensor::new(shape, means, v),
                None => MomentTensor::with_uniform_var(shape, means, noise),
            }
            .map_err(py_err)
        }

        fn dataset(&self, images: Vec<f64>, labels: Vec<usize>) -> PyResult<Dataset> {
            let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
            Dataset::new(self.0.config().input_shape.clone(), images, labels, classes).map_err(py_err)
        }
    }

    #[pymethods]
    impl Network {
        #[new]
        fn new(config: &str) -> PyResult<Self> {
            let cfg = parse_config(config).map_err(py_err)?;
            momentflow_core::Network::new(cfg).map(Self).map_err(py_err)
        }

        /// Loads parameters from a checkpoint written by `save`.
        #[staticmethod]
        fn load(config: &str, path: PathBuf) -> PyResult<Self> {
            let cfg = parse_config(config).map_err(py_err)?;
            load_checkpoint(&path, cfg).map(Self).map_err(py_err)
        }

        fn save(&self, path: PathBuf) -> PyResult<()> {
            save_checkpoint(&path, &self.0).map_err(py_err)
        }

        fn config_text(&self) -> String {
            self.0.config().to_text()
        }

        #[getter]
        fn num_params(&self) -> usize {
            self.0.num_params()
        }

        /// Item shape at every network point, input first.
        #[getter]
        fn shapes(&self) -> Vec<Vec<usize>> {
            self.0.shapes().to_vec()
        }

        /// Propagates a batch. Returns `(means, vars, probs)` of the last layer; `probs`
        /// holds one list per item when the network ends in a softmax head.
        #[pyo3(signature = (means, vars = None, mode = "ap2", seed = 0, noise = 0.0))]
        fn forward(
            &self,
            py: Python<'_>,
            means: Vec<f64>,
            vars: Option<Vec<f64>>,
            mode: &str,
            seed: u64,
            noise: f64,
        ) -> PyResult<(Vec<f64>, Vec<f64>, Option<Vec<Vec<f64>>>)> {
            let input = self.input(means, vars, noise)?;
            let mode = self::mode(mode, seed)?;
            let rec = py.detach(|| self.0.forward(&input, mode)).map_err(py_err)?;
            let probs = rec.posteriors.as_ref().map(|ps| ps.iter().map(ClassPosterior::probs).collect());
            let out = rec.output();
            Ok((out.means().to_vec(), out.vars().to_vec(), probs))
        }

        /// Per-layer accuracy of AP1 and AP2 against Monte-Carlo, as CSV.
        #[pyo3(signature = (means, noise = 0.0, samples = 1000, seed = 0))]
        fn report(&self, py: Python<'_>, means: Vec<f64>, noise: f64, samples: usize, seed: u64) -> PyResult<String> {
            let input = self.input(means, None, noise)?;
            py.detach(|| layerwise_accuracy_report(&self.0, &input, samples, seed)).map(|r| r.to_csv()).map_err(py_err)
        }

        /// Rescales parameters so every normalize point sees zero-mean unit-variance
        /// channels under the images' statistics. Returns the normalized point indices.
        fn normalize(&mut self, images: Vec<f64>) -> PyResult<Vec<usize>> {
            let n = images.len();
            let flat = Dataset::new(vec![1, n], images, vec![0], 1).map_err(py_err)?;
            let stats = dataset_stats(&flat).map_err(py_err)?;
            apply_analytic_normalization(&mut self.0, &stats.channels).map_err(py_err)
        }

        /// Trains in place. Returns `(epoch, lr, train_loss, val_loss, val_acc)` per epoch.
        #[pyo3(signature = (images, labels, epochs = 10, batch_size = 128, lr = 1e-3, mode = "ap2", val_fraction = 0.1, seed = 0, noise = 0.0))]
        #[allow(clippy::too_many_arguments)]
        fn fit(
            &mut self,
            py: Python<'_>,
            images: Vec<f64>,
            labels: Vec<usize>,
            epochs: usize,
            batch_size: usize,
            lr: f64,
            mode: &str,
            val_fraction: f64,
            seed: u64,
            noise: f64,
        ) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
            let data = self.dataset(images, labels)?;
            let mode = ModeKind::parse(mode).ok_or_else(|| PyValueError::new_err(format!("unknown mode `{mode}`")))?;
            let hp = Hyperparams {
                epochs,
                batch_size,
                lr,
                mode,
                val_fraction,
                seed,
                input_var: noise,
                ..Default::default()
            };
            let net = &mut self.0;
            let log = py.detach(|| train(net, &data, &hp)).map_err(py_err)?;
            Ok(log.epochs.iter().map(|e| (e.epoch, e.lr, e.train_loss, e.val_loss, e.val_acc)).collect())
        }

        /// Classification accuracy on labelled images.
        #[pyo3(signature = (images, labels, mode = "ap2", noise = 0.0))]
        fn accuracy(&self, images: Vec<f64>, labels: Vec<usize>, mode: &str, noise: f64) -> PyResult<f64> {
            let data = self.dataset(images, labels)?;
            evaluate(&self.0, &data, None, self::mode(mode, 0)?, noise).map(|e| e.accuracy).map_err(py_err)
        }
    }

    /// Gaussian blobs: `(features, labels)` with features flattened row-major.
    #[pyfunction]
    #[pyo3(signature = (n_classes = 2, per_class = 100, dim = 2, separation = 6.0, seed = 0))]
    fn synthetic_blobs(
        n_classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let d = make_synthetic_blobs(n_classes, per_class, dim, separation, seed).map_err(py_err)?;
        Ok((d.images, d.labels))
    }
}
