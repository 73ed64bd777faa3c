use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use momentflow::andgate::{table_csv, AndGate};
use momentflow::data::{data_dir, dataset_stats, load_mnist_train};
use momentflow::metrics::{
    empirical_channel_stats, layerwise_accuracy_report, noise_stability_curve, stability_csv, BITS_PER_NAT,
};
use momentflow::network::{apply_analytic_normalization, parse_config, propagate_dataset_stats};
use momentflow::train::{fmt6, load_checkpoint, save_checkpoint, train};
use momentflow::{
    Activation, BernoulliMean, Dataset, Error, Hyperparams, ModeKind, MomentTensor, Network, NetworkConfig,
};

/// Moment propagation through neural and sigmoid belief networks.
#[derive(Parser, Debug)]
#[command(name = "momentflow", version)]
struct Cli {
    /// Worker threads for batch and Monte-Carlo parallelism. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Seed for initialization, sampling and data shuffling [default: the config's seed].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write the CSV result to this file (stdout always gets a table).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Soft AND gate built from one logistic-Bernoulli unit: exact vs AP1 vs AP2.
    Andgate {
        /// Gate noise level, in (0, 0.5).
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Per-layer accuracy of AP1 and AP2 against Monte-Carlo.
    Report(ReportArgs),
    /// Train a network on MNIST.
    Train(TrainArgs),
    /// Per-channel dataset statistics: analytic propagation vs sampling.
    Stats(StatsArgs),
    /// Accuracy under Gaussian input noise.
    Stability(StabilityArgs),
}

#[derive(Args, Debug)]
struct NetArgs {
    /// Network description file.
    #[arg(long)]
    config: PathBuf,

    /// Directory with MNIST IDX files [env: MOMENTFLOW_DATA_DIR, default: data/mnist].
    #[arg(long)]
    data_dir: Option<PathBuf>,

    /// Insert dropout with this probability after every activation.
    #[arg(long)]
    dropout: Option<f64>,

    /// Replace every activation by a logistic-Bernoulli unit.
    #[arg(long)]
    bernoulli: bool,

    /// Load parameters from a checkpoint instead of seeded initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Use only the first N images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    net: NetArgs,

    /// Input noise variance added to every pixel [default: the config's input variance].
    #[arg(long)]
    noise: Option<f64>,

    /// Monte-Carlo samples.
    #[arg(long, default_value_t = 1000)]
    samples: usize,

    /// Number of input images averaged over.
    #[arg(long, default_value_t = 16)]
    items: usize,

    /// Draw inputs uniformly from [0,1] instead of reading the dataset.
    #[arg(long)]
    uniform_inputs: bool,

    /// Apply analytic normalization from the dataset statistics first.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,

    /// Propagation mode used for training: ap1, ap2 or sample [default: the config's mode].
    #[arg(long)]
    mode: Option<String>,

    #[arg(long, default_value_t = 10)]
    epochs: usize,

    #[arg(long, default_value_t = 128)]
    batch_size: usize,

    #[arg(long, default_value_t = 1e-3)]
    lr: f64,

    /// Input noise variance during training and evaluation [default: the config's input variance].
    #[arg(long)]
    noise: Option<f64>,

    /// Apply analytic normalization before training.
    #[arg(long)]
    normalize: bool,

    /// Save trained parameters here.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    net: NetArgs,

    /// Apply analytic normalization before measuring.
    #[arg(long)]
    normalize: bool,

    /// Images used for the sampled statistics.
    #[arg(long, default_value_t = 1000)]
    samples: usize,

    /// Save the (normalized) parameters here.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[command(flatten)]
    net: NetArgs,

    /// Evaluation mode: ap1, ap2 or sample [default: the config's mode].
    #[arg(long)]
    mode: Option<String>,

    /// Comma-separated noise standard deviations.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,1")]
    sigmas: Vec<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::DegenerateChannel { .. } => 3,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint(_)
        | Error::Label { .. }
        | Error::Empty(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}

/// Parses arguments, runs the command and returns the process exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let csv = match &cli.command {
        Command::Andgate { epsilon } => cmd_andgate(*epsilon)?,
        Command::Report(a) => cmd_report(a, cli.seed)?,
        Command::Train(a) => cmd_train(a, cli.seed)?,
        Command::Stats(a) => cmd_stats(a, cli.seed)?,
        Command::Stability(a) => cmd_stability(a, cli.seed)?,
    };
    if let Some(path) = &cli.out {
        fs::write(path, csv)?;
    }
    Ok(())
}

fn print_table(csv: &str) {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0)).collect();
    let mut out = std::io::stdout().lock();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  "));
    }
}

fn parse_mode(s: Option<&str>, cfg: &NetworkConfig) -> Result<ModeKind, Error> {
    let Some(s) = s else { return Ok(cfg.default_mode) };
    ModeKind::parse(s).ok_or_else(|| Error::Domain(format!("unknown mode `{s}` (expected ap1, ap2 or sample)")))
}

fn load_config(a: &NetArgs, seed: Option<u64>) -> Result<NetworkConfig, Error> {
    let text = fs::read_to_string(&a.config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if a.bernoulli {
        cfg = cfg.with_activation(Activation::LogisticBernoulli { mean: BernoulliMean::default() });
    }
    if let Some(p) = a.dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        cfg = cfg.with_dropout(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_network(a: &NetArgs, cfg: NetworkConfig) -> Result<Network, Error> {
    match &a.checkpoint {
        Some(p) => load_checkpoint(p, cfg),
        None => Network::new(cfg),
    }
}

fn load_data(a: &NetArgs, cfg: &NetworkConfig) -> Result<Dataset, Error> {
    let dir = data_dir(a.data_dir.as_deref());
    let mut data = load_mnist_train(&dir)?;
    if let Some(n) = a.limit {
        data = data.head(n);
    }
    data.reshaped(&cfg.input_shape)
}

fn normalize(net: &mut Network, data: &Dataset) -> Result<Vec<usize>, Error> {
    let stats = dataset_stats(&data.reshaped(&[1, data.item_len()])?)?;
    apply_analytic_normalization(net, &stats.channels)
}

fn cmd_andgate(epsilon: f64) -> Result<String, Error> {
    let gate = AndGate::new(epsilon)?;
    println!("a = {}, b = {}", fmt6(gate.a), fmt6(gate.b));
    let csv = table_csv(&gate.table()?);
    print_table(&csv);
    Ok(csv)
}

fn cmd_report(a: &ReportArgs, seed: Option<u64>) -> Result<String, Error> {
    let cfg = load_config(&a.net, seed)?;
    let seed = cfg.seed;
    let noise = a.noise.unwrap_or(cfg.input_var);
    if !(noise >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {noise}")));
    }
    let mut net = build_network(&a.net, cfg.clone())?;
    let item_len: usize = cfg.input_shape.iter().product();
    let needs_data = !a.uniform_inputs || a.normalize;
    let data = if needs_data { Some(load_data(&a.net, &cfg)?) } else { None };
    if a.normalize {
        normalize(&mut net, data.as_ref().expect("loaded"))?;
    }
    let means: Vec<f64> = match (&data, a.uniform_inputs) {
        (Some(d), false) => d.head(a.items).images,
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..a.items * item_len).map(|_| rng.random::<f64>()).collect()
        }
    };
    let items = means.len() / item_len;
    let mut shape = vec![items];
    shape.extend_from_slice(&cfg.input_shape);
    let input = MomentTensor::with_uniform_var(shape, means, noise)?;
    let report = layerwise_accuracy_report(&net, &input, a.samples, seed)?;
    let csv = report.to_csv();
    print_table(&csv);
    if let (Some(ks), Some(kf), Some(k1)) = (report.kl_simplified, report.kl_full, report.kl_ap1) {
        for (name, k) in [("simplified", ks), ("full", kf), ("ap1", k1)] {
            println!("KL {name}: {} nats = {} bits", fmt6(k), fmt6(k * BITS_PER_NAT));
        }
    }
    Ok(csv)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> Result<String, Error> {
    let cfg = load_config(&a.net, seed)?;
    let seed = cfg.seed;
    let mut net = build_network(&a.net, cfg.clone())?;
    let data = load_data(&a.net, &cfg)?;
    if a.normalize {
        normalize(&mut net, &data)?;
    }
    let hp = Hyperparams {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        mode: parse_mode(a.mode.as_deref(), &cfg)?,
        seed,
        input_var: a.noise.unwrap_or(cfg.input_var),
        ..Default::default()
    };
    let log = train(&mut net, &data, &hp)?;
    let csv = log.to_csv();
    print_table(&csv);
    if let Some(p) = &a.save {
        save_checkpoint(p, &net)?;
    }
    Ok(csv)
}

fn cmd_stats(a: &StatsArgs, seed: Option<u64>) -> Result<String, Error> {
    let cfg = load_config(&a.net, seed)?;
    let seed = cfg.seed;
    let mut net = build_network(&a.net, cfg.clone())?;
    let data = load_data(&a.net, &cfg)?;
    let input_stats = dataset_stats(&data.reshaped(&[1, data.item_len()])?)?;
    let points = if a.normalize { apply_analytic_normalization(&mut net, &input_stats.channels)? } else { Vec::new() };
    let analytic = propagate_dataset_stats(&net, &input_stats.channels)?;
    let measured = empirical_channel_stats(&net, &data.head(a.samples), 0.0, seed)?;
    let mut csv = String::from("point,layer_kind,normalized,channel,analytic_mean,analytic_std,mc_mean,mc_std\n");
    for (p, (an, mc)) in analytic.iter().zip(&measured).enumerate() {
        let kind = if p == 0 { "input" } else { net.layers()[p - 1].kind() };
        for (ch, (x, y)) in an.iter().zip(mc).enumerate() {
            csv.push_str(&format!(
                "{p},{kind},{},{ch},{},{},{},{}\n",
                points.contains(&p),
                fmt6(x.mean),
                fmt6(x.var.sqrt()),
                fmt6(y.mean),
                fmt6(y.var.sqrt())
            ));
        }
    }
    print_table(&csv);
    if let Some(p) = &a.save {
        save_checkpoint(p, &net)?;
    }
    Ok(csv)
}

fn cmd_stability(a: &StabilityArgs, seed: Option<u64>) -> Result<String, Error> {
    let cfg = load_config(&a.net, seed)?;
    let seed = cfg.seed;
    let net = build_network(&a.net, cfg.clone())?;
    let data = load_data(&a.net, &cfg)?;
    let curve = noise_stability_curve(&net, &data, &a.sigmas, parse_mode(a.mode.as_deref(), &cfg)?, seed)?;
    let csv = stability_csv(&curve);
    print_table(&csv);
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use tempfile::TempDir;

    use super::*;

    fn code(args: &[&str]) -> u8 {
        execute(std::iter::once("momentflow").chain(args.iter().copied()))
    }

    fn run_args(args: &[&str]) -> Result<(), Error> {
        run(&Cli::try_parse_from(std::iter::once("momentflow").chain(args.iter().copied())).expect("valid arguments"))
    }

    /// Tiny 4x4 IDX dataset: class 0 lights the top half, class 1 the bottom half.
    fn write_dataset(dir: &Path, n: u32) {
        let mut images = vec![0, 0, 8, 3];
        let mut labels = vec![0, 0, 8, 1];
        for v in [n, 4, 4] {
            images.extend(v.to_be_bytes());
        }
        labels.extend(n.to_be_bytes());
        for i in 0..n {
            let label = (i % 2) as u8;
            labels.push(label);
            for px in 0..16u32 {
                let lit = (px < 8) == (label == 0);
                images.push(if lit { 150 + ((i * 7 + px * 13) % 100) as u8 } else { ((i * 3 + px) % 40) as u8 });
            }
        }
        fs::write(dir.join("train-images-idx3-ubyte"), images).unwrap();
        fs::write(dir.join("train-labels-idx1-ubyte"), labels).unwrap();
    }

    fn write_config(dir: &Path, text: &str) -> String {
        let p = dir.join("net.cfg");
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    }

    const SMALL_NET: &str = "input shape=1x4x4 seed=3\n\
        conv2d in=1 out=3 kernel=3\nnormalize\nactivation name=relu\ndropout p=0.2\n\
        linear in=12 out=2\nsoftmax\n";

    #[test]
    fn andgate_writes_csv() {
        let tmp = TempDir::new().unwrap();
        let csv = tmp.path().join("andgate.csv");
        assert_eq!(code(&["andgate", "--out", csv.to_str().unwrap()]), 0);
        let text = fs::read_to_string(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "p1,p2,exact_and,exact,ap1,ap2b");
        assert_eq!(lines[4], "0.25,0.25,0.0625,0.078207,0.00276243,0.0662314");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(code(&["andgate", "--epsilon", "0.7"]), 1);
        assert_eq!(code(&["andgate", "--bogus"]), 1);
        assert_eq!(code(&["frobnicate"]), 1);
        assert_eq!(code(&["--help"]), 0);
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Domain("x".into())), 1);
        assert_eq!(exit_code(&Error::Parse { line: 1, message: "x".into() }), 1);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 2);
        assert_eq!(exit_code(&Error::NonFiniteLoss { loss: f64::NAN, epoch: 0, batch: 0 }), 3);
    }

    #[test]
    fn bad_config_names_the_line() {
        let tmp = TempDir::new().unwrap();
        let cfg = write_config(tmp.path(), "input shape=4\nlinear in=4 out=2\nwibble\n");
        let err = run_args(&["report", "--config", &cfg, "--uniform-inputs"]).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn missing_data_exits_with_two() {
        let tmp = TempDir::new().unwrap();
        let cfg = write_config(tmp.path(), SMALL_NET);
        let missing = tmp.path().join("nowhere");
        assert_eq!(code(&["stats", "--config", &cfg, "--data-dir", missing.to_str().unwrap()]), 2);
    }

    #[test]
    fn report_is_byte_identical_across_worker_counts() {
        let tmp = TempDir::new().unwrap();
        let cfg = write_config(tmp.path(), SMALL_NET);
        let report = |workers: &str, name: &str| {
            let out = tmp.path().join(name);
            let args = [
                "report",
                "--config",
                &cfg,
                "--uniform-inputs",
                "--noise",
                "0.05",
                "--samples",
                "200",
                "--items",
                "3",
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ];
            assert_eq!(code(&args), 0);
            fs::read(out).unwrap()
        };
        let one = report("1", "a.csv");
        assert_eq!(one, report("4", "b.csv"));
        let text = String::from_utf8(one).unwrap();
        assert!(text.starts_with("layer_index,layer_kind,eps_mu_ap1,eps_mu_ap2,"));
        assert!(text.lines().last().unwrap().contains(",softmax,"));
    }

    #[test]
    fn stats_with_normalization_reports_unit_channels() {
        let tmp = TempDir::new().unwrap();
        write_dataset(tmp.path(), 40);
        let cfg = write_config(tmp.path(), SMALL_NET);
        let out = tmp.path().join("stats.csv");
        let dir = tmp.path().to_str().unwrap();
        assert_eq!(
            code(&["stats", "--config", &cfg, "--data-dir", dir, "--normalize", "--out", out.to_str().unwrap()]),
            0
        );
        let text = fs::read_to_string(out).unwrap();
        let normalized: Vec<Vec<&str>> =
            text.lines().skip(1).map(|l| l.split(',').collect::<Vec<_>>()).filter(|r| r[2] == "true").collect();
        assert_eq!(normalized.len(), 3);
        for r in normalized {
            assert_eq!(r[1], "normalize");
            assert!(r[4].parse::<f64>().unwrap().abs() < 1e-5, "{r:?}");
            assert!((r[5].parse::<f64>().unwrap() - 1.0).abs() < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn train_checkpoint_round_trip_and_corruption() {
        let tmp = TempDir::new().unwrap();
        write_dataset(tmp.path(), 60);
        let cfg = write_config(tmp.path(), SMALL_NET);
        let dir = tmp.path().to_str().unwrap();
        let ckpt = tmp.path().join("net.ckpt");
        let ckpt = ckpt.to_str().unwrap();
        let log = tmp.path().join("log.csv");
        let args = [
            "train",
            "--config",
            &cfg,
            "--data-dir",
            dir,
            "--epochs",
            "3",
            "--batch-size",
            "8",
            "--lr",
            "0.05",
            "--save",
            ckpt,
            "--out",
            log.to_str().unwrap(),
        ];
        assert_eq!(code(&args), 0);
        assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 4);
        let stability = ["stability", "--config", &cfg, "--data-dir", dir, "--checkpoint", ckpt, "--sigmas", "0"];
        assert_eq!(code(&stability), 0);

        let mut bytes = fs::read(ckpt).unwrap();
        bytes.truncate(bytes.len() / 2);
        fs::write(ckpt, bytes).unwrap();
        assert_eq!(code(&stability), 2);
    }
}
