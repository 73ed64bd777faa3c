//! Line-oriented network description format. See `docs/network-config.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{LayerSpec, ModeKind, NetworkConfig};
use crate::activations::{Activation, Assumption, BernoulliMean, SoftmaxVariant, TransformVariance};
use crate::error::{Error, Result};
use crate::kernels::RVariant;

struct Line<'a> {
    number: usize,
    kind: &'a str,
    keys: BTreeMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.number, message: message.into() }
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.keys.remove(key)
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.take(key)
            .map(|v| v.parse().map_err(|_| self.err(format!("`{key}` expects a non-negative integer, got `{v}`"))))
            .transpose()
    }

    fn required(&mut self, key: &str) -> Result<usize> {
        self.usize(key)?.ok_or_else(|| self.err(format!("`{}` requires `{key}=`", self.kind)))
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key)
            .map(|v| v.parse().map_err(|_| self.err(format!("`{key}` expects a number, got `{v}`"))))
            .transpose()
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        self.take(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(self.err(format!("`{key}` expects true or false, got `{v}`"))),
            })
            .transpose()
    }

    fn choice<T>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T>
    where
        T: Copy,
    {
        match self.take(key) {
            None => Ok(default),
            Some(v) => options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(format!("`{key}` must be one of {}, got `{v}`", names.join("|")))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.keys.keys().next() {
            Some(k) => Err(self.err(format!("unknown key `{k}` for `{}`", self.kind))),
            None => Ok(()),
        }
    }
}

fn tokenize(number: usize, raw: &str) -> Result<Option<Line<'_>>> {
    let text = raw.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let mut tokens = text.split_whitespace();
    let kind = tokens.next().unwrap_or_default();
    let mut keys = BTreeMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: number, message: format!("expected key=value, got `{tok}`") })?;
        if k.is_empty() || v.is_empty() {
            return Err(Error::Parse { line: number, message: format!("empty key or value in `{tok}`") });
        }
        if keys.insert(k, v).is_some() {
            return Err(Error::Parse { line: number, message: format!("duplicate key `{k}`") });
        }
    }
    Ok(Some(Line { number, kind, keys }))
}

const ASSUMPTIONS: &[(&str, Assumption)] = &[("normal", Assumption::Normal), ("logistic", Assumption::Logistic)];
const R_FORMS: &[(&str, RVariant)] = &[("exact", RVariant::Exact), ("fitted", RVariant::Fitted)];

/// Parses an activation from its name and option keys.
fn parse_activation(line: &mut Line<'_>) -> Result<Activation> {
    let name = line.take("name").ok_or_else(|| line.err("`activation` requires `name=`"))?;
    let act = match name {
        "relu" => Activation::Relu {
            assumption: line.choice("assumption", Assumption::Normal, ASSUMPTIONS)?,
            var: line.choice("var", RVariant::Exact, R_FORMS)?,
        },
        "lrelu" => Activation::LeakyRelu {
            alpha: line.f64("alpha")?.unwrap_or(0.01),
            var: line.choice("var", RVariant::Exact, R_FORMS)?,
        },
        "heaviside" => {
            Activation::Heaviside { assumption: line.choice("assumption", Assumption::Normal, ASSUMPTIONS)? }
        }
        "bernoulli" => Activation::LogisticBernoulli {
            mean: line.choice(
                "mean",
                BernoulliMean::Ap2b,
                &[
                    ("ap2a", BernoulliMean::Ap2a),
                    ("ap2b", BernoulliMean::Ap2b),
                    ("ap1", BernoulliMean::Ap1),
                    ("pea", BernoulliMean::Pea),
                ],
            )?,
        },
        "logistic" => Activation::LogisticTransform {
            var: line.choice(
                "var",
                TransformVariance::Heuristic,
                &[("heuristic", TransformVariance::Heuristic), ("large_sigma", TransformVariance::LargeSigma)],
            )?,
        },
        "probit" => Activation::Probit,
        "normcdf" => Activation::NormalCdf,
        "abs" => Activation::Abs,
        other => return Err(Error::UnknownActivation(other.to_string())),
    };
    act.validate().map_err(|e| line.err(e.to_string()))?;
    Ok(act)
}

fn parse_shape(line: &Line<'_>, s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| match d.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(line.err(format!("bad shape `{s}`"))),
        })
        .collect()
}

/// Parses the text form of a [`NetworkConfig`].
pub fn parse_config(text: &str) -> Result<NetworkConfig> {
    let mut input: Option<(Vec<usize>, u64, ModeKind, f64)> = None;
    let mut layers = Vec::new();
    // Bias flags left implicit, resolved once the following layer is known.
    let mut implicit_bias: Vec<usize> = Vec::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let Some(mut line) = tokenize(idx + 1, raw)? else { continue };
        last_line = line.number;
        let layer = match line.kind {
            "input" => {
                if input.is_some() {
                    return Err(line.err("duplicate `input` line"));
                }
                if !layers.is_empty() {
                    return Err(line.err("`input` must precede all layers"));
                }
                let shape_txt = line.take("shape").ok_or_else(|| line.err("`input` requires `shape=`"))?;
                let shape = parse_shape(&line, shape_txt)?;
                let seed = line
                    .take("seed")
                    .map(|v| v.parse::<u64>().map_err(|_| line.err(format!("bad seed `{v}`"))))
                    .transpose()?
                    .unwrap_or(0);
                let mode = match line.take("mode") {
                    None => ModeKind::Ap2,
                    Some(m) => ModeKind::parse(m).ok_or_else(|| line.err(format!("unknown mode `{m}`")))?,
                };
                let var = line.f64("var")?.unwrap_or(0.0);
                if !(var >= 0.0) {
                    return Err(line.err("input `var` must be non-negative"));
                }
                line.finish()?;
                input = Some((shape, seed, mode, var));
                continue;
            }
            "linear" => {
                let in_features = line.required("in")?;
                let out_features = line.required("out")?;
                let bias = line.bool("bias")?;
                if bias.is_none() {
                    implicit_bias.push(layers.len());
                }
                LayerSpec::Linear { in_features, out_features, bias: bias.unwrap_or(true) }
            }
            "conv2d" => {
                let in_channels = line.required("in")?;
                let out_channels = line.required("out")?;
                let kernel = line.required("kernel")?;
                let stride = line.usize("stride")?.unwrap_or(1);
                let bias = line.bool("bias")?;
                if bias.is_none() {
                    implicit_bias.push(layers.len());
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, bias: bias.unwrap_or(true) }
            }
            "activation" => LayerSpec::Activation(parse_activation(&mut line)?),
            "dropout" => {
                let p = line.f64("p")?.ok_or_else(|| line.err("`dropout` requires `p=`"))?;
                if !(0.0..1.0).contains(&p) {
                    return Err(line.err(format!("drop probability must lie in [0, 1), got {p}")));
                }
                LayerSpec::Dropout { p, rescale: line.bool("rescale")?.unwrap_or(true) }
            }
            "avgpool" => LayerSpec::AvgPool { window: line.usize("window")? },
            "maxpool" => LayerSpec::MaxPool { window: line.required("window")? },
            "normalize" => LayerSpec::Normalize,
            "softmax" => LayerSpec::SoftmaxHead {
                variant: line.choice(
                    "variant",
                    SoftmaxVariant::default(),
                    &[
                        ("standard", SoftmaxVariant::Standard),
                        ("normal", SoftmaxVariant::Normal),
                        ("logistic", SoftmaxVariant::Logistic),
                        ("simplified", SoftmaxVariant::Simplified),
                    ],
                )?,
            },
            other => return Err(line.err(format!("unknown layer kind `{other}`"))),
        };
        line.finish()?;
        if input.is_none() {
            return Err(Error::Parse { line: last_line, message: "`input` line must come first".into() });
        }
        layers.push(layer);
    }
    let (input_shape, seed, default_mode, input_var) =
        input.ok_or(Error::Parse { line: last_line.max(1), message: "missing `input` line".into() })?;
    // Layers feeding a normalize default to no bias.
    for i in implicit_bias {
        if matches!(layers.get(i + 1), Some(LayerSpec::Normalize)) {
            match &mut layers[i] {
                LayerSpec::Linear { bias, .. } | LayerSpec::Conv2d { bias, .. } => *bias = false,
                _ => {}
            }
        }
    }
    let cfg = NetworkConfig { input_shape, layers, seed, default_mode, input_var };
    cfg.validate().map_err(|e| Error::Parse { line: last_line, message: e.to_string() })?;
    Ok(cfg)
}

fn activation_text(a: &Activation) -> String {
    let assumption = |a: Assumption| match a {
        Assumption::Normal => "normal",
        Assumption::Logistic => "logistic",
    };
    let rform = |r: RVariant| match r {
        RVariant::Exact => "exact",
        RVariant::Fitted => "fitted",
    };
    match *a {
        Activation::Relu { assumption: s, var } => format!("name=relu assumption={} var={}", assumption(s), rform(var)),
        Activation::LeakyRelu { alpha, var } => format!("name=lrelu alpha={alpha} var={}", rform(var)),
        Activation::Heaviside { assumption: s } => format!("name=heaviside assumption={}", assumption(s)),
        Activation::LogisticBernoulli { mean } => {
            let m = match mean {
                BernoulliMean::Ap2a => "ap2a",
                BernoulliMean::Ap2b => "ap2b",
                BernoulliMean::Ap1 => "ap1",
                BernoulliMean::Pea => "pea",
            };
            format!("name=bernoulli mean={m}")
        }
        Activation::LogisticTransform { var } => {
            let v = match var {
                TransformVariance::Heuristic => "heuristic",
                TransformVariance::LargeSigma => "large_sigma",
            };
            format!("name=logistic var={v}")
        }
        Activation::Probit => "name=probit".into(),
        Activation::NormalCdf => "name=normcdf".into(),
        Activation::Abs => "name=abs".into(),
    }
}

pub(super) fn write_config(cfg: &NetworkConfig) -> String {
    let mut out = String::new();
    let shape: Vec<String> = cfg.input_shape.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(
        out,
        "input shape={} seed={} mode={} var={}",
        shape.join("x"),
        cfg.seed,
        cfg.default_mode.name(),
        cfg.input_var
    );
    for layer in &cfg.layers {
        let line = match layer {
            LayerSpec::Linear { in_features, out_features, bias } => {
                format!("linear in={in_features} out={out_features} bias={bias}")
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, bias } => {
                format!("conv2d in={in_channels} out={out_channels} kernel={kernel} stride={stride} bias={bias}")
            }
            LayerSpec::Activation(a) => format!("activation {}", activation_text(a)),
            LayerSpec::Dropout { p, rescale } => format!("dropout p={p} rescale={rescale}"),
            LayerSpec::AvgPool { window: Some(k) } => format!("avgpool window={k}"),
            LayerSpec::AvgPool { window: None } => "avgpool".into(),
            LayerSpec::MaxPool { window } => format!("maxpool window={window}"),
            LayerSpec::Normalize => "normalize".into(),
            LayerSpec::SoftmaxHead { variant } => {
                let v = match variant {
                    SoftmaxVariant::Standard => "standard",
                    SoftmaxVariant::Normal => "normal",
                    SoftmaxVariant::Logistic => "logistic",
                    SoftmaxVariant::Simplified => "simplified",
                };
                format!("softmax variant={v}")
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
