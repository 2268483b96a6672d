//! Loss oracles: a linear softmax classifier (convex) and a one-hidden-layer
//! tanh network (smooth, non-convex), both trained with cross entropy and
//! hand-derived gradients.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Stream id reserved for parameter initialization, disjoint from the
/// per-domain sampling streams.
pub const INIT_STREAM: u64 = u64::MAX;

/// A labelled feature vector borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// A named contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    /// Lays the blocks out back to back in the given order.
    pub fn new(blocks: impl IntoIterator<Item = (String, Vec<usize>)>) -> Self {
        let mut offset = 0;
        let blocks = blocks
            .into_iter()
            .map(|(name, shape)| {
                let block = ParamBlock { name, shape, offset };
                offset += block.len();
                block
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(ParamBlock::len).sum()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat parameter vector `W` plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ModelParameters {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if layout.total_len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "layout covers {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> &[f64] {
        let block = self
            .layout
            .block(name)
            .unwrap_or_else(|| panic!("no parameter block named {name}"));
        &self.values[block.range()]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Capability contract for a trainable model with a non-negative loss.
pub trait LossOracle: Send + Sync {
    fn spec(&self) -> ModelSpec;

    fn layout(&self) -> ParamLayout;

    fn init_params(&self, seed: u64) -> ModelParameters;

    /// Class scores before the softmax.
    fn logits(&self, params: &ModelParameters, features: &[f64]) -> Result<Vec<f64>>;

    /// Mean loss over `batch` and its gradient in the parameters.
    fn loss_gradient(&self, params: &ModelParameters, batch: &[Example<'_>]) -> Result<(f64, Vec<f64>)>;

    /// Whether the loss is convex in the parameters.
    fn is_convex(&self) -> bool;

    fn loss(&self, params: &ModelParameters, example: Example<'_>) -> Result<f64> {
        let logits = self.logits(params, example.features)?;
        cross_entropy(&logits, example.label)
    }

    /// Mean loss over `batch` without the gradient.
    fn mean_loss(&self, params: &ModelParameters, batch: &[Example<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for example in batch {
            total += self.loss(params, *example)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Highest-scoring class, lowest index on ties.
    fn predict(&self, params: &ModelParameters, features: &[f64]) -> Result<usize> {
        let logits = self.logits(params, features)?;
        let mut best = 0;
        for (c, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

/// `log Σ exp(z) - z_label`, stabilized by the maximum logit.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax probabilities minus the one-hot label: the logit gradient.
fn logit_gradient(logits: &[f64], label: usize) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[label] -= 1.0;
    grad
}

fn check_example(example: &Example<'_>, dim: usize, classes: usize) -> Result<()> {
    if example.features.len() != dim {
        return Err(Error::InvalidInput(format!(
            "example has {} features, model expects {dim}",
            example.features.len()
        )));
    }
    if example.label >= classes {
        return Err(Error::InvalidInput(format!(
            "label {} out of range for {classes} classes",
            example.label
        )));
    }
    Ok(())
}

fn check_params(params: &ModelParameters, expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(Error::InvalidInput(format!(
            "model has {expected} parameters, got {}",
            params.len()
        )));
    }
    Ok(())
}

/// Linear map `W x + b` followed by softmax cross entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxModel {
    pub input_dim: usize,
    pub num_classes: usize,
}

impl SoftmaxModel {
    pub fn new(input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "softmax model needs d >= 1 and C >= 2, got d={input_dim} C={num_classes}"
            )));
        }
        Ok(Self { input_dim, num_classes })
    }
}

impl LossOracle for SoftmaxModel {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Softmax {
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    fn layout(&self) -> ParamLayout {
        ParamLayout::new([
            ("weights".to_string(), vec![self.num_classes, self.input_dim]),
            ("bias".to_string(), vec![self.num_classes]),
        ])
    }

    fn init_params(&self, _seed: u64) -> ModelParameters {
        ModelParameters::zeros(self.layout())
    }

    fn logits(&self, params: &ModelParameters, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim;
        check_params(params, (d + 1) * self.num_classes)?;
        if features.len() != d {
            return Err(Error::InvalidInput(format!(
                "example has {} features, model expects {d}",
                features.len()
            )));
        }
        let (weights, bias) = params.values.split_at(self.num_classes * d);
        Ok(weights
            .chunks_exact(d)
            .zip(bias)
            .map(|(row, b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }

    fn loss_gradient(&self, params: &ModelParameters, batch: &[Example<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let d = self.input_dim;
        let bias_offset = self.num_classes * d;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for example in batch {
            check_example(example, d, self.num_classes)?;
            let logits = self.logits(params, example.features)?;
            total += cross_entropy(&logits, example.label)?;
            let dz = logit_gradient(&logits, example.label);
            for (c, g) in dz.iter().enumerate() {
                let row = &mut grad[c * d..(c + 1) * d];
                row.iter_mut().zip(example.features).for_each(|(r, x)| *r += g * x);
                grad[bias_offset + c] += g;
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// One tanh hidden layer, then a linear softmax layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

struct MlpForward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MlpModel {
    pub fn new(input_dim: usize, hidden: usize, num_classes: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("mlp hidden width must be at least 1".into()));
        }
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "mlp needs d >= 1 and C >= 2, got d={input_dim} C={num_classes}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            num_classes,
        })
    }

    fn num_params(&self) -> usize {
        self.hidden * (self.input_dim + 1) + self.num_classes * (self.hidden + 1)
    }

    fn forward(&self, params: &ModelParameters, features: &[f64]) -> Result<MlpForward> {
        check_params(params, self.num_params())?;
        let (d, h) = (self.input_dim, self.hidden);
        if features.len() != d {
            return Err(Error::InvalidInput(format!(
                "example has {} features, model expects {d}",
                features.len()
            )));
        }
        let v = &params.values;
        let (w1, rest) = v.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(self.num_classes * h);

        let hidden: Vec<f64> = w1
            .chunks_exact(d)
            .zip(b1)
            .map(|(row, b)| (b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()).tanh())
            .collect();
        let logits = w2
            .chunks_exact(h)
            .zip(b2)
            .map(|(row, b)| b + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>())
            .collect();
        Ok(MlpForward { hidden, logits })
    }
}

impl LossOracle for MlpModel {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Mlp {
            input_dim: self.input_dim,
            hidden: self.hidden,
            num_classes: self.num_classes,
        }
    }

    fn layout(&self) -> ParamLayout {
        ParamLayout::new([
            ("hidden.weights".to_string(), vec![self.hidden, self.input_dim]),
            ("hidden.bias".to_string(), vec![self.hidden]),
            ("output.weights".to_string(), vec![self.num_classes, self.hidden]),
            ("output.bias".to_string(), vec![self.num_classes]),
        ])
    }

    /// Uniform `(-1/√fan_in, 1/√fan_in)` per layer.
    fn init_params(&self, seed: u64) -> ModelParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let layout = self.layout();
        let mut values = Vec::with_capacity(layout.total_len());
        for block in layout.blocks() {
            let fan_in = if block.name.starts_with("hidden") {
                self.input_dim
            } else {
                self.hidden
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            values.extend((0..block.len()).map(|_| rng.random_range(-bound..bound)));
        }
        ModelParameters { values, layout }
    }

    fn logits(&self, params: &ModelParameters, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(params, features)?.logits)
    }

    fn loss_gradient(&self, params: &ModelParameters, batch: &[Example<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let (d, h, c) = (self.input_dim, self.hidden, self.num_classes);
        let w2_offset = h * d + h;
        let b2_offset = w2_offset + c * h;
        let w2 = &params.values[w2_offset..b2_offset];

        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for example in batch {
            check_example(example, d, c)?;
            let MlpForward { hidden, logits } = self.forward(params, example.features)?;
            total += cross_entropy(&logits, example.label)?;
            let dz = logit_gradient(&logits, example.label);

            let mut dh = vec![0.0; h];
            for (k, g) in dz.iter().enumerate() {
                let row = &w2[k * h..(k + 1) * h];
                for j in 0..h {
                    grad[w2_offset + k * h + j] += g * hidden[j];
                    dh[j] += g * row[j];
                }
                grad[b2_offset + k] += g;
            }
            for j in 0..h {
                let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                let row = &mut grad[j * d..(j + 1) * d];
                row.iter_mut().zip(example.features).for_each(|(r, x)| *r += da * x);
                grad[h * d + j] += da;
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// Architecture description, enough to rebuild a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Softmax {
        input_dim: usize,
        num_classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: usize,
        num_classes: usize,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn LossOracle>> {
        Ok(match *self {
            ModelSpec::Softmax { input_dim, num_classes } => Box::new(SoftmaxModel::new(input_dim, num_classes)?),
            ModelSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
            } => Box::new(MlpModel::new(input_dim, hidden, num_classes)?),
        })
    }
}

/// Model family as named in run configs: `softmax` or `mlp:<width>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Softmax,
    Mlp { hidden: usize },
}

impl ModelFamily {
    pub fn spec(self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self {
            ModelFamily::Softmax => ModelSpec::Softmax { input_dim, num_classes },
            ModelFamily::Mlp { hidden } => ModelSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
            },
        }
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "softmax" {
            return Ok(ModelFamily::Softmax);
        }
        if let Some(width) = s.strip_prefix("mlp:") {
            let hidden: usize = width
                .parse()
                .map_err(|_| Error::Config(format!("bad mlp width '{width}'")))?;
            if hidden == 0 {
                return Err(Error::Config("mlp hidden width must be at least 1".into()));
            }
            return Ok(ModelFamily::Mlp { hidden });
        }
        Err(Error::Config(format!(
            "unknown model '{s}' (expected softmax or mlp:<width>)"
        )))
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::Softmax => write!(f, "softmax"),
            ModelFamily::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

/// `ĝ = Σ_k p_k g_k`, accumulated in domain order.
pub fn weighted_gradient(p: &[f64], per_domain_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    if p.len() != per_domain_grads.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} gradients",
            p.len(),
            per_domain_grads.len()
        )));
    }
    let Some(first) = per_domain_grads.first() else {
        return Err(Error::InvalidInput("no gradients to combine".into()));
    };
    let mut out = vec![0.0; first.len()];
    for (weight, grad) in p.iter().zip(per_domain_grads) {
        if grad.len() != out.len() {
            return Err(Error::InvalidInput(format!(
                "gradient lengths differ: {} vs {}",
                grad.len(),
                out.len()
            )));
        }
        if *weight == 0.0 {
            continue;
        }
        out.iter_mut().zip(grad).for_each(|(o, g)| *o += weight * g);
    }
    Ok(out)
}

const CHECKPOINT_MAGIC: &str = "robust-domains checkpoint v1";

/// Renders a checkpoint: header, model line, layout blocks, then one value
/// per line with 17 significant digits.
pub fn render_checkpoint(spec: &ModelSpec, params: &ModelParameters) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    match spec {
        ModelSpec::Softmax { input_dim, num_classes } => {
            out.push_str(&format!("model softmax {input_dim} {num_classes}\n"))
        }
        ModelSpec::Mlp {
            input_dim,
            hidden,
            num_classes,
        } => out.push_str(&format!("model mlp {input_dim} {hidden} {num_classes}\n")),
    }
    for block in params.layout.blocks() {
        let dims: Vec<String> = block.shape.iter().map(usize::to_string).collect();
        out.push_str(&format!("block {} {}\n", block.name, dims.join(" ")));
    }
    out.push_str(&format!("values {}\n", params.len()));
    for v in &params.values {
        out.push_str(&format!("{v:.16e}\n"));
    }
    out
}

/// Inverse of [`render_checkpoint`].
pub fn parse_checkpoint(text: &str) -> Result<(ModelSpec, ModelParameters)> {
    let bad = |msg: String| Error::InvalidInput(format!("checkpoint: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing header".into()));
    }
    let model_line = lines.next().ok_or_else(|| bad("missing model line".into()))?;
    let fields: Vec<&str> = model_line.split_whitespace().collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer '{s}'")));
    let spec = match fields.as_slice() {
        ["model", "softmax", d, c] => ModelSpec::Softmax {
            input_dim: num(d)?,
            num_classes: num(c)?,
        },
        ["model", "mlp", d, h, c] => ModelSpec::Mlp {
            input_dim: num(d)?,
            hidden: num(h)?,
            num_classes: num(c)?,
        },
        _ => return Err(bad(format!("bad model line '{model_line}'"))),
    };

    let mut blocks = Vec::new();
    let count = loop {
        let line = lines.next().ok_or_else(|| bad("missing values line".into()))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("block") => {
                let name = parts.next().ok_or_else(|| bad("unnamed block".into()))?;
                let shape = parts.map(num).collect::<Result<Vec<_>>>()?;
                blocks.push((name.to_string(), shape));
            }
            Some("values") => {
                break num(parts.next().ok_or_else(|| bad("missing value count".into()))?)?;
            }
            _ => return Err(bad(format!("unexpected line '{line}'"))),
        }
    };
    let layout = ParamLayout::new(blocks);
    let expected = spec.build()?.layout();
    if layout != expected {
        return Err(bad("layout does not match the model".into()));
    }
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad value '{l}'"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != count {
        return Err(bad(format!("expected {count} values, found {}", values.len())));
    }
    Ok((spec, ModelParameters::new(layout, values)?))
}

pub fn save_checkpoint(path: &Path, spec: &ModelSpec, params: &ModelParameters) -> Result<()> {
    fs::write(path, render_checkpoint(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ModelParameters)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
