//! Multilayer perceptron: architecture, forward pass, softmax/NLL loss and
//! exact backpropagated gradients.
//!
//! Weights of layer `l` form a `fan_in x fan_out` matrix, so entry `(i, j)`
//! connects input node `i` to output node `j`. The last layer's activation is
//! applied to its pre-activations before the softmax; use `Identity` there for
//! a plain softmax classifier.

use std::fmt;
use std::str::FromStr;

use crate::dropout::DropoutMask;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Matrix};

/// Floor applied to probabilities inside the log of the NLL loss.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Rectifier,
    Logistic,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Rectifier => 0,
            Activation::Logistic => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Rectifier,
            1 => Activation::Logistic,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Rectifier => "relu",
            Activation::Logistic => "logistic",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" | "rectifier" => Ok(Activation::Rectifier),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec {
            fan_in,
            fan_out,
            activation,
        }
    }
}

/// Layer specs for node counts `sizes` (input first, classes last): hidden
/// layers use `hidden`, the output layer is `Identity`.
pub fn architecture(sizes: &[usize], hidden: Activation) -> Result<Vec<LayerSpec>> {
    if sizes.len() < 2 {
        return Err(Error::invalid(
            "an architecture needs at least input and output sizes",
        ));
    }
    let last = sizes.len() - 2;
    let specs: Vec<LayerSpec> = sizes
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let act = if l == last {
                Activation::Identity
            } else {
                hidden
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect();
    validate_architecture(&specs)?;
    Ok(specs)
}

/// Parses `"784-300-100-10"` into node counts.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(['-', 'x', ','])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad layer size `{t}` in `{text}`")))
        })
        .collect()
}

pub fn validate_architecture(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("empty architecture"));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.fan_in == 0 || s.fan_out == 0 {
            return Err(Error::invalid(format!("layer {l} has a zero dimension")));
        }
    }
    for (l, w) in specs.windows(2).enumerate() {
        if w[0].fan_out != w[1].fan_in {
            return Err(Error::invalid(format!(
                "layer {l} fan_out {} does not chain into layer {} fan_in {}",
                w[0].fan_out,
                l + 1,
                w[1].fan_in
            )));
        }
    }
    Ok(())
}

/// One weight layer: `fan_in x fan_out` weights and `fan_out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Matrix::zeros(fan_in, fan_out),
            biases: vec![0.0; fan_out],
        }
    }

    pub fn filled(fan_in: usize, fan_out: usize, value: f64) -> Self {
        Layer {
            weights: Matrix::filled(fan_in, fan_out, value),
            biases: vec![value; fan_out],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    pub fn len(&self) -> usize {
        self.weights.data().len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.data().iter().chain(&self.biases)
    }
}

pub(crate) fn layers_congruent(a: &[Layer], b: &[Layer]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.shape() == y.shape() && x.biases.len() == y.biases.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitRule {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    UniformFanIn,
    /// `U(-r, r)`.
    FixedRange(f64),
}

impl FromStr for InitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform-fan-in" {
            return Ok(InitRule::UniformFanIn);
        }
        if let Some(r) = s.strip_prefix("fixed-range:") {
            let r: f64 = r
                .parse()
                .map_err(|_| Error::invalid(format!("bad range in `{s}`")))?;
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!(
                    "range must be finite and >= 0 in `{s}`"
                )));
            }
            return Ok(InitRule::FixedRange(r));
        }
        Err(Error::invalid(format!("unknown init rule `{s}`")))
    }
}

impl fmt::Display for InitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitRule::UniformFanIn => f.write_str("uniform-fan-in"),
            InitRule::FixedRange(r) => write!(f, "fixed-range:{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    specs: Vec<LayerSpec>,
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    /// Assembles parameters, checking them against `specs`.
    pub fn from_layers(specs: Vec<LayerSpec>, layers: Vec<Layer>) -> Result<Self> {
        validate_architecture(&specs)?;
        if specs.len() != layers.len() {
            return Err(Error::invalid("layer count differs from architecture"));
        }
        for (l, (s, layer)) in specs.iter().zip(&layers).enumerate() {
            if layer.shape() != (s.fan_in, s.fan_out) || layer.biases.len() != s.fan_out {
                return Err(Error::invalid(format!("layer {l} does not match its spec")));
            }
        }
        Ok(NetworkParams { specs, layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_architecture(specs)?;
        let layers = specs
            .iter()
            .map(|s| Layer::zeros(s.fan_in, s.fan_out))
            .collect();
        Ok(NetworkParams {
            specs: specs.to_vec(),
            layers,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_width(&self) -> usize {
        self.specs[0].fan_in
    }

    pub fn classes(&self) -> usize {
        self.specs[self.specs.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.values().all(|v| v.is_finite()))
    }
}

/// Weights drawn per `rule`, biases zero.
pub fn init_params(
    specs: &[LayerSpec],
    rng: &mut RngStream,
    rule: InitRule,
) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(specs)?;
    for (spec, layer) in specs.iter().zip(params.layers.iter_mut()) {
        let r = match rule {
            InitRule::UniformFanIn => 1.0 / (spec.fan_in as f64).sqrt(),
            InitRule::FixedRange(r) => r,
        };
        for w in layer.weights.data_mut() {
            *w = rng.uniform(-r, r);
        }
    }
    Ok(params)
}

/// Per-layer gradients of the loss, shaped like the parameters they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    let (r, c) = l.shape();
                    Layer::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn congruent_with(&self, params: &NetworkParams) -> bool {
        layers_congruent(&self.layers, &params.layers)
    }

    pub fn scaled(&self, factor: f64) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.map(|x| x * factor),
                    biases: l.biases.iter().map(|x| x * factor).collect(),
                })
                .collect(),
        }
    }

    /// First non-finite entry as `(layer, flat index)`, weights before biases.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .find_map(|(l, layer)| layer.values().position(|v| !v.is_finite()).map(|i| (l, i)))
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Input to each layer after masking and dropout scaling.
    pub inputs: Vec<Matrix>,
    /// Pre-activations of each layer.
    pub pre_activations: Vec<Matrix>,
    pub probabilities: Matrix,
    masked: bool,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.probabilities.rows()
    }

    pub fn was_masked(&self) -> bool {
        self.masked
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert_eq!(row.len(), cols);
    }
    out
}

fn scale_masked(x: &mut Matrix, node_mask: &[f64], scale: f64) {
    let cols = x.cols();
    for r in 0..x.rows() {
        for (v, &m) in x.row_mut(r).iter_mut().zip(node_mask) {
            *v = if m == 0.0 { 0.0 } else { *v * scale };
        }
        debug_assert_eq!(node_mask.len(), cols);
    }
}

fn add_bias(z: &mut Matrix, biases: &[f64]) {
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(biases) {
            *v += b;
        }
    }
}

/// Forward pass over a `batch x fan_in` input. With a mask, muted nodes
/// output exactly 0 and surviving nodes are scaled by the mask's per-layer
/// factor (inverted dropout).
pub fn forward(
    params: &NetworkParams,
    input: &Matrix,
    mask: Option<&DropoutMask>,
) -> Result<ForwardPass> {
    if input.cols() != params.input_width() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: input.shape(),
            right: params.layers[0].shape(),
        });
    }
    if let Some(m) = mask {
        m.check_congruent(params.specs())?;
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut current = input.clone();
    for (l, (spec, layer)) in params.specs.iter().zip(&params.layers).enumerate() {
        if let Some(m) = mask {
            scale_masked(&mut current, &m.node_masks()[l], m.scales()[l]);
        }
        let mut z = matmul(&current, &layer.weights)?;
        add_bias(&mut z, &layer.biases);
        let a = z.map(|v| spec.activation.apply(v));
        inputs.push(current);
        pre_activations.push(z);
        current = a;
    }
    let probabilities = softmax_rows(&current);
    Ok(ForwardPass {
        inputs,
        pre_activations,
        probabilities,
        masked: mask.is_some(),
    })
}

/// Class probabilities of the full (unmasked) network.
pub fn predict(params: &NetworkParams, input: &Matrix) -> Result<Matrix> {
    Ok(forward(params, input, None)?.probabilities)
}

/// Mean negative log-likelihood of `labels`; probabilities are floored at
/// [`LOG_FLOOR`] so the result is always finite.
pub fn nll_loss(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    if probabilities.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "nll_loss",
            left: probabilities.shape(),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("nll_loss over an empty batch"));
    }
    let k = probabilities.cols();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} outside [0, {k})")));
        }
        total -= probabilities.get(r, y).max(LOG_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Exact gradient of `nll_loss(forward(params, input, mask))`. Entries for
/// masked weights and muted nodes' biases are exactly zero.
pub fn backward(
    params: &NetworkParams,
    pass: &ForwardPass,
    labels: &[usize],
    mask: Option<&DropoutMask>,
) -> Result<Gradients> {
    let n_layers = params.layers.len();
    let stale = || Error::invalid("forward pass does not match these parameters");
    if pass.inputs.len() != n_layers || pass.pre_activations.len() != n_layers {
        return Err(stale());
    }
    for (l, layer) in params.layers.iter().enumerate() {
        let (fan_in, fan_out) = layer.shape();
        if pass.inputs[l].cols() != fan_in || pass.pre_activations[l].cols() != fan_out {
            return Err(stale());
        }
    }
    if pass.masked != mask.is_some() {
        return Err(Error::invalid(
            "mask presence differs from the forward pass",
        ));
    }
    if let Some(m) = mask {
        m.check_congruent(params.specs())?;
    }
    let batch = pass.batch_size();
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "backward",
            left: pass.probabilities.shape(),
            right: (labels.len(), 1),
        });
    }
    let k = params.classes();

    let mut delta = pass.probabilities.clone();
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} outside [0, {k})")));
        }
        let row = delta.row_mut(r);
        row[y] -= 1.0;
    }
    let inv_batch = 1.0 / batch as f64;
    let out_act = params.specs[n_layers - 1].activation;
    let z_out = &pass.pre_activations[n_layers - 1];
    for (d, &z) in delta.data_mut().iter_mut().zip(z_out.data()) {
        *d *= inv_batch * out_act.derivative(z);
    }

    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let mut weights = matmul_tn(&pass.inputs[l], &delta)?;
        let mut biases = vec![0.0; delta.cols()];
        for r in 0..delta.rows() {
            for (b, d) in biases.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if let Some(m) = mask {
            for (g, &live) in weights
                .data_mut()
                .iter_mut()
                .zip(m.weight_masks()[l].data())
            {
                if live == 0.0 {
                    *g = 0.0;
                }
            }
            for (g, &live) in biases.iter_mut().zip(&m.node_masks()[l + 1]) {
                if live == 0.0 {
                    *g = 0.0;
                }
            }
        }
        if l > 0 {
            let mut upstream = matmul_nt(&delta, &params.layers[l].weights)?;
            if let Some(m) = mask {
                scale_masked(&mut upstream, &m.node_masks()[l], m.scales()[l]);
            }
            let act = params.specs[l - 1].activation;
            for (u, &z) in upstream
                .data_mut()
                .iter_mut()
                .zip(pass.pre_activations[l - 1].data())
            {
                *u *= act.derivative(z);
            }
            delta = upstream;
        }
        grads.push(Layer { weights, biases });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Fraction of rows whose argmax differs from the label.
pub fn classification_error(probabilities: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = probabilities
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    wrong as f64 / labels.len() as f64
}
