//! Dropout masks over the network's nodes and the weights between them.
//!
//! A mask holds one binary vector per node layer (inputs, each hidden layer,
//! outputs) and, for every weight layer, the derived matrix
//! `D(i, j) = node_in(i) * node_out(j)`: a weight is live iff both endpoints
//! are live. Sampled masks never mute output nodes.

use crate::error::{Error, Result};
use crate::mlp::{LayerSpec, NetworkParams};
use crate::rng::{Purpose, RngStream};
use crate::tensor::{bernoulli_matrix, Matrix};

/// Muting probability per non-output node layer, input layer first.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutSpec {
    rates: Vec<f64>,
}

impl DropoutSpec {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        for &r in &rates {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(DropoutSpec { rates })
    }

    /// No dropout anywhere.
    pub fn none(specs: &[LayerSpec]) -> Self {
        DropoutSpec {
            rates: vec![0.0; specs.len()],
        }
    }

    /// `input` on the input layer, `hidden` on every hidden layer.
    pub fn uniform(specs: &[LayerSpec], input: f64, hidden: f64) -> Result<Self> {
        let mut rates = vec![hidden; specs.len()];
        rates[0] = input;
        Self::new(rates)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn is_disabled(&self) -> bool {
        self.rates.iter().all(|&r| r == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    node_masks: Vec<Vec<f64>>,
    weight_masks: Vec<Matrix>,
    scales: Vec<f64>,
}

impl DropoutMask {
    /// Builds a mask from explicit node masks (one per node layer, outputs
    /// last) and activation scales (one per non-output node layer).
    pub fn from_node_masks(node_masks: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        if node_masks.len() < 2 || scales.len() + 1 != node_masks.len() {
            return Err(Error::invalid(
                "need at least two node layers and one scale per non-output layer",
            ));
        }
        if node_masks.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("node masks must be binary"));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("scales must be positive and finite"));
        }
        let weight_masks = node_masks
            .windows(2)
            .map(|w| Matrix::from_fn(w[0].len(), w[1].len(), |i, j| w[0][i] * w[1][j]))
            .collect();
        Ok(DropoutMask {
            node_masks,
            weight_masks,
            scales,
        })
    }

    /// Every node live, no scaling.
    pub fn ones(specs: &[LayerSpec]) -> Self {
        let mut node_masks: Vec<Vec<f64>> = specs.iter().map(|s| vec![1.0; s.fan_in]).collect();
        node_masks.push(vec![1.0; specs[specs.len() - 1].fan_out]);
        Self::from_node_masks(node_masks, vec![1.0; specs.len()]).expect("well-formed")
    }

    pub fn node_masks(&self) -> &[Vec<f64>] {
        &self.node_masks
    }

    pub fn weight_masks(&self) -> &[Matrix] {
        &self.weight_masks
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Whether weight `(i, j)` of layer `layer` is live.
    pub fn is_live(&self, layer: usize, i: usize, j: usize) -> bool {
        self.weight_masks[layer].get(i, j) != 0.0
    }

    pub fn bias_live(&self, layer: usize, j: usize) -> bool {
        self.node_masks[layer + 1][j] != 0.0
    }

    pub fn is_all_ones(&self) -> bool {
        self.node_masks.iter().flatten().all(|&v| v == 1.0)
    }

    pub(crate) fn check_congruent(&self, specs: &[LayerSpec]) -> Result<()> {
        let ok = self.weight_masks.len() == specs.len()
            && self
                .weight_masks
                .iter()
                .zip(specs)
                .all(|(m, s)| m.shape() == (s.fan_in, s.fan_out));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "dropout mask does not match the architecture",
            ))
        }
    }
}

/// Mutes each node of non-output layer `l` independently with probability
/// `rates[l]`; survivors are scaled by `1 / (1 - rate)`.
///
/// Draw order: layer by layer, node by node, one draw per node (also when
/// the rate is 0).
pub fn sample_mask(
    spec: &DropoutSpec,
    specs: &[LayerSpec],
    rng: &mut RngStream,
) -> Result<DropoutMask> {
    if spec.rates.len() != specs.len() {
        return Err(Error::invalid(format!(
            "dropout spec has {} rates for {} non-output layers",
            spec.rates.len(),
            specs.len()
        )));
    }
    let mut node_masks = Vec::with_capacity(specs.len() + 1);
    for (s, &rate) in specs.iter().zip(&spec.rates) {
        node_masks.push(bernoulli_matrix(rng, 1, s.fan_in, 1.0 - rate)?.into_data());
    }
    node_masks.push(vec![1.0; specs[specs.len() - 1].fan_out]);
    let scales = spec.rates.iter().map(|r| 1.0 / (1.0 - r)).collect();
    DropoutMask::from_node_masks(node_masks, scales)
}

/// Mask for training iteration `iteration` of the run seeded with `seed`.
pub fn sample_mask_for_iteration(
    spec: &DropoutSpec,
    specs: &[LayerSpec],
    seed: u64,
    iteration: u64,
) -> Result<DropoutMask> {
    sample_mask(
        spec,
        specs,
        &mut RngStream::for_purpose(seed, Purpose::Dropout, iteration),
    )
}

/// The thinned network: weights times weight masks, biases times their
/// node's mask. `params` is left untouched.
pub fn apply_mask(params: &NetworkParams, mask: &DropoutMask) -> Result<NetworkParams> {
    mask.check_congruent(params.specs())?;
    let mut thinned = params.clone();
    for (l, layer) in thinned.layers.iter_mut().enumerate() {
        layer.weights = layer.weights.hadamard(&mask.weight_masks[l])?;
        for (b, m) in layer.biases.iter_mut().zip(&mask.node_masks[l + 1]) {
            *b *= m;
        }
    }
    Ok(thinned)
}
