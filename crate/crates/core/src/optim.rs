//! Per-weight update rules: SGD, classic Rprop and dropout-aware Rprop.
//!
//! Both Rprop kernels are written as a pure transition on a single
//! `WeightSlot` so that every branch can be checked by hand; the network-wide
//! steps just map that transition over weights and biases.
//!
//! Zero gradient products arise from three sources once dropout is active:
//!
//! 1. the previous step saw a sign change and stored `prev_grad = 0`,
//! 2. the weight's input node was muted (its mask entry is 0),
//! 3. the weight's output node was muted (backpropagated gradient is 0).
//!
//! Classic Rprop treats all three as case 1. The dropout-aware kernel freezes
//! masked weights outright and only steps in the zero-product branch when
//! `prev_grad` is 0, so a live weight whose fresh gradient happens to be 0
//! keeps its stored gradient and step size.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::dropout::DropoutMask;
use crate::error::{Error, Result};
use crate::mlp::{layers_congruent, Gradients, Layer, NetworkParams};

/// Sign with `sgn(±0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::invalid("minibatch_size must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            minibatch_size: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_max: f64,
    pub delta_min: f64,
    pub delta_init: f64,
}

impl RpropConfig {
    /// `eta+ = 1.2`, `eta- = 0.5`, `delta_max = 50`, `delta_min = 1e-6`,
    /// `delta_init = 0.1`.
    pub fn classic() -> Self {
        RpropConfig {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_max: 50.0,
            delta_min: 1e-6,
            delta_init: 0.1,
        }
    }

    /// Rejects non-positive values and `delta_min <= delta_init <= delta_max`
    /// violations. Multipliers on the "wrong" side of 1 are only warned about.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eta_plus,
            self.eta_minus,
            self.delta_max,
            self.delta_min,
            self.delta_init,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                "Rprop parameters must be positive and finite",
            ));
        }
        if !(self.delta_min <= self.delta_init && self.delta_init <= self.delta_max) {
            return Err(Error::invalid(format!(
                "need delta_min <= delta_init <= delta_max, got {} / {} / {}",
                self.delta_min, self.delta_init, self.delta_max
            )));
        }
        if self.eta_plus <= 1.0 {
            warn!(
                "eta_plus = {} <= 1: step sizes shrink on agreeing signs",
                self.eta_plus
            );
        }
        if self.eta_minus >= 1.0 {
            warn!(
                "eta_minus = {} >= 1: step sizes grow on sign changes",
                self.eta_minus
            );
        }
        Ok(())
    }
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self::classic()
    }
}

/// Per-weight Rprop memory: step sizes and the stored previous gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct RpropState {
    pub delta: Vec<Layer>,
    pub prev_grad: Vec<Layer>,
}

impl RpropState {
    pub fn congruent_with(&self, params: &NetworkParams) -> bool {
        layers_congruent(&self.delta, &params.layers)
            && layers_congruent(&self.prev_grad, &params.layers)
    }
}

/// Every step size `delta_init`, every stored gradient 0.
pub fn init_rprop_state(params: &NetworkParams, cfg: &RpropConfig) -> RpropState {
    let filled = |v: f64| {
        params
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.shape();
                Layer::filled(r, c, v)
            })
            .collect::<Vec<_>>()
    };
    RpropState {
        delta: filled(cfg.delta_init),
        prev_grad: filled(0.0),
    }
}

/// State of one weight between steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSlot {
    pub weight: f64,
    pub delta: f64,
    pub prev_grad: f64,
}

// The branch test compares signs rather than multiplying the gradients, so
// tiny gradients cannot underflow into the zero branch.
#[inline]
fn grow(delta: f64, cfg: &RpropConfig) -> f64 {
    (delta * cfg.eta_plus).min(cfg.delta_max)
}

#[inline]
fn shrink(delta: f64, cfg: &RpropConfig) -> f64 {
    (delta * cfg.eta_minus).max(cfg.delta_min)
}

/// Classic Rprop transition for one weight.
#[inline]
pub fn rprop_update(slot: WeightSlot, grad: f64, cfg: &RpropConfig) -> WeightSlot {
    let product = sgn(slot.prev_grad) * sgn(grad);
    if product > 0.0 {
        let delta = grow(slot.delta, cfg);
        WeightSlot {
            weight: slot.weight - sgn(grad) * delta,
            delta,
            prev_grad: grad,
        }
    } else if product < 0.0 {
        // Backtrack: no move, and force the next step through the zero branch.
        WeightSlot {
            weight: slot.weight,
            delta: shrink(slot.delta, cfg),
            prev_grad: 0.0,
        }
    } else {
        WeightSlot {
            weight: slot.weight - sgn(grad) * slot.delta,
            delta: slot.delta,
            prev_grad: grad,
        }
    }
}

/// Dropout-aware Rprop transition for one weight. `live` is the weight's mask
/// entry; a masked weight keeps its whole slot.
#[inline]
pub fn dropout_rprop_update(
    slot: WeightSlot,
    grad: f64,
    live: bool,
    cfg: &RpropConfig,
) -> WeightSlot {
    if !live {
        return slot;
    }
    let product = sgn(slot.prev_grad) * sgn(grad);
    if product > 0.0 {
        let delta = grow(slot.delta, cfg);
        WeightSlot {
            weight: slot.weight - sgn(grad) * delta,
            delta,
            prev_grad: grad,
        }
    } else if product < 0.0 {
        WeightSlot {
            weight: slot.weight,
            delta: shrink(slot.delta, cfg),
            prev_grad: 0.0,
        }
    } else if slot.prev_grad == 0.0 {
        WeightSlot {
            weight: slot.weight - sgn(grad) * slot.delta,
            delta: slot.delta,
            prev_grad: grad,
        }
    } else {
        // A live weight with a genuinely zero gradient: nothing to learn from.
        slot
    }
}

fn check_finite(grads: &Gradients) -> Result<()> {
    match grads.first_non_finite() {
        Some((layer, index)) => Err(Error::NonFinite {
            what: "gradient",
            layer,
            index,
        }),
        None => Ok(()),
    }
}

/// `w <- w - learning_rate * g`. Leaves `params` untouched on error.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
    if !grads.congruent_with(params) {
        return Err(Error::invalid("gradients do not match parameters"));
    }
    check_finite(grads)?;
    let lr = cfg.learning_rate;
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, d) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *w -= lr * d;
        }
        for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= lr * d;
        }
    }
    Ok(())
}

fn check_rprop_inputs(params: &NetworkParams, grads: &Gradients, state: &RpropState) -> Result<()> {
    if !grads.congruent_with(params) {
        return Err(Error::invalid("gradients do not match parameters"));
    }
    if !state.congruent_with(params) {
        return Err(Error::invalid("Rprop state does not match parameters"));
    }
    check_finite(grads)
}

fn update_slices(
    weights: &mut [f64],
    grads: &[f64],
    delta: &mut [f64],
    prev: &mut [f64],
    live: Option<&[f64]>,
    cfg: &RpropConfig,
) {
    for i in 0..weights.len() {
        let slot = WeightSlot {
            weight: weights[i],
            delta: delta[i],
            prev_grad: prev[i],
        };
        let next = match live {
            None => rprop_update(slot, grads[i], cfg),
            Some(mask) => dropout_rprop_update(slot, grads[i], mask[i] != 0.0, cfg),
        };
        weights[i] = next.weight;
        delta[i] = next.delta;
        prev[i] = next.prev_grad;
    }
}

fn rprop_apply(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut RpropState,
    cfg: &RpropConfig,
    mask: Option<&DropoutMask>,
) {
    for l in 0..params.layers.len() {
        let layer = &mut params.layers[l];
        let g = &grads.layers[l];
        let d = &mut state.delta[l];
        let p = &mut state.prev_grad[l];
        update_slices(
            layer.weights.data_mut(),
            g.weights.data(),
            d.weights.data_mut(),
            p.weights.data_mut(),
            mask.map(|m| m.weight_masks()[l].data()),
            cfg,
        );
        update_slices(
            &mut layer.biases,
            &g.biases,
            &mut d.biases,
            &mut p.biases,
            mask.map(|m| m.node_masks()[l + 1].as_slice()),
            cfg,
        );
    }
}

/// One classic Rprop step over every weight and bias.
pub fn rprop_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut RpropState,
    cfg: &RpropConfig,
) -> Result<()> {
    check_rprop_inputs(params, grads, state)?;
    rprop_apply(params, grads, state, cfg, None);
    Ok(())
}

/// One dropout-aware Rprop step. Biases use their node's mask entry.
pub fn dropout_rprop_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut RpropState,
    cfg: &RpropConfig,
    mask: &DropoutMask,
) -> Result<()> {
    check_rprop_inputs(params, grads, state)?;
    mask.check_congruent(params.specs())?;
    rprop_apply(params, grads, state, cfg, Some(mask));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Rprop,
    ModRprop,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rprop => "rprop",
            OptimizerKind::ModRprop => "mod-rprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rprop" => Ok(OptimizerKind::Rprop),
            "mod-rprop" | "dropout-rprop" => Ok(OptimizerKind::ModRprop),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// A configured optimizer together with whatever state it carries.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd(SgdConfig),
    Rprop(RpropConfig, RpropState),
    ModRprop(RpropConfig, RpropState),
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        sgd: SgdConfig,
        rprop: RpropConfig,
        params: &NetworkParams,
    ) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => {
                sgd.validate()?;
                Optimizer::Sgd(sgd)
            }
            OptimizerKind::Rprop => {
                rprop.validate()?;
                Optimizer::Rprop(rprop, init_rprop_state(params, &rprop))
            }
            OptimizerKind::ModRprop => {
                rprop.validate()?;
                Optimizer::ModRprop(rprop, init_rprop_state(params, &rprop))
            }
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd(_) => OptimizerKind::Sgd,
            Optimizer::Rprop(..) => OptimizerKind::Rprop,
            Optimizer::ModRprop(..) => OptimizerKind::ModRprop,
        }
    }

    /// The dropout-aware kernel requires the iteration's mask.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        grads: &Gradients,
        mask: Option<&DropoutMask>,
    ) -> Result<()> {
        match self {
            Optimizer::Sgd(cfg) => sgd_step(params, grads, cfg),
            Optimizer::Rprop(cfg, state) => rprop_step(params, grads, state, cfg),
            Optimizer::ModRprop(cfg, state) => {
                let mask = mask.ok_or_else(|| {
                    Error::invalid("mod-rprop needs the dropout mask of every step")
                })?;
                dropout_rprop_step(params, grads, state, cfg, mask)
            }
        }
    }

    pub fn rprop_state(&self) -> Option<&RpropState> {
        match self {
            Optimizer::Sgd(_) => None,
            Optimizer::Rprop(_, s) | Optimizer::ModRprop(_, s) => Some(s),
        }
    }
}
