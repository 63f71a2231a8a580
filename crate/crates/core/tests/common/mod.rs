#![allow(dead_code)]

use std::path::PathBuf;

use resprop::dropout::DropoutMask;
use resprop::mlp::{Activation, NetworkParams};
use resprop::tensor::Matrix;

/// Directory of the bundled MNIST subset, overridable with `RESPROP_MNIST_DIR`.
pub fn mnist_dir() -> PathBuf {
    match std::env::var_os("RESPROP_MNIST_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk"),
    }
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Rectifier => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
    }
}

/// Mean negative log-likelihood computed with plain loops, one example at a
/// time, sharing no code with the library's forward pass.
pub fn naive_loss(
    params: &NetworkParams,
    input: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
) -> f64 {
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let mut x: Vec<f64> = input.row(r).to_vec();
        for (l, (spec, layer)) in params.specs().iter().zip(&params.layers).enumerate() {
            if let Some(m) = mask {
                for (i, v) in x.iter_mut().enumerate() {
                    *v *= m.node_masks()[l][i] * m.scales()[l];
                }
            }
            let mut out = vec![0.0; spec.fan_out];
            for (j, o) in out.iter_mut().enumerate() {
                let mut z = layer.biases[j];
                for (i, xi) in x.iter().enumerate() {
                    z += xi * layer.weights.get(i, j);
                }
                *o = act(spec.activation, z);
            }
            x = out;
        }
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_norm - x[label];
    }
    total / labels.len() as f64
}

/// Central differences of [`naive_loss`], flattened layer by layer as
/// weights (row-major) followed by biases.
pub fn naive_numeric_gradient(
    params: &NetworkParams,
    input: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
    h: f64,
) -> Vec<f64> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for l in 0..params.layers.len() {
        for k in 0..params.layers[l].weights.data().len() {
            let w = params.layers[l].weights.data()[k];
            probe.layers[l].weights.data_mut()[k] = w + h;
            let up = naive_loss(&probe, input, labels, mask);
            probe.layers[l].weights.data_mut()[k] = w - h;
            let down = naive_loss(&probe, input, labels, mask);
            probe.layers[l].weights.data_mut()[k] = w;
            out.push((up - down) / (2.0 * h));
        }
        for k in 0..params.layers[l].biases.len() {
            let b = params.layers[l].biases[k];
            probe.layers[l].biases[k] = b + h;
            let up = naive_loss(&probe, input, labels, mask);
            probe.layers[l].biases[k] = b - h;
            let down = naive_loss(&probe, input, labels, mask);
            probe.layers[l].biases[k] = b;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn flatten(layers: &[resprop::mlp::Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.data().iter().chain(&l.biases).copied())
        .collect()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Exact signed-rank distribution by listing all `2^n` sign patterns.
pub struct Enumerated {
    pub n: usize,
    pub w_plus: f64,
    pub p_greater: f64,
    pub p_less: f64,
    pub p_two_sided: f64,
}

pub fn wilcoxon_by_enumeration(a: &[f64], b: &[f64]) -> Enumerated {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    // Average rank: 1 + (number strictly smaller) + (ties excluding self) / 2.
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&x| {
            let below = abs.iter().filter(|&&y| y < x).count() as f64;
            let equal = abs.iter().filter(|&&y| y == x).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let mut ge = 0u64;
    let mut le = 0u64;
    for pattern in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|i| pattern >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if w >= w_plus {
            ge += 1;
        }
        if w <= w_plus {
            le += 1;
        }
    }
    let all = (1u64 << n) as f64;
    let (p_greater, p_less) = if n == 0 {
        (1.0, 1.0)
    } else {
        (ge as f64 / all, le as f64 / all)
    };
    Enumerated {
        n,
        w_plus,
        p_greater,
        p_less,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
    }
}
