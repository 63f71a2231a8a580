mod common;

use proptest::prelude::*;
use resprop::dropout::{sample_mask, sample_mask_for_iteration, DropoutMask, DropoutSpec};
use resprop::gradcheck;
use resprop::mlp::{
    architecture, backward, forward, init_params, softmax_rows, Activation, InitRule, LayerSpec,
    NetworkParams,
};
use resprop::rng::RngStream;
use resprop::tensor::Matrix;

fn random_batch(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    classes: usize,
) -> (Matrix, Vec<usize>) {
    let x = Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0));
    let y = (0..rows).map(|_| rng.below(classes)).collect();
    (x, y)
}

fn net(sizes: &[usize], hidden: Activation, seed: u64) -> NetworkParams {
    let specs = architecture(sizes, hidden).unwrap();
    let mut p = init_params(
        &specs,
        &mut RngStream::new(seed, 1),
        InitRule::FixedRange(0.8),
    )
    .unwrap();
    // Non-zero biases so their gradients are exercised too.
    let mut rng = RngStream::new(seed, 2);
    for layer in &mut p.layers {
        for b in &mut layer.biases {
            *b = rng.uniform(-0.3, 0.3);
        }
    }
    p
}

#[test]
fn small_net_matches_loop_oracle() {
    for hidden in [
        Activation::Logistic,
        Activation::Tanh,
        Activation::Rectifier,
    ] {
        let params = net(&[3, 4, 2], hidden, 7);
        let (x, y) = random_batch(&mut RngStream::new(11, 0), 5, 3, 2);
        let pass = forward(&params, &x, None).unwrap();
        let analytic = common::flatten(&backward(&params, &pass, &y, None).unwrap().layers);
        let numeric = common::naive_numeric_gradient(&params, &x, &y, None, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(common::rel_err(*a, *n) < 1e-6, "{hidden:?}: {a} vs {n}");
        }
    }
}

#[test]
fn masked_gradient_matches_loop_oracle() {
    let params = net(&[6, 5, 4, 3], Activation::Tanh, 3);
    let specs = params.specs().to_vec();
    let spec = DropoutSpec::uniform(&specs, 0.2, 0.5).unwrap();
    let mask = sample_mask(&spec, &specs, &mut RngStream::new(5, 0)).unwrap();
    let (x, y) = random_batch(&mut RngStream::new(12, 0), 4, 6, 3);
    let pass = forward(&params, &x, Some(&mask)).unwrap();
    let grads = backward(&params, &pass, &y, Some(&mask)).unwrap();
    let numeric = common::naive_numeric_gradient(&params, &x, &y, Some(&mask), 1e-5);
    for (a, n) in common::flatten(&grads.layers).iter().zip(&numeric) {
        assert!(common::rel_err(*a, *n) < 1e-6, "{a} vs {n}");
    }
    for (l, g) in grads.layers.iter().enumerate() {
        let (fi, fo) = g.shape();
        for i in 0..fi {
            for j in 0..fo {
                if !mask.is_live(l, i, j) {
                    assert_eq!(g.weights.get(i, j), 0.0);
                }
            }
        }
        for j in 0..fo {
            if !mask.bias_live(l, j) {
                assert_eq!(g.biases[j], 0.0);
            }
        }
    }
}

#[test]
fn library_gradcheck_agrees() {
    let params = net(&[5, 6, 4], Activation::Logistic, 9);
    let (x, y) = random_batch(&mut RngStream::new(13, 0), 6, 5, 4);
    let report = gradcheck::check(&params, &x, &y, None, 1e-5).unwrap();
    assert_eq!(report.coordinates, params.num_params());
    assert!(report.fraction_within(1e-5) >= 0.99);
    assert!(report.max_relative_error < 1e-4);
}

#[test]
fn single_identity_layer_gradient_closed_form() {
    let specs = vec![LayerSpec::new(3, 2, Activation::Identity)];
    let params = net(&[3, 2], Activation::Identity, 4);
    assert_eq!(params.specs(), specs.as_slice());
    let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.5]]).unwrap();
    let y = [1, 0];
    let pass = forward(&params, &x, None).unwrap();
    let g = backward(&params, &pass, &y, None).unwrap();
    // dL/dW = X^T (softmax - onehot) / batch
    let p = &pass.probabilities;
    for i in 0..3 {
        for j in 0..2 {
            let expected: f64 = (0..2)
                .map(|r| x.get(r, i) * (p.get(r, j) - if y[r] == j { 1.0 } else { 0.0 }))
                .sum::<f64>()
                / 2.0;
            assert!((g.layers[0].weights.get(i, j) - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn muted_unit_has_no_influence() {
    let params = net(&[4, 6, 3], Activation::Rectifier, 21);
    let specs = params.specs().to_vec();
    let mut nodes: Vec<Vec<f64>> = vec![vec![1.0; 4], vec![1.0; 6], vec![1.0; 3]];
    nodes[1][2] = 0.0;
    let mask = DropoutMask::from_node_masks(nodes, vec![1.0, 2.0]).unwrap();
    let (x, _) = random_batch(&mut RngStream::new(1, 0), 3, 4, 3);
    let base = forward(&params, &x, Some(&mask)).unwrap().probabilities;
    for (layer, i, j) in [(0, 0, 2), (0, 3, 2), (1, 2, 0), (1, 2, 2)] {
        let mut p = params.clone();
        let w = p.layers[layer].weights.get(i, j);
        p.layers[layer].weights.set(i, j, w + 3.7);
        assert_eq!(forward(&p, &x, Some(&mask)).unwrap().probabilities, base);
    }
    let mut p = params.clone();
    p.layers[0].biases[2] += 1.0;
    assert_eq!(forward(&p, &x, Some(&mask)).unwrap().probabilities, base);
    assert_eq!(specs.len(), 2);
}

proptest! {
    #[test]
    fn softmax_translation_invariant(row in prop::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let m = Matrix::new(1, row.len(), row.clone()).unwrap();
        let shifted = m.map(|v| v + c);
        let (a, b) = (softmax_rows(&m), softmax_rows(&shifted));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_mask_zero_iff_endpoint_muted(seed in any::<u64>(), r_in in 0.0f64..0.9, r_hid in 0.0f64..0.9) {
        let specs = architecture(&[5, 4, 3, 2], Activation::Rectifier).unwrap();
        let spec = DropoutSpec::uniform(&specs, r_in, r_hid).unwrap();
        let mask = sample_mask(&spec, &specs, &mut RngStream::new(seed, 0)).unwrap();
        let nodes = mask.node_masks();
        prop_assert!(nodes.last().unwrap().iter().all(|&v| v == 1.0));
        for (l, wm) in mask.weight_masks().iter().enumerate() {
            for i in 0..wm.rows() {
                for j in 0..wm.cols() {
                    let live = nodes[l][i] == 1.0 && nodes[l + 1][j] == 1.0;
                    prop_assert_eq!(wm.get(i, j) == 1.0, live);
                }
            }
        }
    }
}

#[test]
fn muted_fraction_near_rate() {
    let specs = architecture(&[1000, 10], Activation::Rectifier).unwrap();
    let spec = DropoutSpec::uniform(&specs, 0.5, 0.0).unwrap();
    let mask = sample_mask(&spec, &specs, &mut RngStream::new(99, 0)).unwrap();
    let muted = mask.node_masks()[0].iter().filter(|&&v| v == 0.0).count() as f64 / 1000.0;
    assert!((muted - 0.5).abs() <= 0.05, "{muted}");
    assert_eq!(mask.scales()[0], 2.0);
}

#[test]
fn live_weight_fraction_is_product_of_keep_rates() {
    let specs = architecture(&[40, 40, 2], Activation::Rectifier).unwrap();
    let spec = DropoutSpec::new(vec![0.2, 0.5]).unwrap();
    let iterations = 200;
    let mut live = 0.0;
    for t in 0..iterations {
        let mask = sample_mask_for_iteration(&spec, &specs, 4, t).unwrap();
        live += mask.weight_masks()[0].data().iter().sum::<f64>();
    }
    let frac = live / (iterations as f64 * 1600.0);
    // Node-level sampling correlates weights; 200 masks of 40x40 keep the
    // sd of this estimate well under 0.01.
    assert!((frac - 0.8 * 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn iteration_masks_depend_on_index() {
    let specs = architecture(&[30, 30, 2], Activation::Rectifier).unwrap();
    let spec = DropoutSpec::uniform(&specs, 0.0, 0.5).unwrap();
    let a = sample_mask_for_iteration(&spec, &specs, 1, 0).unwrap();
    assert_eq!(a, sample_mask_for_iteration(&spec, &specs, 1, 0).unwrap());
    assert_ne!(a, sample_mask_for_iteration(&spec, &specs, 1, 1).unwrap());
    assert_ne!(a, sample_mask_for_iteration(&spec, &specs, 2, 0).unwrap());
}
