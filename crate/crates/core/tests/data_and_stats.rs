mod common;

use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use resprop::harness::{compare_runs, EpochRow, RunRecord};
use resprop::mnist::{parse_idx, read_idx_file, split_tensors, IdxTensor, SplitOrder, SplitSizes};
use resprop::stats::{wilcoxon_signed_rank, Alternative};

fn idx_tensor() -> impl Strategy<Value = IdxTensor> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
        let total: usize = dims.iter().product();
        prop::collection::vec(any::<u8>(), total).prop_map(move |data| IdxTensor {
            dims: dims.clone(),
            data,
        })
    })
}

fn mnist_like(n: usize, seed: u8) -> (IdxTensor, IdxTensor) {
    let images = IdxTensor {
        dims: vec![n, 28, 28],
        data: (0..n * 784).map(|i| (i as u8).wrapping_mul(seed)).collect(),
    };
    let labels = IdxTensor {
        dims: vec![n],
        data: (0..n).map(|i| (i % 10) as u8).collect(),
    };
    (images, labels)
}

proptest! {
    #[test]
    fn idx_round_trip(t in idx_tensor()) {
        let bytes = t.to_bytes();
        let back = parse_idx(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn truncation_never_panics(t in idx_tensor(), cut in 0usize..64) {
        let bytes = t.to_bytes();
        let cut = cut.min(bytes.len());
        if cut > 0 {
            prop_assert!(parse_idx(&bytes[..bytes.len() - cut]).is_err());
        }
    }
}

#[test]
fn gzip_and_raw_read_the_same() {
    let dir = tempfile::tempdir().unwrap();
    let (images, _) = mnist_like(3, 7);
    let raw = dir.path().join("raw-idx3-ubyte");
    std::fs::write(&raw, images.to_bytes()).unwrap();
    let gz = dir.path().join("raw-idx3-ubyte.gz");
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&images.to_bytes()).unwrap();
    std::fs::write(&gz, enc.finish().unwrap()).unwrap();
    assert_eq!(read_idx_file(&raw).unwrap(), images);
    assert_eq!(read_idx_file(&gz).unwrap(), images);
}

#[test]
fn splits_are_disjoint_prefixes() {
    let (ti, tl) = mnist_like(20, 3);
    let (si, sl) = mnist_like(6, 5);
    let sizes = SplitSizes {
        train: 12,
        validation: 5,
        test: Some(4),
    };
    let s = split_tensors(&ti, &tl, &si, &sl, sizes, SplitOrder::FileOrder).unwrap();
    assert_eq!(
        (s.train.len(), s.validation.len(), s.test.len()),
        (12, 5, 4)
    );
    // Labels cycle 0..9 in file order, so row k carries label k % 10.
    assert_eq!(s.train.labels, (0..12).map(|i| i % 10).collect::<Vec<_>>());
    assert_eq!(
        s.validation.labels,
        (12..17).map(|i| i % 10).collect::<Vec<_>>()
    );
    let row12: Vec<f64> = ti.data[12 * 784..13 * 784]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    assert_eq!(s.validation.images.row(0), row12.as_slice());
    assert!(s
        .train
        .images
        .data()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));

    let shuffled = split_tensors(&ti, &tl, &si, &sl, sizes, SplitOrder::Shuffled(9)).unwrap();
    let mut seen: Vec<usize> = shuffled.train.labels.clone();
    seen.extend(&shuffled.validation.labels);
    assert_eq!(seen.len(), 17);
    assert!(split_tensors(
        &ti,
        &tl,
        &si,
        &sl,
        SplitSizes {
            train: 16,
            validation: 5,
            test: None
        },
        SplitOrder::FileOrder
    )
    .is_err());
}

#[test]
fn wilcoxon_known_cases() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
    assert_eq!(r.p_greater, 0.125);

    let a = [5.0, -1.0, 4.0, 6.0, 3.0];
    let r = wilcoxon_signed_rank(&a, &[0.0; 5]).unwrap();
    let e = common::wilcoxon_by_enumeration(&a, &[0.0; 5]);
    // |d| ranks: 1 -> 1, 3 -> 2, 4 -> 3, 5 -> 4, 6 -> 5; W+ = 14 of 15.
    assert_eq!(r.w_plus, 14.0);
    assert_eq!(r.w_minus, 1.0);
    assert_eq!(
        (r.w_plus, r.p_greater, r.p_two_sided),
        (e.w_plus, e.p_greater, e.p_two_sided)
    );
    assert_eq!(r.p_greater, 2.0 / 32.0);

    // Five pairs can never reach 98% two-sided confidence.
    let best = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert_eq!(best.p_two_sided, 0.0625);
    assert!(!best.significant(0.98, Alternative::TwoSided));
    assert!(best.significant(0.96, Alternative::Greater));
    assert_eq!(
        best.min_attainable_p(Alternative::TwoSided),
        Some(best.p_two_sided)
    );
    assert_eq!(best.min_attainable_p(Alternative::Less), Some(1.0 / 32.0));
}

#[test]
fn large_samples_use_normal_approximation() {
    let a: Vec<f64> = (1..=30).map(f64::from).collect();
    let r = wilcoxon_signed_rank(&a, &vec![0.0; 30]).unwrap();
    assert!(!r.exact);
    assert!(r.p_greater < 1e-5);
    assert!(r.p_less > 0.99);
}

proptest! {
    #[test]
    fn wilcoxon_matches_enumeration(pairs in prop::collection::vec((-4i32..=4, -4i32..=4), 0..=10)) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        let e = common::wilcoxon_by_enumeration(&a, &b);
        prop_assert_eq!(r.n, e.n);
        prop_assert_eq!(r.w_plus, e.w_plus);
        prop_assert_eq!(r.p_greater, e.p_greater);
        prop_assert_eq!(r.p_less, e.p_less);
        prop_assert_eq!(r.p_two_sided, e.p_two_sided);
    }
}

fn record(seed: u64, test: f64) -> RunRecord {
    let rows = vec![EpochRow {
        epoch: 1,
        train_loss: 1.0,
        val_err: test,
        elapsed_ms: 1.0,
    }];
    RunRecord::from_rows("m", seed, rows, Some(test)).unwrap()
}

#[test]
fn compare_runs_pairs_test_errors() {
    let a: Vec<RunRecord> = (0..6).map(|s| record(s, 0.05 + 0.001 * s as f64)).collect();
    let b: Vec<RunRecord> = (0..6)
        .map(|s| record(s, 0.04 + 0.0005 * s as f64))
        .collect();
    let c = compare_runs(&a, &b, 0.98, Alternative::Greater).unwrap();
    assert_eq!(c.wilcoxon.p_greater, 1.0 / 64.0);
    assert!(c.significant);
    assert!(compare_runs(&a, &b[..5], 0.98, Alternative::Greater).is_err());
    assert!(c.report().contains("Wilcoxon"));
    assert!(!c.report().contains("cannot be reached"));
    let five = compare_runs(&a[..5], &b[..5], 0.98, Alternative::TwoSided).unwrap();
    assert!(
        five.report().contains("smallest attainable p is 0.062500"),
        "{}",
        five.report()
    );
}
