//! Hot paths under the global rayon pool and under a one-thread pool.
//! `cargo bench --no-default-features` measures the plain sequential build.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use resprop::dropout::{sample_mask, DropoutSpec};
use resprop::ensemble::train_ensemble;
use resprop::mlp::{architecture, backward, forward, init_params, Activation, InitRule};
use resprop::optim::{dropout_rprop_step, init_rprop_state, rprop_step, RpropConfig};
use resprop::rng::RngStream;
use resprop::stats::wilcoxon_signed_rank;
use resprop::tensor::{matmul, matmul_tn, Matrix};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let n = rayon::current_num_threads();
    let mut out = vec![(
        "threads-1".to_string(),
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap(),
    )];
    if n > 1 {
        out.push((
            format!("threads-{n}"),
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap(),
        ));
    }
    out
}

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed, 0);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

fn bench_matmul(c: &mut Criterion) {
    let a = random(128, 784, 1);
    let b = random(784, 300, 2);
    let g = random(128, 300, 3);
    let mut group = c.benchmark_group("matmul");
    for (name, pool) in pools() {
        let id = format!("{}/{name}", mode());
        group.bench_function(BenchmarkId::new("128x784x300", &id), |bench| {
            pool.install(|| bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap()))
        });
        group.bench_function(BenchmarkId::new("tn 784x128x300", &id), |bench| {
            pool.install(|| bench.iter(|| matmul_tn(black_box(&a), black_box(&g)).unwrap()))
        });
    }
    group.finish();
}

fn bench_training_step(c: &mut Criterion) {
    let specs = architecture(&[784, 300, 100, 10], Activation::Rectifier).unwrap();
    let params = init_params(&specs, &mut RngStream::new(1, 0), InitRule::UniformFanIn).unwrap();
    let x = random(128, 784, 4).map(|v| v.abs());
    let y: Vec<usize> = (0..128).map(|i| i % 10).collect();
    let dropout = DropoutSpec::uniform(&specs, 0.0, 0.5).unwrap();
    let mask = sample_mask(&dropout, &specs, &mut RngStream::new(5, 0)).unwrap();
    let cfg = RpropConfig::classic();
    let pass = forward(&params, &x, Some(&mask)).unwrap();
    let grads = backward(&params, &pass, &y, Some(&mask)).unwrap();

    let mut group = c.benchmark_group("step 784-300-100-10 batch 128");
    for (name, pool) in pools() {
        let id = format!("{}/{name}", mode());
        group.bench_function(BenchmarkId::new("forward+backward", &id), |bench| {
            pool.install(|| {
                bench.iter(|| {
                    let pass = forward(&params, black_box(&x), Some(&mask)).unwrap();
                    backward(&params, &pass, &y, Some(&mask)).unwrap()
                })
            })
        });
    }
    // The update kernels are sequential in both builds.
    group.bench_function("rprop update", |bench| {
        let mut p = params.clone();
        let mut state = init_rprop_state(&p, &cfg);
        bench.iter(|| rprop_step(&mut p, black_box(&grads), &mut state, &cfg).unwrap())
    });
    group.bench_function("dropout rprop update", |bench| {
        let mut p = params.clone();
        let mut state = init_rprop_state(&p, &cfg);
        bench.iter(|| {
            dropout_rprop_step(&mut p, black_box(&grads), &mut state, &cfg, &mask).unwrap()
        })
    });
    group.finish();
}

fn bench_ensemble(c: &mut Criterion) {
    use resprop::ensemble::{Aggregation, EnsembleKind, EnsembleSpec, StackerSpec};
    use resprop::harness::TrainSettings;
    use resprop::mnist::{Dataset, SplitTag};
    use resprop::optim::OptimizerKind;

    let data = |n: usize, seed: u64, split| {
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let images = random(n, 64, seed).map(|v| v.abs());
        Dataset::new(images, labels, split).unwrap()
    };
    let (train, val) = (
        data(256, 1, SplitTag::Train),
        data(64, 2, SplitTag::Validation),
    );
    let mut member = TrainSettings::new(&[64, 32, 10], OptimizerKind::ModRprop, 2).unwrap();
    member.batch_size = 32;
    let spec = EnsembleSpec {
        kind: EnsembleKind::Bagging,
        size: 4,
        member,
        aggregation: Aggregation::MajorityVote,
        stacker: StackerSpec::default(),
    };
    let mut group = c.benchmark_group("bagging 4 members");
    group.sample_size(10);
    for (name, pool) in pools() {
        let id = format!("{}/{name}", mode());
        group.bench_function(BenchmarkId::new("train", &id), |bench| {
            pool.install(|| bench.iter(|| train_ensemble(&spec, &train, &val, None, 1).unwrap()))
        });
    }
    group.finish();
}

fn bench_wilcoxon(c: &mut Criterion) {
    let mut rng = RngStream::new(6, 0);
    let a: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
    let b: Vec<f64> = (0..20).map(|_| rng.next_f64()).collect();
    c.bench_function("wilcoxon exact n=20", |bench| {
        bench.iter(|| wilcoxon_signed_rank(black_box(&a), black_box(&b)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_training_step,
    bench_ensemble,
    bench_wilcoxon
);
criterion_main!(benches);
