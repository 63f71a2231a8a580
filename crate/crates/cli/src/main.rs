use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use resprop::checkpoint;
use resprop::ensemble::{train_ensemble, EnsembleConfig, LoadedEnsemble, MANIFEST_HEADER};
use resprop::gradcheck;
use resprop::harness::{
    compare_runs, read_record, run_dir, summary_table, train_run, write_record, write_run_outputs,
    EpochRow, ExperimentConfig, RunRecord, SummaryRow,
};
use resprop::mlp::{architecture, init_params, parse_sizes, predict, Activation, InitRule};
use resprop::mnist::{dataset_from_idx, load_splits, read_idx_file, Dataset, MnistPaths, SplitTag};
use resprop::rng::RngStream;
use resprop::stats::Alternative;
use resprop::tensor::Matrix;

#[derive(Parser)]
#[command(
    name = "resprop",
    version,
    about = "Rprop and dropout experiments on MNIST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeded runs from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's `seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classification error of a checkpoint or ensemble manifest.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Directory with the MNIST files.
        #[arg(long)]
        data: PathBuf,
        /// Which file pair to score: `test` or `train`.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train a bagging or stacking ensemble from a spec file.
    Ensemble {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Summaries and a Wilcoxon test over two directories of runs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0.98)]
        confidence: f64,
        /// two-sided, greater (a worse than b) or less.
        #[arg(long, default_value = "two-sided")]
        alternative: Alternative,
    },
    /// Check backprop against central differences on a random net.
    Gradcheck {
        /// Layer sizes, e.g. 10-8-3.
        #[arg(long)]
        arch: String,
        /// Worst allowed relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value = "tanh")]
        activation: Activation,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out).map(|_| true),
        Command::Evaluate { model, data, split } => evaluate(&model, &data, &split).map(|_| true),
        Command::Ensemble { spec } => ensemble(&spec).map(|_| true),
        Command::Compare {
            a,
            b,
            confidence,
            alternative,
        } => compare(&a, &b, confidence, alternative).map(|_| true),
        Command::Gradcheck {
            arch,
            tol,
            activation,
            step,
            batch,
            seed,
        } => gradcheck(&arch, tol, activation, step, batch, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg =
        ExperimentConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let paths = MnistPaths::in_dir(&cfg.data_dir);
    let splits = load_splits(&paths, cfg.split_sizes, cfg.split_order)
        .with_context(|| format!("loading MNIST from {}", cfg.data_dir.display()))?;
    info!(
        "{} train / {} validation / {} test examples",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    let mut records = Vec::with_capacity(seeds.len());
    for s in seeds {
        let outcome = train_run(
            &cfg.train,
            &splits.train,
            &splits.validation,
            Some(&splits.test),
            s,
            &cfg.name,
        )?;
        let dir = run_dir(&out_dir, s);
        write_run_outputs(&dir, &outcome)?;
        info!("seed {s}: wrote {}", dir.display());
        records.push(outcome.record);
    }
    let table = summary_table(&[SummaryRow::from_records(&records)?]);
    std::fs::write(out_dir.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn load_pair(data: &Path, split: &str) -> Result<Dataset> {
    let paths = MnistPaths::in_dir(data);
    let (images, labels, tag) = match split {
        "test" => (&paths.test_images, &paths.test_labels, SplitTag::Test),
        "train" => (&paths.train_images, &paths.train_labels, SplitTag::Train),
        other => bail!("unknown split `{other}`, expected test or train"),
    };
    let images = read_idx_file(images).with_context(|| format!("reading {}", images.display()))?;
    let labels = read_idx_file(labels).with_context(|| format!("reading {}", labels.display()))?;
    Ok(dataset_from_idx(&images, &labels, tag)?)
}

fn is_manifest(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|t| t.lines().next() == Some(MANIFEST_HEADER))
        .unwrap_or(false)
}

fn evaluate(model: &Path, data: &Path, split: &str) -> Result<()> {
    let dataset = load_pair(data, split)?;
    let predictions = if is_manifest(model) {
        LoadedEnsemble::load(model)?.predict(&dataset.images)?
    } else {
        let ckpt =
            checkpoint::load(model).with_context(|| format!("reading {}", model.display()))?;
        predict(&ckpt.params, &dataset.images)?.argmax_rows()
    };
    let wrong = predictions
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, y)| p != y)
        .count();
    println!(
        "{split} error: {:.2}% ({wrong} of {} examples)",
        100.0 * wrong as f64 / dataset.len() as f64,
        dataset.len()
    );
    Ok(())
}

fn ensemble(spec_path: &Path) -> Result<()> {
    let EnsembleConfig { experiment, spec } = EnsembleConfig::load(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let splits = load_splits(
        &MnistPaths::in_dir(&experiment.data_dir),
        experiment.split_sizes,
        experiment.split_order,
    )?;
    let label = format!("{}-{}", spec.kind, spec.size);
    let mut records = Vec::new();
    for &seed in &experiment.seeds {
        let start = Instant::now();
        let trained = train_ensemble(
            &spec,
            &splits.train,
            &splits.validation,
            Some(&splits.test),
            seed,
        )?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let dir = run_dir(&experiment.out_dir, seed);
        trained.save(&dir)?;
        let member_errors = trained.member_errors(&splits.test)?;
        let test_error = trained.error(&splits.test)?;
        // One summary row per ensemble: validation and test error of the
        // combined model, member epoch cap, total training time.
        let first_member = &trained.members[0].record;
        let row = EpochRow {
            epoch: spec.member.epochs,
            train_loss: first_member.rows.last().map_or(0.0, |r| r.train_loss),
            val_err: trained.error(&splits.validation)?,
            elapsed_ms,
        };
        let record = RunRecord::from_rows(label.clone(), seed, vec![row], Some(test_error))?;
        write_record(&dir, &record)?;
        let members: Vec<String> = member_errors
            .iter()
            .map(|e| format!("{:.2}%", e * 100.0))
            .collect();
        println!(
            "seed {seed}: ensemble test error {:.2}%, members [{}]",
            test_error * 100.0,
            members.join(", ")
        );
        records.push(record);
    }
    print!("{}", summary_table(&[SummaryRow::from_records(&records)?]));
    Ok(())
}

/// Records under `dir/seed-*`, ordered by seed.
fn records_in(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let is_run = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("seed-"));
        if is_run && path.join("record.txt").exists() {
            records
                .push(read_record(&path).with_context(|| format!("reading {}", path.display()))?);
        }
    }
    if records.is_empty() {
        bail!("no seed-* runs with record.txt under {}", dir.display());
    }
    records.sort_by_key(|r| r.seed);
    Ok(records)
}

fn compare(a: &Path, b: &Path, confidence: f64, alternative: Alternative) -> Result<()> {
    if !(0.0..1.0).contains(&confidence) {
        bail!("confidence must lie in [0, 1)");
    }
    let (ra, rb) = (records_in(a)?, records_in(b)?);
    let comparison = compare_runs(&ra, &rb, confidence, alternative)?;
    print!("{}", comparison.report());
    Ok(())
}

fn gradcheck(
    arch: &str,
    tol: f64,
    activation: Activation,
    step: f64,
    batch: usize,
    seed: u64,
) -> Result<bool> {
    let sizes = parse_sizes(arch)?;
    let specs = architecture(&sizes, activation)?;
    let mut rng = RngStream::new(seed, 0);
    let params = init_params(&specs, &mut rng, InitRule::UniformFanIn)?;
    let input = Matrix::from_fn(batch, sizes[0], |_, _| rng.uniform(-1.0, 1.0));
    let classes = *sizes.last().expect("parse_sizes rejects empty");
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
    let report = gradcheck::check(&params, &input, &labels, None, step)?;
    let ok = report.max_relative_error <= tol;
    println!(
        "{} coordinates, worst relative error {:.3e} at layer {} index {}, {:.2}% within {tol:e}: {}",
        report.coordinates,
        report.max_relative_error,
        report.worst.0,
        report.worst.1,
        100.0 * report.fraction_within(tol),
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}
