//! One training run: minibatch epochs, per-epoch validation, selection of
//! the best-validation checkpoint and its test error.
//!
//! Random streams per run seed: `Init/0` for the weights, `Shuffle/e` for
//! the example order of epoch `e`, `Dropout/t` for the mask of optimizer
//! step `t` (counted across epochs).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;

use crate::checkpoint;
use crate::dropout::{sample_mask_for_iteration, DropoutMask};
use crate::error::{Error, Result};
use crate::mlp::{
    backward, classification_error, forward, init_params, nll_loss, predict, NetworkParams,
};
use crate::mnist::Dataset;
use crate::optim::{Optimizer, OptimizerKind, RpropState};
use crate::rng::{Purpose, RngStream};

use super::config::TrainSettings;
use super::metrics::{write_record, EpochRow, RunRecord};

/// Source of the `elapsed_ms` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Clock {
    /// Wall-clock milliseconds around the training loop (data loading excluded).
    #[default]
    Wall,
    /// One unit per completed epoch; makes metrics files byte-reproducible.
    Epochs,
}

impl FromStr for Clock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "wall" => Ok(Clock::Wall),
            "epochs" => Ok(Clock::Epochs),
            other => Err(Error::invalid(format!("unknown clock `{other}`"))),
        }
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clock::Wall => "wall",
            Clock::Epochs => "epochs",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    /// Parameters from the best-validation epoch.
    pub best_params: NetworkParams,
    /// Rprop state at the best-validation epoch.
    pub best_rprop_state: Option<RpropState>,
}

/// Classification error of `params` on `data`.
pub fn evaluate_error(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    Ok(classification_error(
        &predict(params, &data.images)?,
        &data.labels,
    ))
}

/// Trains on `train` for `settings.epochs` epochs, keeping the parameters with
/// the lowest validation error (earliest on ties) and, when `test` is given,
/// scoring only that checkpoint on it.
pub fn train_run(
    settings: &TrainSettings,
    train: &Dataset,
    validation: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
    label: &str,
) -> Result<RunOutcome> {
    settings.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be non-empty",
        ));
    }
    let specs = &settings.architecture;
    let mut params = init_params(
        specs,
        &mut RngStream::for_purpose(seed, Purpose::Init, 0),
        settings.init,
    )?;
    let mut optimizer = Optimizer::new(settings.optimizer, settings.sgd, settings.rprop, &params)?;
    let use_mask = !settings.dropout.is_disabled() || settings.optimizer == OptimizerKind::ModRprop;

    let start = Instant::now();
    let mut rows = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, NetworkParams, Option<RpropState>)> = None;
    let mut step: u64 = 0;
    let mut last_ms = 0.0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=settings.epochs {
        RngStream::for_purpose(seed, Purpose::Shuffle, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let batch = train.subset(chunk);
            let mask: Option<DropoutMask> = if use_mask {
                Some(sample_mask_for_iteration(
                    &settings.dropout,
                    specs,
                    seed,
                    step,
                )?)
            } else {
                None
            };
            let pass = forward(&params, &batch.images, mask.as_ref())?;
            let loss = nll_loss(&pass.probabilities, &batch.labels)?;
            if !loss.is_finite() || !pass.probabilities.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = backward(&params, &pass, &batch.labels, mask.as_ref())?;
            optimizer.step(&mut params, &grads, mask.as_ref())?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let val_err = evaluate_error(&params, validation)?;
        let elapsed_ms = match settings.clock {
            // Strictly increasing even when an epoch is faster than 1 µs of resolution.
            Clock::Wall => (start.elapsed().as_secs_f64() * 1e3).max(last_ms + 1e-3),
            Clock::Epochs => epoch as f64,
        };
        last_ms = elapsed_ms;
        rows.push(EpochRow {
            epoch,
            train_loss,
            val_err,
            elapsed_ms,
        });
        info!(
            "{label} seed {seed} epoch {epoch}: loss {train_loss:.4} val_err {:.2}%",
            val_err * 100.0
        );
        if best.as_ref().is_none_or(|(b, _, _)| val_err < *b) {
            best = Some((val_err, params.clone(), optimizer.rprop_state().cloned()));
        }
    }

    let (_, best_params, best_rprop_state) = best.expect("at least one epoch");
    let test_error = test.map(|t| evaluate_error(&best_params, t)).transpose()?;
    let record = RunRecord::from_rows(label, seed, rows, test_error)?;
    Ok(RunOutcome {
        record,
        best_params,
        best_rprop_state,
    })
}

/// Output directory of one seed's run.
pub fn run_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Writes `metrics.csv`, `record.txt` and `model.ckpt` for one run.
pub fn write_run_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    write_record(dir, &outcome.record)?;
    checkpoint::save(
        dir.join("model.ckpt"),
        &outcome.best_params,
        outcome.best_rprop_state.as_ref(),
    )
}
