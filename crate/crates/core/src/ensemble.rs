//! Bagging and stacking over independently trained networks.
//!
//! Member `m` of an ensemble seeded with `seed` trains with the seed drawn
//! from stream `Member/m`; bagging members resample the training set with
//! the seed drawn from stream `Bootstrap/m`. Members train in parallel and
//! are gathered in member order.
//!
//! Stacking members train on the full training set. The second-space network
//! is fitted on the members' probabilities for the validation set: the first
//! `1 - stacker.holdout` fraction of it is used for fitting and the rest for
//! choosing the stacker's epoch.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::checkpoint;
use crate::dropout::DropoutSpec;
use crate::error::{Error, Result};
use crate::harness::{train_run, ExperimentConfig, KeyValues, RunRecord, TrainSettings};
use crate::mlp::{architecture, predict, Activation, LayerSpec, NetworkParams};
use crate::mnist::{Dataset, SplitTag};
use crate::optim::OptimizerKind;
use crate::par;
use crate::rng::{Purpose, RngStream};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    Bagging,
    Stacking,
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bagging" => Ok(EnsembleKind::Bagging),
            "stacking" => Ok(EnsembleKind::Stacking),
            other => Err(Error::invalid(format!("unknown ensemble kind `{other}`"))),
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleKind::Bagging => "bagging",
            EnsembleKind::Stacking => "stacking",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Modal argmax; ties go to the lowest class index.
    #[default]
    MajorityVote,
    /// Argmax of the mean probabilities.
    ProbabilityAverage,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "majority-vote" => Ok(Aggregation::MajorityVote),
            "probability-average" => Ok(Aggregation::ProbabilityAverage),
            other => Err(Error::invalid(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::MajorityVote => "majority-vote",
            Aggregation::ProbabilityAverage => "probability-average",
        })
    }
}

/// Second-space network settings. Hidden widths are `hidden_per_member`
/// times the member count.
#[derive(Clone, Debug, PartialEq)]
pub struct StackerSpec {
    pub hidden_per_member: (usize, usize),
    pub epoch_cap: usize,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub holdout: f64,
}

impl Default for StackerSpec {
    fn default() -> Self {
        StackerSpec {
            hidden_per_member: (200, 100),
            epoch_cap: 200,
            input_dropout: 0.0,
            hidden_dropout: 0.5,
            holdout: 0.2,
        }
    }
}

impl StackerSpec {
    /// `[N*K, 200N, 100N, K]` with relu hidden layers.
    pub fn architecture(&self, members: usize, classes: usize) -> Result<Vec<LayerSpec>> {
        architecture(
            &[
                members * classes,
                self.hidden_per_member.0 * members,
                self.hidden_per_member.1 * members,
                classes,
            ],
            Activation::Rectifier,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub size: usize,
    /// Member training; `member.epochs` is the member epoch cap.
    pub member: TrainSettings,
    pub aggregation: Aggregation,
    pub stacker: StackerSpec,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("ensemble size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.stacker.holdout) {
            return Err(Error::invalid("stacker holdout must lie in [0, 1)"));
        }
        if self.stacker.epoch_cap == 0 {
            return Err(Error::invalid("stacker epoch cap must be at least 1"));
        }
        self.member.validate()
    }

    /// Consumes ensemble keys (`kind`, `size`, `aggregation`,
    /// `stacker_epochs`, `stacker_input_dropout`, `stacker_hidden_dropout`,
    /// `stacker_holdout`) plus the member training keys.
    pub fn from_keys(kv: &mut KeyValues) -> Result<Self> {
        let member = TrainSettings::from_keys(kv)?;
        Self::from_ensemble_keys(kv, member)
    }

    /// Like [`EnsembleSpec::from_keys`] with the member settings supplied.
    pub fn from_ensemble_keys(kv: &mut KeyValues, member: TrainSettings) -> Result<Self> {
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("cannot parse `{s}`")))
        };
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("cannot parse `{s}`")))
        };
        let kind = kv.require("kind", |s| s.parse::<EnsembleKind>())?;
        let size = kv.require("size", parse_usize)?;
        let aggregation = kv
            .take("aggregation", |s| s.parse::<Aggregation>())?
            .unwrap_or_default();
        let mut stacker = StackerSpec::default();
        if let Some(e) = kv.take("stacker_epochs", parse_usize)? {
            stacker.epoch_cap = e;
        }
        if let Some(v) = kv.take("stacker_input_dropout", parse_f64)? {
            stacker.input_dropout = v;
        }
        if let Some(v) = kv.take("stacker_hidden_dropout", parse_f64)? {
            stacker.hidden_dropout = v;
        }
        if let Some(v) = kv.take("stacker_holdout", parse_f64)? {
            stacker.holdout = v;
        }
        let spec = EnsembleSpec {
            kind,
            size,
            member,
            aggregation,
            stacker,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// An ensemble spec file: experiment keys (data, splits, seeds, output,
/// member training) plus the ensemble keys.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub experiment: ExperimentConfig,
    pub spec: EnsembleSpec,
}

impl EnsembleConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let experiment = ExperimentConfig::from_keys(&mut kv)?;
        let spec = EnsembleSpec::from_ensemble_keys(&mut kv, experiment.train.clone())?;
        kv.finish()?;
        Ok(EnsembleConfig { experiment, spec })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Same-size resample of `dataset`, drawn with replacement.
pub fn bootstrap_resample(dataset: &Dataset, rng: &mut RngStream) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot resample an empty dataset"));
    }
    let n = dataset.len();
    let indices: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
    Ok(dataset.subset(&indices))
}

fn check_members(outputs: &[Matrix]) -> Result<(usize, usize)> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::invalid("no member outputs"))?;
    for o in &outputs[1..] {
        first.check_same_shape("ensemble members", o)?;
    }
    Ok(first.shape())
}

/// Mean of the members' probability matrices.
pub fn average_probabilities(outputs: &[Matrix]) -> Result<Matrix> {
    let (rows, cols) = check_members(outputs)?;
    let mut sum = Matrix::zeros(rows, cols);
    for o in outputs {
        for (s, v) in sum.data_mut().iter_mut().zip(o.data()) {
            *s += v;
        }
    }
    let n = outputs.len() as f64;
    Ok(sum.map(|v| v / n))
}

/// Combined class prediction per row.
pub fn aggregate(outputs: &[Matrix], mode: Aggregation) -> Result<Vec<usize>> {
    let (rows, classes) = check_members(outputs)?;
    match mode {
        Aggregation::ProbabilityAverage => Ok(average_probabilities(outputs)?.argmax_rows()),
        Aggregation::MajorityVote => {
            let votes: Vec<Vec<usize>> = outputs.iter().map(Matrix::argmax_rows).collect();
            Ok((0..rows)
                .map(|r| {
                    let mut counts = vec![0usize; classes];
                    for v in &votes {
                        counts[v[r]] += 1;
                    }
                    let mut best = 0;
                    for (c, &n) in counts.iter().enumerate() {
                        if n > counts[best] {
                            best = c;
                        }
                    }
                    best
                })
                .collect())
        }
    }
}

/// Members' probabilities side by side: `batch x (N * K)`, member order.
pub fn stack_features(outputs: &[Matrix]) -> Result<Matrix> {
    let (rows, cols) = check_members(outputs)?;
    let width = cols * outputs.len();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for o in outputs {
            data.extend_from_slice(o.row(r));
        }
    }
    Matrix::new(rows, width, data)
}

pub fn error_rate(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count() as f64
        / labels.len() as f64
}

#[derive(Clone, Debug)]
pub struct Member {
    pub params: NetworkParams,
    pub record: RunRecord,
    pub seed: u64,
    /// Seed of the bootstrap stream (bagging only).
    pub resample_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Stacker {
    pub params: NetworkParams,
    pub record: RunRecord,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub kind: EnsembleKind,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub members: Vec<Member>,
    pub stacker: Option<Stacker>,
}

impl TrainedEnsemble {
    pub fn member_outputs(&self, images: &Matrix) -> Result<Vec<Matrix>> {
        par::map_slice(&self.members, |m| predict(&m.params, images))
            .into_iter()
            .collect()
    }

    pub fn predict(&self, images: &Matrix) -> Result<Vec<usize>> {
        let outputs = self.member_outputs(images)?;
        match &self.stacker {
            Some(s) => Ok(predict(&s.params, &stack_features(&outputs)?)?.argmax_rows()),
            None => aggregate(&outputs, self.aggregation),
        }
    }

    pub fn error(&self, data: &Dataset) -> Result<f64> {
        Ok(error_rate(&self.predict(&data.images)?, &data.labels))
    }

    /// Each member's own error on `data`, in member order.
    pub fn member_errors(&self, data: &Dataset) -> Result<Vec<f64>> {
        let outputs = self.member_outputs(&data.images)?;
        Ok(outputs
            .iter()
            .map(|o| error_rate(&o.argmax_rows(), &data.labels))
            .collect())
    }

    /// Writes member/stacker checkpoints and `manifest.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut m = String::new();
        writeln!(m, "{MANIFEST_HEADER}").unwrap();
        writeln!(m, "kind = {}", self.kind).unwrap();
        writeln!(m, "aggregation = {}", self.aggregation).unwrap();
        writeln!(m, "size = {}", self.members.len()).unwrap();
        writeln!(m, "seed = {}", self.seed).unwrap();
        for (i, member) in self.members.iter().enumerate() {
            let file = format!("member-{i}.ckpt");
            checkpoint::save(dir.join(&file), &member.params, None)?;
            writeln!(m, "member.{i}.checkpoint = {file}").unwrap();
            writeln!(m, "member.{i}.seed = {}", member.seed).unwrap();
            if let Some(rs) = member.resample_seed {
                writeln!(m, "member.{i}.resample_seed = {rs}").unwrap();
            }
        }
        if let Some(s) = &self.stacker {
            checkpoint::save(dir.join("stacker.ckpt"), &s.params, None)?;
            writeln!(m, "stacker.checkpoint = stacker.ckpt").unwrap();
            writeln!(m, "stacker.seed = {}", s.seed).unwrap();
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, m)?;
        Ok(path)
    }
}

pub const MANIFEST_HEADER: &str = "# ensemble-manifest v1";

/// An ensemble loaded back from its manifest; enough to predict.
#[derive(Clone, Debug)]
pub struct LoadedEnsemble {
    pub kind: EnsembleKind,
    pub aggregation: Aggregation,
    pub members: Vec<NetworkParams>,
    pub member_seeds: Vec<u64>,
    pub resample_seeds: Vec<Option<u64>>,
    pub stacker: Option<NetworkParams>,
}

impl LoadedEnsemble {
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest)?;
        if text.lines().next() != Some(MANIFEST_HEADER) {
            return Err(Error::invalid(format!(
                "{} is not an ensemble manifest",
                manifest.display()
            )));
        }
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut kv = KeyValues::parse(&text)?;
        let parse_u64 = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::invalid(format!("cannot parse `{s}`")))
        };
        let kind = kv.require("kind", |s| s.parse::<EnsembleKind>())?;
        let aggregation = kv.require("aggregation", |s| s.parse::<Aggregation>())?;
        let size = kv.require("size", parse_u64)? as usize;
        let _ = kv.remove("seed");
        let mut members = Vec::with_capacity(size);
        let mut member_seeds = Vec::with_capacity(size);
        let mut resample_seeds = Vec::with_capacity(size);
        for i in 0..size {
            let file = kv.require(&format!("member.{i}.checkpoint"), |s| Ok(s.to_string()))?;
            members.push(checkpoint::load(base.join(file))?.params);
            member_seeds.push(kv.require(&format!("member.{i}.seed"), parse_u64)?);
            resample_seeds.push(kv.take(&format!("member.{i}.resample_seed"), parse_u64)?);
        }
        let stacker = match kv.take("stacker.checkpoint", |s| Ok(s.to_string()))? {
            Some(file) => Some(checkpoint::load(base.join(file))?.params),
            None => None,
        };
        let _ = kv.remove("stacker.seed");
        kv.finish()?;
        Ok(LoadedEnsemble {
            kind,
            aggregation,
            members,
            member_seeds,
            resample_seeds,
            stacker,
        })
    }

    pub fn predict(&self, images: &Matrix) -> Result<Vec<usize>> {
        let outputs: Vec<Matrix> = par::map_slice(&self.members, |p| predict(p, images))
            .into_iter()
            .collect::<Result<_>>()?;
        match &self.stacker {
            Some(s) => Ok(predict(s, &stack_features(&outputs)?)?.argmax_rows()),
            None => aggregate(&outputs, self.aggregation),
        }
    }
}

fn derived_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    RngStream::for_purpose(seed, purpose, index).next_u64()
}

/// Trains the members (in parallel) and, for stacking, the second-space
/// network. Test data is only used to fill in the records' test errors.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    train: &Dataset,
    validation: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
) -> Result<TrainedEnsemble> {
    spec.validate()?;
    let results: Vec<Result<Member>> = par::map_indices(spec.size, |m| {
        let member_seed = derived_seed(seed, Purpose::Member, m as u64);
        let (data, resample_seed) = match spec.kind {
            EnsembleKind::Bagging => {
                let rs = derived_seed(seed, Purpose::Bootstrap, m as u64);
                let resampled = bootstrap_resample(
                    train,
                    &mut RngStream::for_purpose(rs, Purpose::Bootstrap, 0),
                )?;
                (resampled, Some(rs))
            }
            EnsembleKind::Stacking => (train.clone(), None),
        };
        let outcome = train_run(
            &spec.member,
            &data,
            validation,
            test,
            member_seed,
            &format!("member-{m}"),
        )?;
        Ok(Member {
            params: outcome.best_params,
            record: outcome.record,
            seed: member_seed,
            resample_seed,
        })
    });
    let completed = results.iter().filter(|r| r.is_ok()).count();
    let mut members = Vec::with_capacity(spec.size);
    for (m, r) in results.into_iter().enumerate() {
        match r {
            Ok(member) => members.push(member),
            Err(e) => {
                return Err(Error::Member {
                    member: m,
                    completed,
                    source: Box::new(e),
                })
            }
        }
    }

    let mut ensemble = TrainedEnsemble {
        kind: spec.kind,
        aggregation: spec.aggregation,
        seed,
        members,
        stacker: None,
    };
    if spec.kind == EnsembleKind::Stacking {
        ensemble.stacker = Some(train_stacker(spec, &ensemble, validation, test, seed)?);
    }
    Ok(ensemble)
}

fn train_stacker(
    spec: &EnsembleSpec,
    ensemble: &TrainedEnsemble,
    validation: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
) -> Result<Stacker> {
    let features = stack_features(&ensemble.member_outputs(&validation.images)?)?;
    let n = validation.len();
    let n_select = ((n as f64) * spec.stacker.holdout).round() as usize;
    let n_fit = n - n_select;
    if n_fit == 0 {
        return Err(Error::invalid("stacker holdout leaves no fitting data"));
    }
    let fit_idx: Vec<usize> = (0..n_fit).collect();
    let select_idx: Vec<usize> = if n_select == 0 {
        fit_idx.clone()
    } else {
        (n_fit..n).collect()
    };
    let as_dataset = |idx: &[usize], split| -> Result<Dataset> {
        Dataset::new(
            features.select_rows(idx),
            idx.iter().map(|&i| validation.labels[i]).collect(),
            split,
        )
    };
    let fit = as_dataset(&fit_idx, SplitTag::Train)?;
    let select = as_dataset(&select_idx, SplitTag::Validation)?;
    let test_features = match test {
        Some(t) => Some(Dataset::new(
            stack_features(&ensemble.member_outputs(&t.images)?)?,
            t.labels.clone(),
            SplitTag::Test,
        )?),
        None => None,
    };

    let classes = ensemble.members[0].params.classes();
    let specs = spec.stacker.architecture(ensemble.members.len(), classes)?;
    let dropout = DropoutSpec::uniform(
        &specs,
        spec.stacker.input_dropout,
        spec.stacker.hidden_dropout,
    )?;
    let settings = TrainSettings {
        architecture: specs,
        dropout,
        optimizer: OptimizerKind::ModRprop,
        epochs: spec.stacker.epoch_cap,
        ..spec.member.clone()
    };
    let stacker_seed = derived_seed(seed, Purpose::Stacker, 0);
    let outcome = train_run(
        &settings,
        &fit,
        &select,
        test_features.as_ref(),
        stacker_seed,
        "stacker",
    )?;
    Ok(Stacker {
        params: outcome.best_params,
        record: outcome.record,
        seed: stacker_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn one_hot(class: usize, k: usize) -> Matrix {
        Matrix::from_fn(1, k, |_, c| if c == class { 1.0 } else { 0.0 })
    }

    #[test]
    fn majority_vote() {
        let outs = vec![one_hot(2, 10), one_hot(2, 10), one_hot(7, 10)];
        assert_eq!(
            aggregate(&outs, Aggregation::MajorityVote).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn vote_tie_goes_to_lowest_class() {
        let outs = vec![one_hot(1, 3), one_hot(1, 3), one_hot(2, 3), one_hot(2, 3)];
        assert_eq!(
            aggregate(&outs, Aggregation::MajorityVote).unwrap(),
            vec![1]
        );
    }

    #[test]
    fn single_member_is_identity() {
        let p = probs(&[&[0.1, 0.7, 0.2], &[0.5, 0.3, 0.2]]);
        for mode in [Aggregation::MajorityVote, Aggregation::ProbabilityAverage] {
            assert_eq!(
                aggregate(std::slice::from_ref(&p), mode).unwrap(),
                vec![1, 0]
            );
        }
        assert_eq!(stack_features(std::slice::from_ref(&p)).unwrap(), p);
    }

    #[test]
    fn empty_and_ragged_rejected() {
        assert!(aggregate(&[], Aggregation::MajorityVote).is_err());
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(3, 3);
        assert!(stack_features(&[a.clone(), b.clone()]).is_err());
        assert!(aggregate(&[a, b], Aggregation::ProbabilityAverage).is_err());
    }

    #[test]
    fn stack_width_and_block_order() {
        let outs: Vec<Matrix> = (0..3).map(|m| Matrix::filled(4, 10, m as f64)).collect();
        let f = stack_features(&outs).unwrap();
        assert_eq!(f.shape(), (4, 30));
        assert_eq!(f.get(2, 0), 0.0);
        assert_eq!(f.get(2, 10), 1.0);
        assert_eq!(f.get(2, 29), 2.0);
    }

    #[test]
    fn stacker_shape_for_three_members() {
        let specs = StackerSpec::default().architecture(3, 10).unwrap();
        let dims: Vec<(usize, usize)> = specs.iter().map(|s| (s.fan_in, s.fan_out)).collect();
        assert_eq!(dims, vec![(30, 600), (600, 300), (300, 10)]);
    }

    #[test]
    fn singleton_resample() {
        let d = Dataset::new(Matrix::filled(1, 2, 0.5), vec![4], SplitTag::Train).unwrap();
        let r = bootstrap_resample(&d, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(r, d);
        let empty = Dataset::new(Matrix::zeros(0, 2), vec![], SplitTag::Train).unwrap();
        assert!(bootstrap_resample(&empty, &mut RngStream::new(1, 0)).is_err());
    }
}
