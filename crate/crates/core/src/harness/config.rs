//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known to the consumer; unknown or repeated keys are errors.
//!
//! Experiment keys (defaults in parentheses):
//!
//! ```text
//! name             label in summary tables (optimizer name)
//! architecture     node counts, e.g. 784-300-100-10 (required)
//! activation       hidden activation: relu | logistic | tanh (relu)
//! init             uniform-fan-in | fixed-range:R (uniform-fan-in)
//! input_dropout    rate on input nodes (0)
//! hidden_dropout   rate on every hidden layer (0.5)
//! dropout_rates    explicit comma list, input first; excludes the two above
//! optimizer        sgd | rprop | mod-rprop (mod-rprop)
//! learning_rate    SGD step (0.01)
//! eta_plus, eta_minus, delta_max, delta_min, delta_init
//!                  Rprop parameters (1.2, 0.5, 50, 1e-6, 0.1)
//! epochs           epoch cap (required)
//! batch_size       minibatch size (128)
//! seeds            comma list of run seeds (1)
//! data_dir         directory with the four MNIST files (required)
//! train_size       training examples (50000)
//! validation_size  validation examples (10000)
//! test_size        test examples, or `all` (all)
//! split            file-order | shuffled:SEED (file-order)
//! out_dir          output directory (runs)
//! clock            wall | epochs (wall)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dropout::DropoutSpec;
use crate::error::{Error, Result};
use crate::mlp::{architecture, parse_sizes, Activation, InitRule, LayerSpec};
use crate::mnist::{SplitOrder, SplitSizes};
use crate::optim::{OptimizerKind, RpropConfig, SgdConfig};

use super::train::Clock;

/// Parsed `key = value` pairs with their line numbers.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    reason: "empty key".into(),
                });
            }
            if entries
                .insert(key.clone(), (line, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn remove(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    /// Removes and parses `key`, attaching the line number to errors.
    pub fn take<T>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T>,
    ) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => parse(&v).map(Some).map_err(|e| Error::Config {
                line,
                reason: format!("{key}: {e}"),
            }),
        }
    }

    pub fn require<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
        self.take(key, parse)?.ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("missing required key `{key}`"),
        })
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config {
                line,
                reason: format!("unknown key `{key}`"),
            }),
        }
    }
}

pub(crate) fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::invalid(format!("cannot parse `{s}`")))
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(|t| num(t.trim())).collect()
}

/// Everything a single training run needs besides data and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub architecture: Vec<LayerSpec>,
    pub init: InitRule,
    pub dropout: DropoutSpec,
    pub optimizer: OptimizerKind,
    pub sgd: SgdConfig,
    pub rprop: RpropConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub clock: Clock,
}

impl TrainSettings {
    /// `sizes` with relu hidden layers, hidden dropout 0.5, no input dropout.
    pub fn new(sizes: &[usize], optimizer: OptimizerKind, epochs: usize) -> Result<Self> {
        let specs = architecture(sizes, Activation::Rectifier)?;
        let dropout = DropoutSpec::uniform(&specs, 0.0, 0.5)?;
        Ok(TrainSettings {
            architecture: specs,
            init: InitRule::UniformFanIn,
            dropout,
            optimizer,
            sgd: SgdConfig::default(),
            rprop: RpropConfig::classic(),
            epochs,
            batch_size: 128,
            clock: Clock::Wall,
        })
    }

    pub fn validate(&self) -> Result<()> {
        crate::mlp::validate_architecture(&self.architecture)?;
        if self.epochs == 0 {
            return Err(Error::invalid("epoch cap must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.dropout.rates().len() != self.architecture.len() {
            return Err(Error::invalid(format!(
                "{} dropout rates for {} non-output layers",
                self.dropout.rates().len(),
                self.architecture.len()
            )));
        }
        match self.optimizer {
            OptimizerKind::Sgd => self.sgd.validate(),
            _ => self.rprop.validate(),
        }
    }

    /// Consumes the training keys from `kv`.
    pub fn from_keys(kv: &mut KeyValues) -> Result<Self> {
        let sizes = kv.require("architecture", parse_sizes)?;
        let activation = kv
            .take("activation", |s| s.parse::<Activation>())?
            .unwrap_or(Activation::Rectifier);
        let specs = architecture(&sizes, activation)?;
        let init = kv
            .take("init", |s| s.parse::<InitRule>())?
            .unwrap_or(InitRule::UniformFanIn);

        let input = kv.take("input_dropout", num::<f64>)?;
        let hidden = kv.take("hidden_dropout", num::<f64>)?;
        let explicit = kv.take("dropout_rates", list::<f64>)?;
        let dropout = match explicit {
            Some(rates) => {
                if input.is_some() || hidden.is_some() {
                    return Err(Error::invalid(
                        "dropout_rates cannot be combined with input_dropout/hidden_dropout",
                    ));
                }
                DropoutSpec::new(rates)?
            }
            None => DropoutSpec::uniform(&specs, input.unwrap_or(0.0), hidden.unwrap_or(0.5))?,
        };

        let optimizer = kv
            .take("optimizer", |s| s.parse::<OptimizerKind>())?
            .unwrap_or(OptimizerKind::ModRprop);
        let batch_size = kv.take("batch_size", num::<usize>)?.unwrap_or(128);
        let mut sgd = SgdConfig {
            minibatch_size: batch_size,
            ..SgdConfig::default()
        };
        if let Some(lr) = kv.take("learning_rate", num::<f64>)? {
            sgd.learning_rate = lr;
        }
        let mut rprop = RpropConfig::classic();
        for (key, slot) in [
            ("eta_plus", &mut rprop.eta_plus),
            ("eta_minus", &mut rprop.eta_minus),
            ("delta_max", &mut rprop.delta_max),
            ("delta_min", &mut rprop.delta_min),
            ("delta_init", &mut rprop.delta_init),
        ] {
            if let Some(v) = kv.take(key, num::<f64>)? {
                *slot = v;
            }
        }
        let epochs = kv.require("epochs", num::<usize>)?;
        let clock = kv
            .take("clock", |s| s.parse::<Clock>())?
            .unwrap_or(Clock::Wall);
        let settings = TrainSettings {
            architecture: specs,
            init,
            dropout,
            optimizer,
            sgd,
            rprop,
            epochs,
            batch_size,
            clock,
        };
        settings.validate()?;
        Ok(settings)
    }
}

/// A full experiment: training settings plus seeds, data and output location.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub train: TrainSettings,
    pub seeds: Vec<u64>,
    pub data_dir: PathBuf,
    pub split_sizes: SplitSizes,
    pub split_order: SplitOrder,
    pub out_dir: PathBuf,
}

fn parse_split_order(s: &str) -> Result<SplitOrder> {
    if s == "file-order" {
        return Ok(SplitOrder::FileOrder);
    }
    if let Some(seed) = s.strip_prefix("shuffled:") {
        return Ok(SplitOrder::Shuffled(num(seed)?));
    }
    Err(Error::invalid(format!("unknown split `{s}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::from_keys(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Consumes the experiment keys, leaving any others in `kv`.
    pub fn from_keys(kv: &mut KeyValues) -> Result<Self> {
        let train = TrainSettings::from_keys(kv)?;
        let name = kv
            .take("name", |s| Ok(s.to_string()))?
            .unwrap_or_else(|| train.optimizer.name().to_string());
        let seeds = kv.take("seeds", list::<u64>)?.unwrap_or_else(|| vec![1]);
        if seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let data_dir = kv.require("data_dir", |s| Ok(PathBuf::from(s)))?;
        let train_size = kv.take("train_size", num::<usize>)?.unwrap_or(50_000);
        let validation_size = kv.take("validation_size", num::<usize>)?.unwrap_or(10_000);
        let test = kv
            .take("test_size", |s| {
                if s == "all" {
                    Ok(None)
                } else {
                    num::<usize>(s).map(Some)
                }
            })?
            .unwrap_or(None);
        let split_order = kv.take("split", parse_split_order)?.unwrap_or_default();
        let out_dir = kv
            .take("out_dir", |s| Ok(PathBuf::from(s)))?
            .unwrap_or_else(|| PathBuf::from("runs"));
        if validation_size == 0 {
            return Err(Error::invalid("validation_size must be at least 1"));
        }
        Ok(ExperimentConfig {
            name,
            train,
            seeds,
            data_dir,
            split_sizes: SplitSizes {
                train: train_size,
                validation: validation_size,
                test,
            },
            split_order,
            out_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
# desk-scale run
architecture = 784-300-100-10
optimizer = rprop
epochs = 30
seeds = 1, 2, 3
data_dir = data/mnist-desk
train_size = 5000
validation_size = 1000
";

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(cfg.name, "rprop");
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.train.architecture.len(), 3);
        assert_eq!(cfg.train.dropout.rates(), &[0.0, 0.5, 0.5]);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.split_sizes.test, None);
        assert_eq!(cfg.train.clock, Clock::Wall);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let text = format!("{BASIC}momentum = 0.9\n");
        match ExperimentConfig::parse(&text) {
            Err(Error::Config { line, reason }) => {
                assert_eq!(line, 10);
                assert!(reason.contains("momentum"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("just words").is_err());
    }

    #[test]
    fn conflicting_dropout_keys() {
        let text = format!("{BASIC}dropout_rates = 0,0.5,0.5\nhidden_dropout = 0.5\n");
        assert!(ExperimentConfig::parse(&text).is_err());
        let ok = format!("{BASIC}dropout_rates = 0.2,0.5,0.25\n");
        assert_eq!(
            ExperimentConfig::parse(&ok).unwrap().train.dropout.rates(),
            &[0.2, 0.5, 0.25]
        );
    }

    #[test]
    fn missing_required_key() {
        assert!(ExperimentConfig::parse("architecture = 4-2\nepochs = 1\n").is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let text = BASIC.replace("epochs = 30", "epochs = 0");
        assert!(ExperimentConfig::parse(&text).is_err());
    }
}
