//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown and repeated keys are errors. Every key has a default, so an
//! empty file is a valid config (the planted-sparsity MLP fixture).
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | master seed; data, init and shuffling seeds derive from it |
//! | `model.input` | `64` | sample shape, `N` or `CxHxW` |
//! | `model.layers` | `dense:64:32, relu, dense:32:4` | comma-separated layer list |
//! | `data.source` | `planted` | `planted`, `moons`, `teacher` or `files` |
//! | `data.features` | 64 | planted / teacher input width |
//! | `data.informative` | 8 | planted label-bearing coordinates |
//! | `data.classes` | 4 | planted / teacher classes |
//! | `data.hidden` | 16 | teacher hidden width |
//! | `data.noise` | 0.1 | moons jitter |
//! | `data.train_examples` | 2048 | generated training examples |
//! | `data.test_examples` | 1024 | generated test examples |
//! | `data.train_file`, `data.test_file` | | dataset files for `files` |
//! | `data.shape` | | optional reshape of each sample, e.g. `1x8x8` |
//! | `train.epochs` | 60 | baseline epochs |
//! | `train.batch_size` | 64 | |
//! | `train.learning_rate` | 0.003 | |
//! | `prune.lambda` | 1e-7 | group penalty weight |
//! | `prune.rho` | 1e-3 | consensus penalty weight |
//! | `prune.iterations` | 300 | primal-proximal iterations `T` |
//! | `prune.primal_epochs` | 1 | epochs per primal step |
//! | `prune.learning_rate` | 1e-4 | Adam step for primal step and retraining |
//! | `prune.batch_size` | 64 | |
//! | `prune.epsilon` | 0 | relative near-zero threshold for mask extraction |
//! | `prune.retrain_epochs` | 300 | |
//! | `prune.reset_adam` | false | fresh Adam moments every iteration |
//! | `direct.lambda` | `prune.lambda` | penalty weight of the direct baseline |
//! | `direct.match_rate` | | `none`, `prune` (match this run's report) or a rate |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::data_io::DataSpec;
use crate::model::{ActShape, LayerSpec};
use crate::pruner::HyperParams;

/// How the direct baseline picks its cut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatchRate {
    /// Same ε rule as the primal-proximal path.
    None,
    /// Compression of the primal-proximal report in the same run directory.
    Prune,
    Rate(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub input: ActShape,
    pub layers: Vec<LayerSpec>,
    pub data: DataSpec,
    pub data_shape: Option<ActShape>,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_learning_rate: f64,
    pub prune: HyperParams,
    pub direct_lambda: f64,
    pub direct_match: MatchRate,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_str("").expect("defaults are valid")
    }
}

/// Sub-seed for one consumer of randomness, so that data, initialisation
/// and shuffling draw from unrelated streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_DATA: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_PRUNE: u64 = 4;

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(map)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut k = Keys(parse_lines(text)?);
        let seed = k.get("seed", 0u64)?;
        let input = k.get("model.input", ActShape::Flat(64))?;
        let layers = match k.raw("model.layers") {
            None => vec![
                LayerSpec::Dense { inputs: 64, outputs: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 32, outputs: 4 },
            ],
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<LayerSpec>()
                        .map_err(|e| Error::Config(format!("`model.layers`: {e}")))
                })
                .collect::<Result<_>>()?,
        };
        let source = k.get("data.source", "planted".to_string())?;
        let train = k.get("data.train_examples", 2048usize)?;
        let test = k.get("data.test_examples", 1024usize)?;
        let data = match source.as_str() {
            "planted" => DataSpec::Planted {
                features: k.get("data.features", 64)?,
                informative: k.get("data.informative", 8)?,
                classes: k.get("data.classes", 4)?,
                train,
                test,
            },
            "moons" => DataSpec::Moons {
                noise: k.get("data.noise", 0.1)?,
                train,
                test,
            },
            "teacher" => DataSpec::Teacher {
                features: k.get("data.features", 64)?,
                hidden: k.get("data.hidden", 16)?,
                classes: k.get("data.classes", 4)?,
                train,
                test,
            },
            "files" => DataSpec::Files {
                train: k.required::<PathBuf>("data.train_file")?,
                test: k.required::<PathBuf>("data.test_file")?,
            },
            other => return Err(Error::Config(format!("unknown data.source `{other}`"))),
        };
        let data_shape = match k.raw("data.shape") {
            None => None,
            Some(v) => Some(
                v.parse::<ActShape>()
                    .map_err(|e| Error::Config(format!("`data.shape`: {e}")))?,
            ),
        };
        let d = HyperParams::default();
        let lambda = k.get("prune.lambda", d.lambda)?;
        let prune = HyperParams {
            lambda,
            rho: k.get("prune.rho", d.rho)?,
            iterations: k.get("prune.iterations", d.iterations)?,
            primal_epochs: k.get("prune.primal_epochs", d.primal_epochs)?,
            learning_rate: k.get("prune.learning_rate", d.learning_rate)?,
            zero_epsilon: k.get("prune.epsilon", d.zero_epsilon)?,
            retrain_epochs: k.get("prune.retrain_epochs", d.retrain_epochs)?,
            batch_size: k.get("prune.batch_size", d.batch_size)?,
            seed: derive_seed(seed, STREAM_PRUNE),
            reset_adam: k.get("prune.reset_adam", d.reset_adam)?,
        };
        let direct_lambda = k.get("direct.lambda", lambda)?;
        let direct_match = match k.raw("direct.match_rate").as_deref() {
            None | Some("none") => MatchRate::None,
            Some("prune") => MatchRate::Prune,
            Some(v) => match v.parse::<f64>() {
                Ok(r) if r >= 1.0 && r.is_finite() => MatchRate::Rate(r),
                _ => {
                    return Err(Error::Config(format!(
                        "`direct.match_rate`: expected none, prune or a rate >= 1, got `{v}`"
                    )))
                }
            },
        };
        let cfg = ExperimentConfig {
            seed,
            input,
            layers,
            data,
            data_shape,
            train_epochs: k.get("train.epochs", 60)?,
            train_batch_size: k.get("train.batch_size", 64)?,
            train_learning_rate: k.get("train.learning_rate", 3e-3)?,
            prune,
            direct_lambda,
            direct_match,
        };
        if let Some(key) = k.0.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)?.parse()
    }

    /// Replaces the master seed and every seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.prune.seed = derive_seed(seed, STREAM_PRUNE);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.prune
            .validate()
            .map_err(|e| Error::Config(format!("prune: {e}")))?;
        if !(self.direct_lambda >= 0.0 && self.direct_lambda.is_finite()) {
            return Err(Error::Config("direct.lambda must be finite and >= 0".into()));
        }
        if self.train_batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.train_learning_rate > 0.0 && self.train_learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        Ok(())
    }

    fn data_entries(&self) -> Vec<(&'static str, String)> {
        let mut e = Vec::new();
        match &self.data {
            DataSpec::Planted {
                features,
                informative,
                classes,
                train,
                test,
            } => {
                e.push(("data.source", "planted".to_string()));
                e.push(("data.features", features.to_string()));
                e.push(("data.informative", informative.to_string()));
                e.push(("data.classes", classes.to_string()));
                e.push(("data.train_examples", train.to_string()));
                e.push(("data.test_examples", test.to_string()));
            }
            DataSpec::Moons { noise, train, test } => {
                e.push(("data.source", "moons".to_string()));
                e.push(("data.noise", noise.to_string()));
                e.push(("data.train_examples", train.to_string()));
                e.push(("data.test_examples", test.to_string()));
            }
            DataSpec::Teacher {
                features,
                hidden,
                classes,
                train,
                test,
            } => {
                e.push(("data.source", "teacher".to_string()));
                e.push(("data.features", features.to_string()));
                e.push(("data.hidden", hidden.to_string()));
                e.push(("data.classes", classes.to_string()));
                e.push(("data.train_examples", train.to_string()));
                e.push(("data.test_examples", test.to_string()));
            }
            DataSpec::Files { train, test } => {
                e.push(("data.source", "files".to_string()));
                e.push(("data.train_file", train.display().to_string()));
                e.push(("data.test_file", test.display().to_string()));
            }
        }
        if let Some(s) = self.data_shape {
            e.push(("data.shape", s.to_string()));
        }
        e
    }

    /// Keys that determine the baseline model: seed, model, data and
    /// baseline training.
    fn base_entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![
            ("seed", self.seed.to_string()),
            ("model.input", self.input.to_string()),
            (
                "model.layers",
                self.layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            ),
            ("train.epochs", self.train_epochs.to_string()),
            ("train.batch_size", self.train_batch_size.to_string()),
            ("train.learning_rate", self.train_learning_rate.to_string()),
        ];
        e.extend(self.data_entries());
        e
    }

    /// Every key with its effective value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.prune;
        let mut e = self.base_entries();
        e.extend([
            ("prune.lambda", p.lambda.to_string()),
            ("prune.rho", p.rho.to_string()),
            ("prune.iterations", p.iterations.to_string()),
            ("prune.primal_epochs", p.primal_epochs.to_string()),
            ("prune.learning_rate", p.learning_rate.to_string()),
            ("prune.batch_size", p.batch_size.to_string()),
            ("prune.epsilon", p.zero_epsilon.to_string()),
            ("prune.retrain_epochs", p.retrain_epochs.to_string()),
            ("prune.reset_adam", p.reset_adam.to_string()),
            ("direct.lambda", self.direct_lambda.to_string()),
            (
                "direct.match_rate",
                match self.direct_match {
                    MatchRate::None => "none".to_string(),
                    MatchRate::Prune => "prune".to_string(),
                    MatchRate::Rate(r) => r.to_string(),
                },
            ),
        ]);
        e.sort();
        e
    }

    /// Sorted `key = value` lines; parses back to an equal config.
    pub fn canonical(&self) -> String {
        render(self.entries())
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        digest(&self.canonical())
    }

    /// Hash of the keys a baseline checkpoint depends on. Pruning runs
    /// refuse baselines whose base hash differs.
    pub fn base_hash(&self) -> String {
        let mut e = self.base_entries();
        e.sort();
        digest(&render(e))
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_DATA)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_INIT)
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_TRAIN)
    }

    /// Hyper-parameters for the direct baseline: the pruning ones with the
    /// direct penalty weight.
    pub fn direct_hyper_params(&self) -> HyperParams {
        HyperParams {
            lambda: self.direct_lambda,
            ..self.prune.clone()
        }
    }
}

fn render(entries: Vec<(&'static str, String)>) -> String {
    entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.prune.lambda, 1e-7);
        assert_eq!(c.prune.rho, 1e-3);
        assert_eq!(c.prune.iterations, 300);
        assert_eq!(c.prune.retrain_epochs, 300);
        assert_eq!(c.layers.len(), 3);
    }

    #[test]
    fn canonical_round_trips() {
        let text = "
            # a comment
            seed = 7
            model.input = 1x8x8
            model.layers = conv:1:4:3:3:1:1, relu, flatten, dense:256:4
            data.shape = 1x8x8
            prune.lambda = 0.01   # inline comment
            prune.reset_adam = true
            direct.match_rate = 2.5
        ";
        let c: ExperimentConfig = text.parse().unwrap();
        let again: ExperimentConfig = c.canonical().parse().unwrap();
        assert_eq!(again, c);
        assert_eq!(again.canonical(), c.canonical());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn prune_keys_leave_base_hash_alone() {
        let a: ExperimentConfig = "prune.lambda = 0.1".parse().unwrap();
        let b: ExperimentConfig = "prune.lambda = 0.2".parse().unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.base_hash(), b.base_hash());
        let c: ExperimentConfig = "train.epochs = 3".parse().unwrap();
        assert_ne!(a.base_hash(), c.base_hash());
        assert_ne!(a.clone().with_seed(1).base_hash(), a.base_hash());
    }

    #[test]
    fn malformed_configs_rejected() {
        for bad in [
            "nonsense",
            "bogus.key = 1",
            "seed = 1\nseed = 2",
            "seed = minus one",
            "prune.rho = 0",
            "data.source = cifar",
            "data.source = files",
            "model.layers = dense:1",
            "direct.match_rate = 0.5",
        ] {
            assert!(matches!(bad.parse::<ExperimentConfig>(), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let c = ExperimentConfig::default();
        let seeds = [c.data_seed(), c.init_seed(), c.train_seed(), c.prune.seed];
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
