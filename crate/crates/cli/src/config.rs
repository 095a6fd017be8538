//! Flat `key = value` run configuration.
//!
//! Precedence: built-in defaults, then the config file, then command-line
//! flags. [`RunConfig::echo`] renders the effective values in the same
//! syntax, so an echo block can be fed back as a config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use radkg::encoders::SyntheticSpec;
use radkg::kg::{RelationKind, SplitRatios, UncertainPolicy, DEFAULT_COOCCURRENCE_THRESHOLD};
use radkg::scoring::{ScorerKind, DEFAULT_CHANNELS, DEFAULT_EMBED_DIM};
use radkg::training::{OptimizerKind, TrainConfig};
use radkg::Error;

pub const CONFIG_ENV: &str = "RADKG_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fold {
    Train,
    Val,
    Test,
    All,
}

impl Fold {
    pub fn index(self) -> Option<usize> {
        match self {
            Fold::Train => Some(0),
            Fold::Val => Some(1),
            Fold::Test => Some(2),
            Fold::All => None,
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
            Fold::All => "all",
        })
    }
}

impl FromStr for Fold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Fold::Train),
            "val" => Ok(Fold::Val),
            "test" => Ok(Fold::Test),
            "all" => Ok(Fold::All),
            other => Err(format!("unknown fold `{other}` (expected train, val, test or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub history: Option<PathBuf>,

    pub scorer: ScorerKind,
    pub embed_dim: usize,
    pub channels: usize,
    pub policy: UncertainPolicy,
    pub cooccurrence: bool,
    pub cooccurrence_threshold: f64,

    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub split_seed: u64,
    pub fold: Option<Fold>,

    /// Finding names restricting evaluation; empty means all.
    pub eval_findings: Vec<String>,
    pub threshold: Option<f64>,

    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub patience: usize,

    pub synth_images: usize,
    pub synth_findings: usize,
    pub synth_dim: usize,
    pub synth_prototype_scale: f64,
    pub synth_noise: f64,
    pub synth_sparsity: f64,
    pub synth_uncertain: f64,

    pub gradcheck_dim: usize,
    pub gradcheck_seeds: u64,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let synth = SyntheticSpec::default();
        let ratios = SplitRatios::default();
        Self {
            features: None,
            annotations: None,
            checkpoint: None,
            output: None,
            history: None,
            scorer: ScorerKind::DistMult,
            embed_dim: DEFAULT_EMBED_DIM,
            channels: DEFAULT_CHANNELS,
            policy: train.policy,
            cooccurrence: false,
            cooccurrence_threshold: DEFAULT_COOCCURRENCE_THRESHOLD,
            train_ratio: ratios.train,
            val_ratio: ratios.val,
            test_ratio: ratios.test,
            split_seed: 0,
            fold: None,
            eval_findings: Vec::new(),
            threshold: None,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            optimizer: train.optimizer,
            seed: train.seed,
            patience: train.patience,
            synth_images: synth.images,
            synth_findings: synth.findings,
            synth_dim: synth.dim,
            synth_prototype_scale: synth.prototype_scale,
            synth_noise: synth.noise_scale,
            synth_sparsity: synth.sparsity,
            synth_uncertain: synth.uncertain_fraction,
            gradcheck_dim: radkg::encoders::DEFAULT_FEATURE_DIM,
            gradcheck_seeds: 1,
            gradcheck_tolerance: radkg::gradcheck::DEFAULT_TOLERANCE,
        }
    }
}

/// Keys naming files a command writes; excluded from echoes so that outputs
/// do not depend on where they are written.
const DESTINATION_KEYS: [&str; 3] = ["checkpoint", "output", "history"];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key from its textual value. An empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "features" => self.features = path(value),
            "annotations" => self.annotations = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "output" => self.output = path(value),
            "history" => self.history = path(value),
            "scorer" => self.scorer = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "channels" => self.channels = parse_value(key, value)?,
            "policy" => self.policy = parse_value(key, value)?,
            "cooccurrence" => self.cooccurrence = parse_bool(key, value)?,
            "cooccurrence_threshold" => self.cooccurrence_threshold = parse_value(key, value)?,
            "train_ratio" => self.train_ratio = parse_value(key, value)?,
            "val_ratio" => self.val_ratio = parse_value(key, value)?,
            "test_ratio" => self.test_ratio = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "fold" => {
                self.fold = if value.is_empty() {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "eval_findings" => {
                self.eval_findings = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "threshold" => {
                self.threshold = if value.is_empty() {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "optimizer" => self.optimizer = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "synth_images" => self.synth_images = parse_value(key, value)?,
            "synth_findings" => self.synth_findings = parse_value(key, value)?,
            "synth_dim" => self.synth_dim = parse_value(key, value)?,
            "synth_prototype_scale" => self.synth_prototype_scale = parse_value(key, value)?,
            "synth_noise" => self.synth_noise = parse_value(key, value)?,
            "synth_sparsity" => self.synth_sparsity = parse_value(key, value)?,
            "synth_uncertain" => self.synth_uncertain = parse_value(key, value)?,
            "gradcheck_dim" => self.gradcheck_dim = parse_value(key, value)?,
            "gradcheck_seeds" => self.gradcheck_seeds = parse_value(key, value)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), Error> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("features", opt_str(&self.features.as_ref().map(|p| p.display()))),
            ("annotations", opt_str(&self.annotations.as_ref().map(|p| p.display()))),
            ("checkpoint", opt_str(&self.checkpoint.as_ref().map(|p| p.display()))),
            ("output", opt_str(&self.output.as_ref().map(|p| p.display()))),
            ("history", opt_str(&self.history.as_ref().map(|p| p.display()))),
            ("scorer", self.scorer.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("channels", self.channels.to_string()),
            ("policy", self.policy.to_string()),
            ("cooccurrence", self.cooccurrence.to_string()),
            ("cooccurrence_threshold", self.cooccurrence_threshold.to_string()),
            ("train_ratio", self.train_ratio.to_string()),
            ("val_ratio", self.val_ratio.to_string()),
            ("test_ratio", self.test_ratio.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("fold", opt_str(&self.fold)),
            ("eval_findings", self.eval_findings.join(",")),
            ("threshold", opt_str(&self.threshold)),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("seed", self.seed.to_string()),
            ("patience", self.patience.to_string()),
            ("synth_images", self.synth_images.to_string()),
            ("synth_findings", self.synth_findings.to_string()),
            ("synth_dim", self.synth_dim.to_string()),
            ("synth_prototype_scale", self.synth_prototype_scale.to_string()),
            ("synth_noise", self.synth_noise.to_string()),
            ("synth_sparsity", self.synth_sparsity.to_string()),
            ("synth_uncertain", self.synth_uncertain.to_string()),
            ("gradcheck_dim", self.gradcheck_dim.to_string()),
            ("gradcheck_seeds", self.gradcheck_seeds.to_string()),
            ("gradcheck_tolerance", self.gradcheck_tolerance.to_string()),
        ]
    }

    /// Effective configuration minus destination paths.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| !DESTINATION_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn echo_text(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn ratios(&self) -> Result<SplitRatios, Error> {
        SplitRatios::new(self.train_ratio, self.val_ratio, self.test_ratio)
    }

    /// Relations the model carries: `hasFinding`, plus `probablyHasFinding`
    /// under the separate-relation policy, plus `coOccurs` when enabled.
    pub fn relations(&self) -> Vec<RelationKind> {
        let mut out = vec![RelationKind::HasFinding];
        if self.policy == UncertainPolicy::AsSeparateRelation {
            out.push(RelationKind::ProbablyHasFinding);
        }
        if self.cooccurrence {
            out.push(RelationKind::CoOccurs);
        }
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
            policy: self.policy,
            relations: self.relations(),
            patience: self.patience,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            images: self.synth_images,
            findings: self.synth_findings,
            dim: self.synth_dim,
            prototype_scale: self.synth_prototype_scale,
            noise_scale: self.synth_noise,
            sparsity: self.synth_sparsity,
            uncertain_fraction: self.synth_uncertain,
            seed: self.seed,
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Error> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
    }
}
