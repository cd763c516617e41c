use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::dataio::{default_split_boundary, format_timestamp, parse_timestamp, FeatureSet, SynthConfig};
use crate::graphbuild::DEFAULT_BLOCK_SIZE;
use crate::models::{Architecture, ModelSpec};
use crate::{Error, Result};

/// Where transactions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synth(SynthConfig),
}

/// How the chronological train/test boundary is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    Boundary(DateTime<Utc>),
    /// Boundary at this fraction of the time-ordered rows.
    Quantile(f64),
}

/// Optimiser settings of one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

/// Everything an experiment needs. Build with [`ExperimentConfig::default`]
/// or [`ExperimentConfig::parse`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitRule,
    /// Overrides the per-model default feature set when set.
    pub feature_set: Option<FeatureSet>,
    /// Architecture trained by `train`; shape hyperparameters for all.
    pub model: ModelSpec,
    pub block_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub gcn_only_epochs: usize,
    pub gcn_only_learning_rate: f64,
    pub gcn_only_weight_decay: f64,
    pub gru_only_epochs: usize,
    pub gru_only_batch_size: usize,
    pub forest_estimators: usize,
    pub forest_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            split: SplitRule::Quantile(0.75),
            feature_set: None,
            model: ModelSpec::new(Architecture::GcnGru, FeatureSet::Proposed.columns().len()),
            block_size: DEFAULT_BLOCK_SIZE,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 30,
            seed: 42,
            class_weighting: false,
            gcn_only_epochs: 50,
            gcn_only_learning_rate: 0.01,
            gcn_only_weight_decay: 5e-4,
            gru_only_epochs: 10,
            gru_only_batch_size: 64,
            forest_estimators: 200,
            forest_seed: 42,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every recognised key with its default, as listed by `--help`.
pub const CONFIG_KEYS: &str = "\
data.path                     transaction file (omit for synthetic data)
data.synth.normal             20000
data.synth.anomalous          4400
data.synth.seed               7
data.synth.start              2020-01-01T00:00:00Z
data.synth.end                2024-04-24T00:00:00Z
data.synth.burst_length       8
data.synth.denomination       0.1
data.synth.value_mu           0
data.synth.value_sigma        0.6
data.synth.usd_rate           30000
data.synth.usd_volatility     0.03
data.synth.lookalike_fraction 0.15
data.synth.outbound_fraction  0
split.boundary                timestamp; default 2023-01-01T00:00:00Z for files
split.quantile                0.75 for synthetic data
feature_set                   proposed|baseline (default: baseline for the forest, proposed otherwise)
model.architecture            gcn_gru|gcn_only|gru_only|cnn_only|gcn_cnn (gcn_gru)
model.d_g                     64
model.d_h                     64
model.n_filters               64
model.kernel_size             3
model.dropout                 0.1
model.window                  10
model.knn_k                   5
model.tau                     0.2
graph.block_size              2048
train.learning_rate           0.001
train.batch_size              256
train.max_epochs              30
train.seed                    42
train.class_weighting         false
gcn_only.epochs               50
gcn_only.learning_rate        0.01
gcn_only.weight_decay         0.0005
gru_only.epochs               10
gru_only.batch_size           64
forest.n_estimators           200
forest.seed                   42
output_dir                    out";

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

impl ExperimentConfig {
    /// Reads `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies overrides in order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut split_set = false;
        for (key, value) in pairs {
            let (k, v) = (key.as_str(), value.as_str());
            if let Some(field) = k.strip_prefix("data.synth.") {
                let synth = match &mut self.data {
                    DataSource::Synth(s) => s,
                    DataSource::File(_) => {
                        return Err(Error::Config(format!("{k} given together with data.path")));
                    }
                };
                match field {
                    "normal" => synth.n_normal = parse_value(k, v)?,
                    "anomalous" => synth.n_anomalous = parse_value(k, v)?,
                    "seed" => synth.seed = parse_value(k, v)?,
                    "start" => synth.start = parse_timestamp(v).map_err(|e| Error::Config(format!("{k}: {e}")))?,
                    "end" => synth.end = parse_timestamp(v).map_err(|e| Error::Config(format!("{k}: {e}")))?,
                    "burst_length" => synth.burst_length = parse_value(k, v)?,
                    "denomination" => synth.denomination = parse_value(k, v)?,
                    "value_mu" => synth.value_lognormal_mu = parse_value(k, v)?,
                    "value_sigma" => synth.value_lognormal_sigma = parse_value(k, v)?,
                    "usd_rate" => synth.usd_rate = parse_value(k, v)?,
                    "usd_volatility" => synth.usd_volatility = parse_value(k, v)?,
                    "lookalike_fraction" => synth.lookalike_fraction = parse_value(k, v)?,
                    "outbound_fraction" => synth.outbound_fraction = parse_value(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                }
                continue;
            }
            match k {
                "data.path" => {
                    if matches!(&self.data, DataSource::Synth(s) if *s != SynthConfig::default()) {
                        return Err(Error::Config("data.path given together with data.synth.* keys".into()));
                    }
                    self.data = DataSource::File(PathBuf::from(v));
                    if !split_set {
                        self.split = SplitRule::Boundary(default_split_boundary());
                    }
                }
                "split.boundary" => {
                    self.split =
                        SplitRule::Boundary(parse_timestamp(v).map_err(|e| Error::Config(format!("{k}: {e}")))?);
                    split_set = true;
                }
                "split.quantile" => {
                    self.split = SplitRule::Quantile(parse_value(k, v)?);
                    split_set = true;
                }
                "feature_set" => {
                    self.feature_set = Some(
                        FeatureSet::parse(v).ok_or_else(|| Error::Config(format!("{k}: unknown feature set {v:?}")))?,
                    )
                }
                "model.architecture" => {
                    self.model.architecture = Architecture::parse(v)
                        .ok_or_else(|| Error::Config(format!("{k}: unknown architecture {v:?}")))?
                }
                "model.d_g" => self.model.d_g = parse_value(k, v)?,
                "model.d_h" => self.model.d_h = parse_value(k, v)?,
                "model.n_filters" => self.model.n_filters = parse_value(k, v)?,
                "model.kernel_size" => self.model.kernel_size = parse_value(k, v)?,
                "model.dropout" => self.model.dropout = parse_value(k, v)?,
                "model.window" => self.model.window = parse_value(k, v)?,
                "model.knn_k" => self.model.knn_k = parse_value(k, v)?,
                "model.tau" => self.model.tau = parse_value(k, v)?,
                "graph.block_size" => self.block_size = parse_value(k, v)?,
                "train.learning_rate" => self.learning_rate = parse_value(k, v)?,
                "train.batch_size" => self.batch_size = parse_value(k, v)?,
                "train.max_epochs" => self.max_epochs = parse_value(k, v)?,
                "train.seed" => self.seed = parse_value(k, v)?,
                "train.class_weighting" => self.class_weighting = parse_bool(k, v)?,
                "gcn_only.epochs" => self.gcn_only_epochs = parse_value(k, v)?,
                "gcn_only.learning_rate" => self.gcn_only_learning_rate = parse_value(k, v)?,
                "gcn_only.weight_decay" => self.gcn_only_weight_decay = parse_value(k, v)?,
                "gru_only.epochs" => self.gru_only_epochs = parse_value(k, v)?,
                "gru_only.batch_size" => self.gru_only_batch_size = parse_value(k, v)?,
                "forest.n_estimators" => self.forest_estimators = parse_value(k, v)?,
                "forest.seed" => self.forest_seed = parse_value(k, v)?,
                "output_dir" => self.output_dir = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if let SplitRule::Quantile(q) = self.split {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!("split.quantile {q} must lie in (0, 1)")));
            }
        }
        if self.batch_size == 0 || self.gru_only_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.forest_estimators == 0 {
            return Err(Error::Config("forest.n_estimators must be positive".into()));
        }
        if self.block_size < 2 {
            return Err(Error::Config("graph.block_size must be at least 2".into()));
        }
        for lr in [self.learning_rate, self.gcn_only_learning_rate] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        let mut probe = self.model.clone();
        probe.n_features = 1;
        probe.validate()
    }

    /// Optimiser settings for one architecture: the global settings, with
    /// the node classifier's and the recurrent baseline's own overrides.
    pub fn train_settings(&self, architecture: Architecture) -> TrainSettings {
        let global = TrainSettings {
            epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: 0.0,
        };
        match architecture {
            Architecture::GcnOnly => TrainSettings {
                epochs: self.gcn_only_epochs,
                batch_size: usize::MAX,
                learning_rate: self.gcn_only_learning_rate,
                weight_decay: self.gcn_only_weight_decay,
            },
            Architecture::GruOnly => TrainSettings {
                epochs: self.gru_only_epochs,
                batch_size: self.gru_only_batch_size,
                ..global
            },
            _ => global,
        }
    }

    /// Feature set for a neural architecture (`None`) or the forest.
    pub fn feature_set_for(&self, forest: bool) -> FeatureSet {
        self.feature_set.unwrap_or(if forest { FeatureSet::Baseline } else { FeatureSet::Proposed })
    }

    /// Every effective setting, one `key=value` per line in key order.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        match &self.data {
            DataSource::File(p) => {
                m.insert("data.path", p.display().to_string());
            }
            DataSource::Synth(s) => {
                m.insert("data.synth.normal", s.n_normal.to_string());
                m.insert("data.synth.anomalous", s.n_anomalous.to_string());
                m.insert("data.synth.seed", s.seed.to_string());
                m.insert("data.synth.start", format_timestamp(&s.start));
                m.insert("data.synth.end", format_timestamp(&s.end));
                m.insert("data.synth.burst_length", s.burst_length.to_string());
                m.insert("data.synth.denomination", s.denomination.to_string());
                m.insert("data.synth.value_mu", s.value_lognormal_mu.to_string());
                m.insert("data.synth.value_sigma", s.value_lognormal_sigma.to_string());
                m.insert("data.synth.usd_rate", s.usd_rate.to_string());
                m.insert("data.synth.usd_volatility", s.usd_volatility.to_string());
                m.insert("data.synth.lookalike_fraction", s.lookalike_fraction.to_string());
                m.insert("data.synth.outbound_fraction", s.outbound_fraction.to_string());
            }
        }
        match self.split {
            SplitRule::Boundary(b) => m.insert("split.boundary", format_timestamp(&b)),
            SplitRule::Quantile(q) => m.insert("split.quantile", q.to_string()),
        };
        if let Some(fs) = self.feature_set {
            m.insert("feature_set", fs.name().to_string());
        }
        let s = &self.model;
        m.insert("model.architecture", s.architecture.to_string());
        m.insert("model.d_g", s.d_g.to_string());
        m.insert("model.d_h", s.d_h.to_string());
        m.insert("model.n_filters", s.n_filters.to_string());
        m.insert("model.kernel_size", s.kernel_size.to_string());
        m.insert("model.dropout", s.dropout.to_string());
        m.insert("model.window", s.window.to_string());
        m.insert("model.knn_k", s.knn_k.to_string());
        m.insert("model.tau", s.tau.to_string());
        m.insert("graph.block_size", self.block_size.to_string());
        m.insert("train.learning_rate", self.learning_rate.to_string());
        m.insert("train.batch_size", self.batch_size.to_string());
        m.insert("train.max_epochs", self.max_epochs.to_string());
        m.insert("train.seed", self.seed.to_string());
        m.insert("train.class_weighting", self.class_weighting.to_string());
        m.insert("gcn_only.epochs", self.gcn_only_epochs.to_string());
        m.insert("gcn_only.learning_rate", self.gcn_only_learning_rate.to_string());
        m.insert("gcn_only.weight_decay", self.gcn_only_weight_decay.to_string());
        m.insert("gru_only.epochs", self.gru_only_epochs.to_string());
        m.insert("gru_only.batch_size", self.gru_only_batch_size.to_string());
        m.insert("forest.n_estimators", self.forest_estimators.to_string());
        m.insert("forest.seed", self.forest_seed.to_string());
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded. The output
    /// directory does not take part.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.max_epochs), (1e-3, 256, 30));
        let gcn = c.train_settings(Architecture::GcnOnly);
        assert_eq!((gcn.epochs, gcn.learning_rate, gcn.weight_decay), (50, 0.01, 5e-4));
        let gru = c.train_settings(Architecture::GruOnly);
        assert_eq!((gru.epochs, gru.batch_size, gru.weight_decay), (10, 64, 0.0));
        let hybrid = c.train_settings(Architecture::GcnGru);
        assert_eq!((hybrid.epochs, hybrid.batch_size, hybrid.weight_decay), (30, 256, 0.0));
        assert_eq!((c.forest_estimators, c.forest_seed), (200, 42));
        assert_eq!(c.feature_set_for(true), FeatureSet::Baseline);
        assert_eq!(c.feature_set_for(false), FeatureSet::Proposed);
    }

    #[test]
    fn parse_and_digest() {
        let text = "# comment\ntrain.seed = 3\nmodel.architecture=gru_only  # inline\n\ndata.synth.normal=500\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.architecture, Architecture::GruOnly);
        assert!(matches!(&c.data, DataSource::Synth(s) if s.n_normal == 500));
        let reordered = ExperimentConfig::parse("data.synth.normal=500\nmodel.architecture=gru_only\ntrain.seed=3").unwrap();
        assert_eq!(c.digest(), reordered.digest());
        assert_ne!(c.digest(), ExperimentConfig::default().digest());
        assert_eq!(c.digest().len(), 64);
    }

    #[test]
    fn file_source_defaults_to_calendar_boundary() {
        let c = ExperimentConfig::parse("data.path=tx.csv").unwrap();
        assert_eq!(c.split, SplitRule::Boundary(default_split_boundary()));
        let q = ExperimentConfig::parse("split.quantile=0.6\ndata.path=tx.csv").unwrap();
        assert_eq!(q.split, SplitRule::Quantile(0.6));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense",
            "train.seed=abc",
            "unknown.key=1",
            "split.quantile=1.5",
            "model.architecture=lstm",
            "train.class_weighting=maybe",
            "data.path=a.csv\ndata.synth.seed=3",
            "model.kernel_size=4",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
