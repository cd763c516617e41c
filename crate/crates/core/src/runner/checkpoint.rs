//! Self-describing binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "TXCHKPT\0", u32 version
//! str  metadata (key=value lines)
//! str  model spec (key=value lines)
//! u32  scaler columns, each: str name, f64 min, f64 max
//! u32  history length, f64 values
//! u32  tensors, each: str name, u32 ndim, u64 dims, f64 data
//! u8   forest present; if 1: u64 n_estimators, u64 feature_subsample,
//!      u64 seed, u64 n_features, u32 trees, then pre-order nodes
//!      (u8 0: u64 count0, u64 count1 | u8 1: u64 feature, f64 threshold)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};

use super::config::TrainSettings;
use super::experiment::ModelKind;
use crate::dataio::{format_timestamp, parse_timestamp, FeatureSet, ScaledColumn, ScalerParams};
use crate::forest::{Forest, TreeNode};
use crate::models::{Model, ModelSpec};
use crate::numcore::{Prng, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TXCHKPT\0";
const VERSION: u32 = 1;
const MAX_TREE_DEPTH: usize = 1 << 16;

/// A trained model with everything needed to score new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    pub config_digest: String,
    pub split_boundary: DateTime<Utc>,
    pub block_size: usize,
    pub settings: TrainSettings,
    pub class_weighting: bool,
    pub seed: u64,
    /// Shape hyperparameters; also fixes the evaluated rows for the forest.
    pub spec: ModelSpec,
    pub scaler: ScalerParams,
    pub params: Vec<(String, Tensor<f64>)>,
    pub forest: Option<Forest<f64>>,
    pub history: Vec<f64>,
    /// Training samples seen per epoch.
    pub train_count: usize,
}

impl Checkpoint {
    /// Rebuilds the neural model from the stored tensors.
    pub fn model(&self) -> Result<Model<f64>> {
        let ModelKind::Neural(arch) = self.kind else {
            return Err(Error::Format("not a neural checkpoint".into()));
        };
        if arch != self.spec.architecture {
            return Err(Error::Format("model kind disagrees with stored spec".into()));
        }
        let mut model = Model::new(self.spec.clone(), &mut Prng::new(0))?;
        let expected = model.named_params().len();
        if expected != self.params.len() {
            return Err(Error::Format(format!(
                "expected {expected} tensors, checkpoint has {}",
                self.params.len()
            )));
        }
        for (name, tensor) in &self.params {
            let slot = model
                .param_mut(name)
                .ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
            if slot.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor.clone();
        }
        Ok(model)
    }

    /// Training settings as they appear in reports.
    pub fn settings_summary(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("feature_set".to_string(), self.feature_set.name().to_string());
        m.insert("split_boundary".to_string(), format_timestamp(&self.split_boundary));
        m.insert("seed".to_string(), self.seed.to_string());
        if let Some(forest) = &self.forest {
            m.insert("n_estimators".to_string(), forest.n_estimators.to_string());
            m.insert("feature_subsample".to_string(), forest.feature_subsample.to_string());
        } else {
            m.insert("epochs".to_string(), self.settings.epochs.to_string());
            let batch = if self.settings.batch_size == usize::MAX {
                "full".to_string()
            } else {
                self.settings.batch_size.to_string()
            };
            m.insert("batch_size".to_string(), batch);
            m.insert("learning_rate".to_string(), self.settings.learning_rate.to_string());
            m.insert("weight_decay".to_string(), self.settings.weight_decay.to_string());
            m.insert("class_weighting".to_string(), self.class_weighting.to_string());
        }
        m
    }

    fn metadata(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("kind", self.kind.name().to_string());
        kv("feature_set", self.feature_set.name().to_string());
        kv("config_digest", self.config_digest.clone());
        kv("split_boundary", format_timestamp(&self.split_boundary));
        kv("block_size", self.block_size.to_string());
        kv("epochs", self.settings.epochs.to_string());
        kv("batch_size", self.settings.batch_size.to_string());
        kv("learning_rate", format!("{:?}", self.settings.learning_rate));
        kv("weight_decay", format!("{:?}", self.settings.weight_decay));
        kv("class_weighting", self.class_weighting.to_string());
        kv("seed", self.seed.to_string());
        kv("train_count", self.train_count.to_string());
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&self.metadata());
        w.str(&self.spec.to_string());
        w.u32(self.scaler.columns.len() as u32);
        for c in &self.scaler.columns {
            w.str(&c.name);
            w.f64(c.min);
            w.f64(c.max);
        }
        w.u32(self.history.len() as u32);
        for &h in &self.history {
            w.f64(h);
        }
        w.u32(self.params.len() as u32);
        for (name, t) in &self.params {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        match &self.forest {
            None => w.u8(0),
            Some(f) => {
                w.u8(1);
                w.u64(f.n_estimators as u64);
                w.u64(f.feature_subsample as u64);
                w.u64(f.seed);
                w.u64(f.n_features as u64);
                w.u32(f.trees.len() as u32);
                for tree in &f.trees {
                    write_tree(&mut w, tree);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta = parse_metadata(&r.str()?)?;
        let spec: ModelSpec = r.str()?.parse()?;
        let mut columns = Vec::new();
        for _ in 0..r.count(20)? {
            columns.push(ScaledColumn {
                name: r.str()?,
                min: r.f64()?,
                max: r.f64()?,
            });
        }
        let mut history = Vec::new();
        for _ in 0..r.count(8)? {
            history.push(r.f64()?);
        }
        let mut params = Vec::new();
        for _ in 0..r.count(8)? {
            let name = r.str()?;
            let ndim = r.count(8)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Format(format!("tensor {name} is truncated")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::new(shape, data)?));
        }
        let forest = match r.u8()? {
            0 => None,
            1 => {
                let n_estimators = r.usize()?;
                let feature_subsample = r.usize()?;
                let seed = r.u64()?;
                let n_features = r.usize()?;
                let n_trees = r.count(9)?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    trees.push(read_tree(&mut r, n_features, 0)?);
                }
                Some(Forest {
                    trees,
                    n_estimators,
                    feature_subsample,
                    seed,
                    n_features,
                })
            }
            t => return Err(Error::Format(format!("bad forest tag {t}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        let get = |k: &str| -> Result<&str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("metadata lacks {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad metadata value {k}={v}")))
        }
        let kind = ModelKind::parse(get("kind")?).ok_or_else(|| Error::Format("unknown model kind".into()))?;
        let feature_set =
            FeatureSet::parse(get("feature_set")?).ok_or_else(|| Error::Format("unknown feature set".into()))?;
        if kind.is_forest() != forest.is_some() {
            return Err(Error::Format("forest section does not match model kind".into()));
        }
        let checkpoint = Checkpoint {
            kind,
            feature_set,
            config_digest: get("config_digest")?.to_string(),
            split_boundary: parse_timestamp(get("split_boundary")?)
                .map_err(|e| Error::Format(format!("bad split_boundary: {e}")))?,
            block_size: num("block_size", get("block_size")?)?,
            settings: TrainSettings {
                epochs: num("epochs", get("epochs")?)?,
                batch_size: num("batch_size", get("batch_size")?)?,
                learning_rate: num("learning_rate", get("learning_rate")?)?,
                weight_decay: num("weight_decay", get("weight_decay")?)?,
            },
            class_weighting: num("class_weighting", get("class_weighting")?)?,
            seed: num("seed", get("seed")?)?,
            train_count: num("train_count", get("train_count")?)?,
            spec,
            scaler: ScalerParams { columns },
            params,
            forest,
            history,
        };
        if let ModelKind::Neural(_) = kind {
            checkpoint.model()?;
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_metadata(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad metadata line {l:?}")))
        })
        .collect()
}

fn write_tree(w: &mut Writer, node: &TreeNode<f64>) {
    match node {
        TreeNode::Leaf { class_counts } => {
            w.u8(0);
            w.u64(class_counts[0]);
            w.u64(class_counts[1]);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            w.u8(1);
            w.u64(*feature as u64);
            w.f64(*threshold);
            write_tree(w, left);
            write_tree(w, right);
        }
    }
}

fn read_tree(r: &mut Reader<'_>, n_features: usize, depth: usize) -> Result<TreeNode<f64>> {
    if depth > MAX_TREE_DEPTH {
        return Err(Error::Format("tree too deep".into()));
    }
    match r.u8()? {
        0 => Ok(TreeNode::Leaf {
            class_counts: [r.u64()?, r.u64()?],
        }),
        1 => {
            let feature = r.usize()?;
            if feature >= n_features {
                return Err(Error::Format(format!("split on feature {feature} of {n_features}")));
            }
            let threshold = r.f64()?;
            let left = Box::new(read_tree(r, n_features, depth + 1)?);
            let right = Box::new(read_tree(r, n_features, depth + 1)?);
            Ok(TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            })
        }
        t => Err(Error::Format(format!("bad node tag {t}"))),
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("integer overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Element count, rejected early when `min_bytes` per element cannot fit.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_bytes) > self.remaining() {
            return Err(Error::Format("count exceeds checkpoint size".into()));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}
