use std::fmt;
use std::fs::File;
use std::io::BufReader;

use chrono::{DateTime, Utc};
use log::{info, warn};

use super::checkpoint::Checkpoint;
use super::config::{DataSource, ExperimentConfig, SplitRule, TrainSettings};
use super::report::{Counts, MetricsBlock, Report};
use crate::dataio::{
    apply_scaler, chrono_split, clean, engineer_features, fit_scaler, impute_medians, parse_transactions, quantile_boundary,
    synth_generate, FeatureSet, FeatureTable, TransactionRecord,
};
use crate::forest::{fit_forest, forest_predict_proba};
use crate::graphbuild::chunked_graph;
use crate::metrics::{auc_roc, confusion, scalar_metrics, threshold_predictions, Averaging};
use crate::models::{Architecture, Model, ModelInput, ModelSpec};
use crate::numcore::{Adam, AdamConfig, Prng};
use crate::{Error, Result};

/// A trainable model family: one of the neural architectures or the
/// Random Forest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Neural(Architecture),
    RandomForest,
}

impl ModelKind {
    /// Comparison lineup, in table order.
    pub const LINEUP: [ModelKind; 6] = [
        ModelKind::RandomForest,
        ModelKind::Neural(Architecture::GcnOnly),
        ModelKind::Neural(Architecture::CnnOnly),
        ModelKind::Neural(Architecture::GcnCnn),
        ModelKind::Neural(Architecture::GruOnly),
        ModelKind::Neural(Architecture::GcnGru),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Neural(a) => a.name(),
            ModelKind::RandomForest => "random_forest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "random_forest" {
            return Some(ModelKind::RandomForest);
        }
        Architecture::parse(s).map(ModelKind::Neural)
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "RandomForest",
            ModelKind::Neural(Architecture::GcnOnly) => "GCN",
            ModelKind::Neural(Architecture::CnnOnly) => "CNN",
            ModelKind::Neural(Architecture::GcnCnn) => "GCN–CNN",
            ModelKind::Neural(Architecture::GruOnly) => "GRU",
            ModelKind::Neural(Architecture::GcnGru) => "GCN–GRU",
        }
    }

    pub fn is_forest(self) -> bool {
        self == ModelKind::RandomForest
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reads or generates the raw records of an experiment.
pub fn load_records(config: &ExperimentConfig) -> Result<Vec<TransactionRecord>> {
    match &config.data {
        DataSource::File(path) => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            parse_transactions(BufReader::new(file))
        }
        DataSource::Synth(synth) => synth_generate(synth),
    }
}

/// Cleaned, engineered and chronologically split data, unscaled.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: FeatureTable,
    pub test: FeatureTable,
    pub boundary: DateTime<Utc>,
}

/// Cleans and engineers `records`, then splits at the configured boundary.
pub fn split_data(records: &[TransactionRecord], rule: SplitRule, feature_set: FeatureSet) -> Result<SplitData> {
    let (kept, report) = clean(records.to_vec());
    if report.dropped() > 0 {
        info!(
            "cleaning dropped {} rows (no date {}, no receiving address {}, no counterparty {})",
            report.dropped(),
            report.missing_date,
            report.missing_receiving_address,
            report.missing_counterparty_address
        );
    }
    let table = engineer_features(&kept, feature_set)?;
    let boundary = match rule {
        SplitRule::Boundary(b) => b,
        SplitRule::Quantile(q) => quantile_boundary(&table, q)?,
    };
    let (train, test) = chrono_split(&table, boundary);
    if table.missing > 0 {
        info!("imputing {} missing cells with training medians", table.missing);
    }
    let test = impute_medians(&test, &train)?;
    let train = impute_medians(&train, &train)?;
    Ok(SplitData { train, test, boundary })
}

/// Columns min-max scaled for a model: every column for the neural models,
/// only the amounts for the forest (its datetime parts stay raw integers).
pub fn scaled_columns(kind: ModelKind, feature_set: FeatureSet) -> Vec<&'static str> {
    let all = feature_set.columns();
    if kind.is_forest() {
        all.iter().copied().filter(|c| *c == "value" || *c == "usd_value").collect()
    } else {
        all.to_vec()
    }
}

fn class_counts(labels: &[usize]) -> [usize; 2] {
    let mut c = [0usize; 2];
    for &l in labels {
        c[l] += 1;
    }
    c
}

/// Trains one model on the training side of `records`.
pub fn train_model(config: &ExperimentConfig, kind: ModelKind, records: &[TransactionRecord]) -> Result<Checkpoint> {
    config.validate()?;
    let feature_set = config.feature_set_for(kind.is_forest());
    let data = split_data(records, config.split, feature_set)?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let scaler = fit_scaler(&data.train, &scaled_columns(kind, feature_set))?;
    let train = apply_scaler(&data.train, &scaler)?;
    let mut spec = config.model.clone();
    spec.n_features = train.matrix.cols();
    let settings = match kind {
        ModelKind::Neural(a) => config.train_settings(a),
        ModelKind::RandomForest => TrainSettings {
            epochs: 0,
            batch_size: 0,
            learning_rate: 0.0,
            weight_decay: 0.0,
        },
    };
    info!(
        "training {kind} on {} rows before {} with {} features",
        train.len(),
        data.boundary,
        feature_set.name()
    );
    let mut checkpoint = Checkpoint {
        kind,
        feature_set,
        config_digest: config.digest(),
        split_boundary: data.boundary,
        block_size: config.block_size,
        settings,
        class_weighting: config.class_weighting,
        seed: if kind.is_forest() { config.forest_seed } else { config.seed },
        spec: spec.clone(),
        scaler,
        params: Vec::new(),
        forest: None,
        history: Vec::new(),
        train_count: 0,
    };
    match kind {
        ModelKind::RandomForest => {
            if train.positives() == 0 || train.positives() == train.len() {
                return Err(Error::Config("training split contains a single class".into()));
            }
            let forest = fit_forest(&train.matrix, &train.labels, config.forest_estimators, config.forest_seed)?;
            checkpoint.train_count = train.len();
            checkpoint.forest = Some(forest);
        }
        ModelKind::Neural(arch) => {
            spec.architecture = arch;
            checkpoint.spec = spec.clone();
            let (model, history, n) = train_neural(config, spec, settings, &train)?;
            checkpoint.params = model
                .named_params()
                .into_iter()
                .map(|(name, t)| (name.to_string(), t.clone()))
                .collect();
            checkpoint.history = history;
            checkpoint.train_count = n;
        }
    }
    Ok(checkpoint)
}

/// Model input over a scaled table, with its graph when the architecture
/// needs one.
pub fn model_input(spec: &ModelSpec, table: &FeatureTable, block_size: usize) -> Result<ModelInput<f64>> {
    let graph = if spec.architecture.uses_graph() {
        let g = chunked_graph(&table.matrix, block_size, spec.knn_k, spec.tau)?;
        info!("graph over {} rows: {} stored entries", g.n(), g.nnz());
        Some(g)
    } else {
        None
    };
    ModelInput::new(table.matrix.clone(), graph)
}

fn train_neural(
    config: &ExperimentConfig,
    spec: ModelSpec,
    settings: TrainSettings,
    train: &FeatureTable,
) -> Result<(Model<f64>, Vec<f64>, usize)> {
    let arch = spec.architecture;
    if arch.uses_windows() && train.len() < spec.window {
        return Err(Error::Config(format!(
            "{} training rows cannot fill a window of length {}",
            train.len(),
            spec.window
        )));
    }
    info!(
        "{arch}: epochs={} batch_size={} learning_rate={} weight_decay={} class_weighting={}",
        settings.epochs,
        if settings.batch_size == usize::MAX { "full".to_string() } else { settings.batch_size.to_string() },
        settings.learning_rate,
        settings.weight_decay,
        config.class_weighting
    );
    let root = Prng::new(config.seed);
    let mut init_rng = root.child(1);
    let mut shuffle_rng = root.child(2);
    let mut dropout_rng = root.child(3);

    let input = model_input(&spec, train, config.block_size)?;
    let mut model = Model::new(spec, &mut init_rng)?;
    let samples = model.sample_ids(train.len());
    let labels: Vec<usize> = samples
        .iter()
        .map(|&s| train.labels[model.label_row(s)] as usize)
        .collect();
    let counts = class_counts(&labels);
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Config("training samples contain a single class".into()));
    }
    let weights = config.class_weighting.then(|| {
        let n = labels.len() as f64;
        vec![n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)]
    });

    let mut adam = Adam::new(
        model.named_params().into_iter().map(|(_, t)| t),
        AdamConfig {
            learning_rate: settings.learning_rate,
            weight_decay: settings.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = settings.batch_size.min(samples.len()).max(1);
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        if batch < samples.len() {
            for i in (1..order.len()).rev() {
                order.swap(i, shuffle_rng.below(i + 1));
            }
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let batch_samples: Vec<usize> = chunk.iter().map(|&i| samples[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_grad(
                &input,
                &batch_samples,
                &batch_labels,
                weights.as_deref(),
                Some(&mut dropout_rng),
            )?;
            if !loss.is_finite() {
                return Err(Error::Param(format!("{arch}: loss diverged in epoch {}", epoch + 1)));
            }
            total += loss * chunk.len() as f64;
            adam.step(
                model.named_params_mut().into_iter().map(|(_, t)| t),
                grads.named_params().into_iter().map(|(_, t)| t),
            )?;
        }
        let mean = total / samples.len() as f64;
        info!("{arch} epoch {}/{}: loss {mean:.6}", epoch + 1, settings.epochs);
        history.push(mean);
    }
    Ok((model, history, samples.len()))
}

/// Anomaly scores and labels on the evaluated test rows.
///
/// Every model is scored on the same rows: those that end a full window,
/// `T-1..N` of the test split.
pub fn score_test(checkpoint: &Checkpoint, records: &[TransactionRecord]) -> Result<(Vec<f64>, Vec<u8>)> {
    let data = split_data(records, SplitRule::Boundary(checkpoint.split_boundary), checkpoint.feature_set)?;
    let test = apply_scaler(&data.test, &checkpoint.scaler)?;
    let expected = checkpoint.spec.n_features;
    if test.matrix.cols() != expected && !test.is_empty() {
        return Err(Error::Schema(format!(
            "checkpoint expects {expected} features, data has {}",
            test.matrix.cols()
        )));
    }
    let window = checkpoint.spec.window;
    if test.len() < window {
        return Err(Error::Config(format!(
            "{} test rows cannot fill a window of length {window}",
            test.len()
        )));
    }
    let eval_rows = window - 1..test.len();
    let labels = test.labels[eval_rows.clone()].to_vec();
    let scores = match checkpoint.kind {
        ModelKind::RandomForest => {
            let forest = checkpoint
                .forest
                .as_ref()
                .ok_or_else(|| Error::Format("forest checkpoint without trees".into()))?;
            let rows: Vec<usize> = eval_rows.collect();
            forest_predict_proba(forest, &test.matrix.gather_rows(&rows)?)?
        }
        ModelKind::Neural(_) => {
            let model = checkpoint.model()?;
            let input = model_input(&model.spec, &test, checkpoint.block_size)?;
            let samples: Vec<usize> = if model.spec.architecture.uses_windows() {
                (0..=test.len() - window).collect()
            } else {
                eval_rows.collect()
            };
            model.predict_scores(&input, &samples)?
        }
    };
    Ok((scores, labels))
}

/// Scores the checkpoint on the test side of `records` and computes every
/// metric.
pub fn evaluate(checkpoint: &Checkpoint, records: &[TransactionRecord]) -> Result<Report> {
    let (scores, labels) = score_test(checkpoint, records)?;
    let preds = threshold_predictions(&scores, 0.5);
    let cm = confusion(&labels, &preds)?;
    let binary = scalar_metrics(&cm, Averaging::Binary)?;
    let weighted = scalar_metrics(&cm, Averaging::Weighted)?;
    let auc = match auc_roc(&labels, &scores) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(msg)) => {
            warn!("{}: AUC undefined ({msg}); recorded as null", checkpoint.kind);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Report {
        model: checkpoint.kind.name().to_string(),
        config_digest: checkpoint.config_digest.clone(),
        counts: Counts {
            train: checkpoint.train_count,
            test: labels.len(),
            pos: cm.positives() as usize,
            neg: cm.negatives() as usize,
        },
        metrics: MetricsBlock {
            accuracy: binary.accuracy,
            precision_binary: binary.precision,
            recall_binary: binary.recall,
            f1_binary: binary.f1,
            precision_weighted: weighted.precision,
            recall_weighted: weighted.recall,
            f1_weighted: weighted.f1,
            auc_roc: auc,
        },
        history: checkpoint.history.clone(),
        settings: checkpoint.settings_summary(),
    })
}

/// Trains the checkpoint's architecture from `config` and evaluates it.
pub fn train_and_evaluate(config: &ExperimentConfig, kind: ModelKind, records: &[TransactionRecord]) -> Result<(Checkpoint, Report)> {
    let checkpoint = train_model(config, kind, records)?;
    let report = evaluate(&checkpoint, records)?;
    info!(
        "{kind}: accuracy {:.4}, AUC {}",
        report.metrics.accuracy,
        report.metrics.auc_roc.map_or("null".to_string(), |a| format!("{a:.4}"))
    );
    Ok((checkpoint, report))
}

/// Trains and evaluates the six-model lineup on one dataset.
pub fn compare(config: &ExperimentConfig, records: &[TransactionRecord]) -> Result<Vec<Report>> {
    ModelKind::LINEUP
        .iter()
        .map(|&kind| train_and_evaluate(config, kind, records).map(|(_, r)| r))
        .collect()
}
