//! Experiment orchestration: configuration, training, checkpoints, reports,
//! gradient checks and the command-line interface.

mod checkpoint;
mod cli;
mod config;
mod experiment;
mod gradcheck;
mod report;

pub use checkpoint::Checkpoint;
pub use cli::run_command;
pub use config::{DataSource, ExperimentConfig, SplitRule, TrainSettings, CONFIG_KEYS};
pub use experiment::{
    compare, evaluate, load_records, model_input, scaled_columns, score_test, split_data, train_and_evaluate,
    train_model, ModelKind, SplitData,
};
pub use gradcheck::{gradcheck, toy_spec, GradcheckReport, ParamCheck, GRADCHECK_TOLERANCE};
pub use report::{parse_reports, render_table, render_tables, to_json, Comparison, Counts, MetricsBlock, Report};
