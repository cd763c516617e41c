//! Transaction ingestion and preprocessing.

mod features;
mod record;
mod synth;
mod window;

pub use features::{
    apply_scaler, chrono_split, day_of_week, default_split_boundary, engineer_features, fit_scaler, impute_medians,
    quantile_boundary, FeatureSet, FeatureTable, ScaledColumn, ScalerParams,
};
pub use record::{
    clean, format_timestamp, parse_timestamp, parse_transactions, write_transactions, CleanReport,
    TransactionRecord, HEADER,
};
pub use synth::{synth_generate, SynthConfig};
pub use window::{make_windows, window_starts, WindowSet};
