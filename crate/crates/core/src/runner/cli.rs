use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use super::checkpoint::Checkpoint;
use super::config::{DataSource, ExperimentConfig, CONFIG_KEYS};
use super::experiment::{compare, evaluate, load_records, train_model, ModelKind};
use super::gradcheck::gradcheck;
use super::report::{parse_reports, render_table, render_tables, Comparison};
use crate::dataio::{parse_timestamp, write_transactions, SynthConfig};
use crate::metrics::Averaging;
use crate::models::Architecture;
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "txanom",
    version,
    about = "Graph + sequence anomaly detection for cryptocurrency transactions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic transaction file.
    Synth {
        #[arg(long, default_value_t = 20_000)]
        normal: usize,
        #[arg(long, default_value_t = 4_400)]
        anomalous: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// First timestamp (RFC 3339).
        #[arg(long, default_value = "2020-01-01T00:00:00Z")]
        start: String,
        /// Last timestamp (RFC 3339).
        #[arg(long, default_value = "2024-04-24T00:00:00Z")]
        end: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its checkpoint.
    Train {
        /// key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// gcn_gru, gcn_only, gru_only, cnn_only, gcn_cnn or random_forest
        /// [default: model.architecture from the config].
        #[arg(long)]
        model: Option<String>,
        /// Training seed [default: train.seed from the config, 42].
        #[arg(long)]
        seed: Option<u64>,
        /// Transaction file, overriding the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Enable balanced class weights in the loss.
        #[arg(long)]
        class_weighting: bool,
        /// Checkpoint path [default: <output_dir>/<model>.ckpt].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split and write a JSON report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Transaction file, overriding the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report path [default: <output_dir>/<model>.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render JSON reports as text tables.
    Report {
        /// Report or comparison JSON files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// weighted, binary or both.
        #[arg(long, default_value = "both")]
        averaging: String,
    },
    /// Check analytic gradients against finite differences on toy data.
    Gradcheck {
        /// Architecture, or "all".
        #[arg(long, default_value = "all")]
        arch: String,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradients; every check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train and evaluate all six models and write a consolidated report.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report path [default: <output_dir>/compare.json]; the text tables
        /// go next to it with a .txt extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit status: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = <Cli as clap::CommandFactory>::command().after_help(format!(
        "Configuration keys (--config file, one key = value per line) and defaults:\n\n{CONFIG_KEYS}"
    ));
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(path: Option<&Path>, data: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(d) = data {
        if matches!(config.data, DataSource::Synth(_)) {
            config.data = DataSource::Synth(SynthConfig::default());
        }
        overrides.push(("data.path".to_string(), d.display().to_string()));
    }
    if let Some(s) = seed {
        overrides.push(("train.seed".to_string(), s.to_string()));
    }
    config.apply(&overrides)?;
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            normal,
            anomalous,
            seed,
            start,
            end,
            out,
        } => {
            let config = SynthConfig {
                n_normal: normal,
                n_anomalous: anomalous,
                seed,
                start: parse_timestamp(&start).map_err(|e| Error::Config(format!("--start: {e}")))?,
                end: parse_timestamp(&end).map_err(|e| Error::Config(format!("--end: {e}")))?,
                ..SynthConfig::default()
            };
            let records = crate::dataio::synth_generate(&config)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_transactions(BufWriter::new(File::create(&out)?), &records)?;
            info!("wrote {} rows to {}", records.len(), out.display());
            Ok(())
        }
        Command::Train {
            config,
            model,
            seed,
            data,
            class_weighting,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), data.as_deref(), seed)?;
            if class_weighting {
                cfg.class_weighting = true;
            }
            let kind = match model {
                Some(m) => ModelKind::parse(&m).ok_or_else(|| Error::Config(format!("unknown model {m:?}")))?,
                None => ModelKind::Neural(cfg.model.architecture),
            };
            let records = load_records(&cfg)?;
            let checkpoint = train_model(&cfg, kind, &records)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("{kind}.ckpt")));
            checkpoint.save(&path)?;
            info!("checkpoint written to {}", path.display());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            config,
            data,
            out,
        } => {
            let cfg = load_config(config.as_deref(), data.as_deref(), None)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            if ckpt.config_digest != cfg.digest() {
                warn!("checkpoint was trained under a different configuration");
            }
            let records = load_records(&cfg)?;
            let report = evaluate(&ckpt, &records)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("{}.json", ckpt.kind)));
            write_file(&path, &report.to_json()?)?;
            print!("{}", render_tables(std::slice::from_ref(&report)));
            info!("report written to {}", path.display());
            Ok(())
        }
        Command::Report { inputs, averaging } => {
            let mut reports = Vec::new();
            for p in &inputs {
                reports.extend(parse_reports(&fs::read_to_string(p)?)?);
            }
            let text = match averaging.as_str() {
                "both" => render_tables(&reports),
                "weighted" => render_table(&reports, Averaging::Weighted),
                "binary" => render_table(&reports, Averaging::Binary),
                other => return Err(Error::Config(format!("unknown averaging {other:?}"))),
            };
            print!("{text}");
            Ok(())
        }
        Command::Gradcheck {
            arch,
            seeds,
            seed,
            corrupt,
        } => {
            let archs: Vec<Architecture> = if arch == "all" {
                Architecture::ALL.to_vec()
            } else {
                vec![Architecture::parse(&arch).ok_or_else(|| Error::Config(format!("unknown architecture {arch:?}")))?]
            };
            let mut failures = 0;
            for a in archs {
                for s in seed..seed + seeds {
                    let report = gradcheck(a, s, corrupt)?;
                    if !report.passed {
                        failures += 1;
                    }
                    print!("{}", report.render());
                }
            }
            if failures > 0 {
                warn!("{failures} gradient checks failed");
            } else {
                info!("all gradient checks passed");
            }
            Ok(())
        }
        Command::Compare { config, seed, data, out } => {
            let cfg = load_config(config.as_deref(), data.as_deref(), seed)?;
            let records = load_records(&cfg)?;
            let reports = compare(&cfg, &records)?;
            let comparison = Comparison {
                config_digest: cfg.digest(),
                models: reports,
            };
            let path = out.unwrap_or_else(|| cfg.output_dir.join("compare.json"));
            write_file(&path, &comparison.to_json()?)?;
            let tables = render_tables(&comparison.models);
            write_file(&path.with_extension("txt"), &tables)?;
            print!("{tables}");
            info!("comparison written to {}", path.display());
            Ok(())
        }
    }
}
