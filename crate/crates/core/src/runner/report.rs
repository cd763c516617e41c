use std::collections::BTreeMap;
use std::io;

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::Formatter;

use super::experiment::ModelKind;
use crate::metrics::Averaging;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq, SerializeDerive, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
pub struct MetricsBlock {
    pub accuracy: f64,
    pub precision_binary: f64,
    pub recall_binary: f64,
    pub f1_binary: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    /// `None` when the evaluated rows hold a single class.
    pub auc_roc: Option<f64>,
}

/// Evaluation of one trained model.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
pub struct Report {
    pub model: String,
    pub config_digest: String,
    pub counts: Counts,
    pub metrics: MetricsBlock,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

/// Several reports from one configuration.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
pub struct Comparison {
    pub config_digest: String,
    pub models: Vec<Report>,
}

/// Writes floats with 17 significant digits so they parse back exactly;
/// non-finite values become `null`.
struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Compact JSON with exact float round-tripping.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Table label for the model.
    pub fn display_name(&self) -> String {
        ModelKind::parse(&self.model).map_or_else(|| self.model.clone(), |k| k.display_name().to_string())
    }
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Accepts either a single report or a comparison.
pub fn parse_reports(text: &str) -> Result<Vec<Report>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("models").is_some() {
        Ok(serde_json::from_value::<Comparison>(value)?.models)
    } else {
        Ok(vec![serde_json::from_value::<Report>(value)?])
    }
}

const HEADERS: [&str; 6] = ["Model", "Accuracy", "Precision", "Recall", "F1-score", "AUC-ROC"];

/// Fixed-width text table of the reports under one averaging mode.
pub fn render_table(reports: &[Report], mode: Averaging) -> String {
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            let (p, rc, f) = match mode {
                Averaging::Binary => (m.precision_binary, m.recall_binary, m.f1_binary),
                Averaging::Weighted => (m.precision_weighted, m.recall_weighted, m.f1_weighted),
            };
            [
                r.display_name(),
                format!("{:.4}", m.accuracy),
                format!("{p:.4}"),
                format!("{rc:.4}"),
                format!("{f:.4}"),
                m.auc_roc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = " ".repeat(w - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&HEADERS.map(String::from)));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Weighted and binary tables, each under a heading.
pub fn render_tables(reports: &[Report]) -> String {
    format!(
        "Weighted averages\n{}\nPositive class (anomalous)\n{}",
        render_table(reports, Averaging::Weighted),
        render_table(reports, Averaging::Binary)
    )
}
