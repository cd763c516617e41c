use chrono::{DateTime, Datelike, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::TransactionRecord;
use crate::numcore::Tensor;
use crate::{Error, Result};

/// Which engineered columns to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `hour, day_of_week, value, usd_value`: short-term temporal features only.
    Proposed,
    /// `year, month, day, day_of_week, hour, value, usd_value`: full datetime expansion.
    Baseline,
}

impl FeatureSet {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FeatureSet::Proposed => &["hour", "day_of_week", "value", "usd_value"],
            FeatureSet::Baseline => &["year", "month", "day", "day_of_week", "hour", "value", "usd_value"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Proposed => "proposed",
            FeatureSet::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(FeatureSet::Proposed),
            "baseline" => Some(FeatureSet::Baseline),
            _ => None,
        }
    }
}

/// Numeric feature matrix with labels, rows in chronological order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub matrix: Tensor<f64>,
    pub columns: Vec<String>,
    pub labels: Vec<u8>,
    pub timestamps: Vec<DateTime<Utc>>,
    pub hashes: Vec<String>,
    /// Missing value cells, stored as NaN until [`impute_medians`] fills them.
    pub missing: usize,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Rows `range` as a new table.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureTable {
        let rows: Vec<usize> = range.clone().collect();
        FeatureTable {
            matrix: self.matrix.gather_rows(&rows).expect("range within table"),
            columns: self.columns.clone(),
            labels: self.labels[range.clone()].to_vec(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            hashes: self.hashes[range.clone()].to_vec(),
            missing: self.matrix_missing(range),
        }
    }
}

impl FeatureTable {
    fn matrix_missing(&self, range: std::ops::Range<usize>) -> usize {
        range.map(|r| self.matrix.row(r).iter().filter(|v| v.is_nan()).count()).sum()
    }
}

/// Day of week with Monday = 0.
pub fn day_of_week(ts: &DateTime<Utc>) -> u32 {
    ts.weekday().num_days_from_monday()
}

/// Builds the feature table from cleaned records, sorted by timestamp with
/// ties broken by hash. Missing values are replaced by their column median.
pub fn engineer_features(records: &[TransactionRecord], feature_set: FeatureSet) -> Result<FeatureTable> {
    let mut order: Vec<(&TransactionRecord, DateTime<Utc>)> = Vec::with_capacity(records.len());
    for r in records {
        let ts = r
            .timestamp
            .ok_or_else(|| Error::Schema(format!("record {:?} has no timestamp; clean first", r.hash)))?;
        order.push((r, ts));
    }
    order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.hash.cmp(&b.0.hash)));

    let mut missing = 0;
    let mut fill = |v: Option<f64>| -> f64 {
        v.unwrap_or_else(|| {
            missing += 1;
            f64::NAN
        })
    };

    let cols = feature_set.columns();
    let mut data = Vec::with_capacity(order.len() * cols.len());
    for (r, ts) in &order {
        let value = fill(r.value);
        let usd = fill(r.usd_value);
        for &c in cols {
            data.push(match c {
                "year" => ts.year() as f64,
                "month" => ts.month() as f64,
                "day" => ts.day() as f64,
                "day_of_week" => day_of_week(ts) as f64,
                "hour" => ts.hour() as f64,
                "value" => value,
                "usd_value" => usd,
                _ => unreachable!("feature sets only name known columns"),
            });
        }
    }
    Ok(FeatureTable {
        matrix: Tensor::new(vec![order.len(), cols.len()], data)?,
        columns: cols.iter().map(|c| c.to_string()).collect(),
        labels: order.iter().map(|(r, _)| r.label).collect(),
        timestamps: order.iter().map(|(_, ts)| *ts).collect(),
        hashes: order.iter().map(|(r, _)| r.hash.clone()).collect(),
        missing,
    })
}

/// Fills missing (NaN) cells of `table` with the column medians of
/// `reference`, normally the training split. Columns with no observed value
/// in `reference` fall back to 0.
pub fn impute_medians(table: &FeatureTable, reference: &FeatureTable) -> Result<FeatureTable> {
    if table.columns != reference.columns {
        return Err(Error::Schema(format!(
            "impute_medians: columns {:?} differ from reference {:?}",
            table.columns, reference.columns
        )));
    }
    let mut out = table.clone();
    if table.missing == 0 {
        return Ok(out);
    }
    let cols = table.columns.len();
    for c in 0..cols {
        let observed = (0..reference.len()).map(|r| reference.matrix.at(r, c)).filter(|v| !v.is_nan());
        let m = median(observed);
        for r in 0..out.len() {
            let cell = &mut out.matrix.data_mut()[r * cols + c];
            if cell.is_nan() {
                *cell = m;
            }
        }
    }
    out.missing = 0;
    Ok(out)
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Fitted min/max for one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledColumn {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Min-max scaling parameters, fitted on a training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<ScaledColumn>,
}

/// Records per-column min and max of the named columns.
pub fn fit_scaler(table: &FeatureTable, columns: &[&str]) -> Result<ScalerParams> {
    let mut fitted = Vec::with_capacity(columns.len());
    for &name in columns {
        let idx = table
            .column_index(name)
            .ok_or_else(|| Error::Schema(format!("cannot fit scaler: no column {name:?}")))?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..table.len() {
            let v = table.matrix.at(i, idx);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if table.is_empty() {
            lo = 0.0;
            hi = 0.0;
        }
        fitted.push(ScaledColumn {
            name: name.to_string(),
            min: lo,
            max: hi,
        });
    }
    Ok(ScalerParams { columns: fitted })
}

/// Applies `(x - min) / (max - min)` to each fitted column; constant columns
/// map to 0. Values outside the fitted range fall outside `[0, 1]`.
pub fn apply_scaler(table: &FeatureTable, params: &ScalerParams) -> Result<FeatureTable> {
    let mut missing = Vec::new();
    let mut plan = Vec::new();
    for col in &params.columns {
        match table.column_index(&col.name) {
            Some(idx) => plan.push((idx, col)),
            None => missing.push(col.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("table lacks fitted column(s): {}", missing.join(", "))));
    }
    let mut out = table.clone();
    let c = out.matrix.cols();
    for row in out.matrix.data_mut().chunks_exact_mut(c) {
        for &(idx, col) in &plan {
            let range = col.max - col.min;
            row[idx] = if range > 0.0 { (row[idx] - col.min) / range } else { 0.0 };
        }
    }
    Ok(out)
}

/// Default boundary between training and test data.
pub fn default_split_boundary() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

/// Rows strictly before `boundary` train; the rest test.
pub fn chrono_split(table: &FeatureTable, boundary: DateTime<Utc>) -> (FeatureTable, FeatureTable) {
    let cut = table.timestamps.partition_point(|ts| *ts < boundary);
    (table.slice(0..cut), table.slice(cut..table.len()))
}

/// Boundary timestamp leaving a fraction `q` of rows before it: the
/// timestamp of row `ceil(q * n)`. Rows sharing that timestamp all fall on
/// the test side.
pub fn quantile_boundary(table: &FeatureTable, q: f64) -> Result<DateTime<Utc>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param(format!("quantile {q} not in [0, 1]")));
    }
    let n = table.len();
    if n == 0 {
        return Err(Error::param("quantile of an empty table"));
    }
    let idx = ((q * n as f64).ceil() as usize).min(n);
    if idx == n {
        return Ok(table.timestamps[n - 1] + chrono::Duration::seconds(1));
    }
    Ok(table.timestamps[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::parse_timestamp;

    fn rec(hash: &str, ts: &str, value: f64, label: u8) -> TransactionRecord {
        TransactionRecord {
            hash: hash.into(),
            timestamp: Some(parse_timestamp(ts).unwrap()),
            receiving_address: Some("r".into()),
            counterparty_address: Some("c".into()),
            counterparty_cluster_name: None,
            counterparty_shared_name: None,
            counterparty_category: None,
            value: Some(value),
            usd_value: Some(value * 10.0),
            label,
        }
    }

    #[test]
    fn calendar_features() {
        let t = engineer_features(&[rec("a", "2020-01-01T13:00:00Z", 1.0, 0)], FeatureSet::Proposed).unwrap();
        assert_eq!(t.matrix.row(0), &[13.0, 2.0, 1.0, 10.0]);
        let b = engineer_features(&[rec("a", "2020-01-01T13:00:00Z", 1.0, 0)], FeatureSet::Baseline).unwrap();
        assert_eq!(b.matrix.row(0), &[2020.0, 1.0, 1.0, 2.0, 13.0, 1.0, 10.0]);
    }

    #[test]
    fn proposed_set_excludes_long_term_columns() {
        let cols = FeatureSet::Proposed.columns();
        assert!(!cols.contains(&"month") && !cols.contains(&"quarter") && !cols.contains(&"year"));
    }

    #[test]
    fn sorted_with_hash_tie_break() {
        let recs = vec![
            rec("c", "2021-05-01T00:00:00Z", 3.0, 0),
            rec("b", "2020-05-01T00:00:00Z", 2.0, 1),
            rec("a", "2021-05-01T00:00:00Z", 1.0, 0),
        ];
        let t = engineer_features(&recs, FeatureSet::Proposed).unwrap();
        assert_eq!(t.hashes, vec!["b", "a", "c"]);
        assert_eq!(t.labels, vec![1, 0, 0]);
        assert!(t.timestamps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn missing_values_are_imputed_from_reference_medians() {
        let mut recs = vec![
            rec("a", "2021-01-01T00:00:00Z", 1.0, 0),
            rec("b", "2021-01-02T00:00:00Z", 3.0, 0),
            rec("c", "2021-01-03T00:00:00Z", 9.0, 0),
        ];
        recs[1].value = None;
        let t = engineer_features(&recs, FeatureSet::Proposed).unwrap();
        assert!(t.matrix.at(1, 2).is_nan());
        assert_eq!(t.missing, 1);
        let filled = impute_medians(&t, &t).unwrap();
        assert_eq!(filled.matrix.at(1, 2), 5.0);
        assert_eq!(filled.missing, 0);
        // The reference decides the median, not the table being filled.
        let reference = t.slice(0..1);
        assert_eq!(impute_medians(&t, &reference).unwrap().matrix.at(1, 2), 1.0);
    }

    fn column_table(values: &[f64]) -> FeatureTable {
        let recs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(&format!("{i}"), &format!("2021-01-{:02}T00:00:00Z", i + 1), v, 0))
            .collect();
        engineer_features(&recs, FeatureSet::Proposed).unwrap()
    }

    #[test]
    fn scaler_examples() {
        let t = column_table(&[2.0, 4.0, 6.0]);
        let p = fit_scaler(&t, &["value"]).unwrap();
        let s = apply_scaler(&t, &p).unwrap();
        assert_eq!((0..3).map(|i| s.matrix.at(i, 2)).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);

        let c = column_table(&[5.0, 5.0]);
        let s = apply_scaler(&c, &fit_scaler(&c, &["value"]).unwrap()).unwrap();
        assert_eq!(s.matrix.at(0, 2), 0.0);
        assert_eq!(s.matrix.at(1, 2), 0.0);

        let train = column_table(&[0.0, 10.0]);
        let test = column_table(&[12.0]);
        let s = apply_scaler(&test, &fit_scaler(&train, &["value"]).unwrap()).unwrap();
        assert!((s.matrix.at(0, 2) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn scaler_schema_error() {
        let t = column_table(&[1.0, 2.0]);
        let params = ScalerParams {
            columns: vec![ScaledColumn {
                name: "year".into(),
                min: 0.0,
                max: 1.0,
            }],
        };
        assert!(matches!(apply_scaler(&t, &params), Err(Error::Schema(_))));
        assert!(fit_scaler(&t, &["nope"]).is_err());
    }

    #[test]
    fn split_is_strict() {
        let t = column_table(&[1.0, 2.0, 3.0, 4.0]);
        let boundary = t.timestamps[2];
        let (train, test) = chrono_split(&t, boundary);
        assert_eq!((train.len(), test.len()), (2, 2));
        assert!(train.timestamps.last().unwrap() < test.timestamps.first().unwrap());

        let (all, none) = chrono_split(&t, default_split_boundary());
        assert_eq!((all.len(), none.len()), (4, 0));
    }

    #[test]
    fn quantile_boundary_counts() {
        let t = column_table(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let b = quantile_boundary(&t, 0.75).unwrap();
        let (train, test) = chrono_split(&t, b);
        assert_eq!((train.len(), test.len()), (6, 2));
    }
}
