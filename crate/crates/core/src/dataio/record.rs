use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::{Error, Result};

/// Column names of the transaction file, in file order.
pub const HEADER: [&str; 10] = [
    "Hash",
    "Date",
    "ReceivingAddress",
    "CounterpartyAddress",
    "CounterpartyClusterName",
    "CounterpartySharedName",
    "CounterpartyCategory",
    "Value",
    "USDValue",
    "Label",
];

const DATE_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// One transaction row.
///
/// Empty fields in the source file are `None`. `value` is net coin amount:
/// positive inbound, negative outbound.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub hash: String,
    pub timestamp: Option<DateTime<Utc>>,
    pub receiving_address: Option<String>,
    pub counterparty_address: Option<String>,
    pub counterparty_cluster_name: Option<String>,
    pub counterparty_shared_name: Option<String>,
    pub counterparty_category: Option<String>,
    pub value: Option<f64>,
    pub usd_value: Option<f64>,
    /// 0 normal, 1 anomalous.
    pub label: u8,
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(DATE_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, DATE_FORMAT)
        .map(|naive| naive.and_utc())
        .map_err(|e| Error::param(format!("bad timestamp {s:?}: {e}")))
}

fn opt(field: &str) -> Option<String> {
    if field.is_empty() {
        None
    } else {
        Some(field.to_string())
    }
}

/// Reads a comma-separated transaction file with a header row.
pub fn parse_transactions<R: Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; HEADER.len()];
    let mut missing = Vec::new();
    for (slot, name) in index.iter_mut().zip(HEADER) {
        match headers.iter().position(|h| h == name) {
            Some(pos) => *slot = pos,
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing header column(s): {}", missing.join(", "))));
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(index[k]).unwrap_or("");
        let row_err = |message: String| Error::Row { line, message };

        let timestamp = match field(1) {
            "" => None,
            s => Some(parse_timestamp(s).map_err(|e| row_err(e.to_string()))?),
        };
        let number = |k: usize| -> Result<Option<f64>> {
            match field(k) {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| row_err(format!("{} is not a finite number: {s:?}", HEADER[k]))),
            }
        };
        let value = number(7)?;
        let usd_value = number(8)?;
        let label = match field(9) {
            "0" => 0,
            "1" => 1,
            s => return Err(row_err(format!("Label must be 0 or 1, got {s:?}"))),
        };
        records.push(TransactionRecord {
            hash: field(0).to_string(),
            timestamp,
            receiving_address: opt(field(2)),
            counterparty_address: opt(field(3)),
            counterparty_cluster_name: opt(field(4)),
            counterparty_shared_name: opt(field(5)),
            counterparty_category: opt(field(6)),
            value,
            usd_value,
            label,
        });
    }
    Ok(records)
}

/// Writes records in the format read by [`parse_transactions`].
///
/// Numbers use the shortest representation that parses back to the same
/// `f64`, so a parse/serialize round trip is exact.
pub fn write_transactions<W: Write>(writer: W, records: &[TransactionRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(HEADER)?;
    let s = |o: &Option<String>| o.clone().unwrap_or_default();
    let num = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.hash.clone(),
            r.timestamp.as_ref().map(format_timestamp).unwrap_or_default(),
            s(&r.receiving_address),
            s(&r.counterparty_address),
            s(&r.counterparty_cluster_name),
            s(&r.counterparty_shared_name),
            s(&r.counterparty_category),
            num(r.value),
            num(r.usd_value),
            r.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows removed by [`clean`], by reason. A row missing several required
/// fields is counted under the first one checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanReport {
    pub missing_date: usize,
    pub missing_receiving_address: usize,
    pub missing_counterparty_address: usize,
}

impl CleanReport {
    pub fn dropped(&self) -> usize {
        self.missing_date + self.missing_receiving_address + self.missing_counterparty_address
    }
}

/// Drops rows lacking a date, receiving address or counterparty address.
/// Extreme values are kept.
pub fn clean(records: Vec<TransactionRecord>) -> (Vec<TransactionRecord>, CleanReport) {
    let mut report = CleanReport::default();
    let kept = records
        .into_iter()
        .filter(|r| {
            if r.timestamp.is_none() {
                report.missing_date += 1;
                false
            } else if r.receiving_address.is_none() {
                report.missing_receiving_address += 1;
                false
            } else if r.counterparty_address.is_none() {
                report.missing_counterparty_address += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, report)
}
