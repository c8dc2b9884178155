//! Per-round telemetry and its CSV form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 10] = [
    "round",
    "eta",
    "test_accuracy",
    "test_loss",
    "train_loss",
    "clip_fraction_benign",
    "clip_fraction_byz",
    "cos_ref_benign",
    "cos_ref_byz",
    "cos_delta_prev",
];

pub const SUMMARY_HEADER: [&str; 5] = ["cell", "label", "final_test_accuracy", "final_test_loss", "error"];

/// One round of telemetry. Test metrics are only present on evaluation rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub eta: f64,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_loss: f64,
    pub clip_fraction_benign: f64,
    pub clip_fraction_byz: f64,
    /// cos(previous aggregate, benign mean)
    pub cos_ref_benign: f64,
    /// cos(previous aggregate, mean Byzantine submission); 0 without Byzantines
    pub cos_ref_byz: f64,
    /// cos(delta_t, delta_{t-1}) with delta = Byzantine submission - benign mean
    pub cos_delta_prev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: usize,
    pub label: String,
    pub final_test_accuracy: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub error: String,
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("not a number: {field:?}")))
}

fn parse_f64(field: &str) -> Result<f64> {
    parse_opt(field)?.ok_or_else(|| Error::invalid("missing numeric field"))
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn metrics_record(row: &MetricsRow) -> [String; 10] {
    [
        row.round.to_string(),
        fmt(row.eta),
        fmt_opt(row.test_accuracy),
        fmt_opt(row.test_loss),
        fmt(row.train_loss),
        fmt(row.clip_fraction_benign),
        fmt(row.clip_fraction_byz),
        fmt(row.cos_ref_benign),
        fmt(row.cos_ref_byz),
        fmt(row.cos_delta_prev),
    ]
}

/// Serializes metrics to CSV bytes (header always present).
pub fn metrics_csv_bytes(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(metrics_record(row))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let bytes = metrics_csv_bytes(rows)?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::invalid(format!("{}: unexpected metrics header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(MetricsRow {
                round: rec[0].parse().map_err(|_| Error::invalid("bad round"))?,
                eta: parse_f64(&rec[1])?,
                test_accuracy: parse_opt(&rec[2])?,
                test_loss: parse_opt(&rec[3])?,
                train_loss: parse_f64(&rec[4])?,
                clip_fraction_benign: parse_f64(&rec[5])?,
                clip_fraction_byz: parse_f64(&rec[6])?,
                cos_ref_benign: parse_f64(&rec[7])?,
                cos_ref_byz: parse_f64(&rec[8])?,
                cos_delta_prev: parse_f64(&rec[9])?,
            })
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        w.write_record([
            row.cell.to_string(),
            row.label.clone(),
            fmt_opt(row.final_test_accuracy),
            fmt_opt(row.final_test_loss),
            row.error.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SUMMARY_HEADER) {
        return Err(Error::invalid(format!("{}: unexpected summary header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SummaryRow {
                cell: rec[0].parse().map_err(|_| Error::invalid("bad cell index"))?,
                label: rec[1].to_string(),
                final_test_accuracy: parse_opt(&rec[2])?,
                final_test_loss: parse_opt(&rec[3])?,
                error: rec[4].to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, acc: Option<f64>) -> MetricsRow {
        MetricsRow {
            round,
            eta: 0.1,
            test_accuracy: acc,
            test_loss: acc.map(|a| 1.0 - a),
            train_loss: 0.123_456_789,
            clip_fraction_benign: 0.25,
            clip_fraction_byz: 0.0,
            cos_ref_benign: 0.9,
            cos_ref_byz: -0.333_333_333,
            cos_delta_prev: 0.0,
        }
    }

    #[test]
    fn empty_rows_give_header_only() {
        let bytes = metrics_csv_bytes(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), METRICS_HEADER.join(",") + "\n");
    }

    #[test]
    fn metrics_round_trip_at_six_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row(1, None), row(2, Some(0.876_543_21))];
        write_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("2,0.100000,0.876543,0.123457,0.123457,0.250000,0.000000,0.900000,-0.333333,0.000000"));
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].test_accuracy, None);
        assert_eq!(back[1].test_accuracy, Some(0.876_543));
        assert_eq!(back[1].cos_ref_byz, -0.333_333);
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![
            SummaryRow {
                cell: 0,
                label: "rop_angle_deg=45".into(),
                final_test_accuracy: Some(0.5),
                final_test_loss: Some(1.25),
                error: String::new(),
            },
            SummaryRow {
                cell: 1,
                label: "rop_angle_deg=90,k=3".into(),
                final_test_accuracy: None,
                final_test_loss: None,
                error: "config: bad".into(),
            },
        ];
        write_summary(&rows, &path).unwrap();
        assert_eq!(read_summary(&path).unwrap(), rows);
    }
}
