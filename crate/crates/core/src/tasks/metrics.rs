//! Long-format metrics table: one row per (run, metric, class).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 7] = [
    "run-id",
    "mode",
    "T",
    "seed",
    "metric-name",
    "class",
    "value",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "run-id")]
    pub run_id: String,
    pub mode: String,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub seed: u64,
    #[serde(rename = "metric-name")]
    pub metric: String,
    /// Class index, or `"mean"` for the average over classes.
    pub class: String,
    pub value: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("metrics csv: {e}"))
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Config(format!(
            "metrics csv: unexpected header {header:?}"
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(metric: &str, class: &str, value: f64) -> MetricRow {
        MetricRow {
            run_id: "r1".into(),
            mode: "update2".into(),
            iterations: 2,
            seed: 7,
            metric: metric.into(),
            class: class.into(),
            value,
        }
    }

    #[test]
    fn round_trip() {
        let rows = vec![
            row("det_ap", "0", 0.25),
            row("det_ap", "mean", 0.1 + 0.2),
            row("cls_map", "mean", 1.0),
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("run-id,mode,T,seed,metric-name,class,value\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_metrics_csv(&b"a,b\n1,2\n"[..]).is_err());
    }
}
