//! Merges rates and FER tables into one tidy long-format table for
//! external plotting tools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{read_csv, RateRow, RATES_SCHEMA};
use crate::link::spectral_efficiency;
use crate::polar::{FerRow, FER_SCHEMA};

/// Header comment of the merged table.
pub const PLOTDATA_SCHEMA: &str = "# sicdd plotdata v1";

/// One observation: a single metric of a single series at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    /// Label of the input the row came from.
    pub source: String,
    pub snr_db: f64,
    /// Curve name, e.g. `4-ASK sic`.
    pub series: String,
    #[serde(rename = "S")]
    pub stages: usize,
    pub stage: Option<usize>,
    pub level: Option<usize>,
    pub metric: String,
    pub value: f64,
}

fn rate_rows(source: &str, rows: Vec<RateRow>) -> Vec<PlotRow> {
    let mut out = Vec::with_capacity(rows.len() * 3);
    for r in rows {
        let series = format!("{} {}", r.alphabet, r.kind);
        let mut push = |metric: &str, value: f64| {
            out.push(PlotRow {
                source: source.to_string(),
                snr_db: r.snr_db,
                series: series.clone(),
                stages: r.stages,
                stage: r.stage,
                level: r.level,
                metric: metric.to_string(),
                value,
            })
        };
        push("rate_bpcu", r.rate_bpcu);
        push("stderr", r.stderr);
        push("se_bit_per_s_hz", spectral_efficiency(r.rate_bpcu, r.alpha));
    }
    out
}

fn fer_rows(source: &str, rows: Vec<FerRow>) -> Vec<PlotRow> {
    let mut out = Vec::with_capacity(rows.len() * 3);
    for r in rows {
        let series = format!("fer L={}", r.list_size);
        for (metric, value) in [("fer", r.fer), ("ci_lo", r.ci_lo), ("ci_hi", r.ci_hi)] {
            out.push(PlotRow {
                source: source.to_string(),
                snr_db: r.snr_db,
                series: series.clone(),
                stages: r.stages,
                stage: None,
                level: None,
                metric: metric.to_string(),
                value,
            });
        }
    }
    out
}

/// Converts and concatenates `(label, text)` inputs in order. Each input
/// is a rates table, a FER table or an already merged table.
pub fn merge(inputs: &[(String, String)]) -> Result<Vec<PlotRow>> {
    let mut out = Vec::new();
    for (label, text) in inputs {
        let first = text.lines().next().unwrap_or("").trim();
        match first {
            RATES_SCHEMA => out.extend(rate_rows(label, read_csv(text, RATES_SCHEMA)?)),
            FER_SCHEMA => out.extend(fer_rows(label, read_csv(text, FER_SCHEMA)?)),
            PLOTDATA_SCHEMA => out.extend(read_csv::<PlotRow>(text, PLOTDATA_SCHEMA)?),
            other => return Err(Error::Schema(format!("{label}: unrecognized table header {other:?}"))),
        }
    }
    Ok(out)
}
