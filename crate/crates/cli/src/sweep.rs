//! One report per value of a single system parameter.

use std::io::Write;
use std::str::FromStr;

use invdim_core::bounds::Theorem;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::report::{build_report, DimensionReport};

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("range must look like name=v1,v2,... or name=start:stop:count, got {0:?}")]
    Syntax(String),
    #[error("range for `{0}` is empty")]
    EmptyRange(String),
    #[error("range value {0:?} is not a number")]
    BadValue(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRange {
    pub param: String,
    pub values: Vec<f64>,
}

fn number(s: &str) -> Result<f64, SweepError> {
    s.trim().parse().map_err(|_| SweepError::BadValue(s.to_string()))
}

impl FromStr for SweepRange {
    type Err = SweepError;

    /// `lambda=0.1,0.2,0.3` lists values; `lambda=0.1:0.4:4` gives 4 evenly
    /// spaced values including both ends.
    fn from_str(s: &str) -> Result<Self, SweepError> {
        let (name, spec) = s.split_once('=').ok_or_else(|| SweepError::Syntax(s.to_string()))?;
        let param = name.trim().to_string();
        if param.is_empty() {
            return Err(SweepError::Syntax(s.to_string()));
        }
        let spec = spec.trim();
        let values = if spec.is_empty() {
            Vec::new()
        } else if spec.contains(':') {
            let parts: Vec<&str> = spec.split(':').collect();
            let [start, stop, count] = parts[..] else { return Err(SweepError::Syntax(s.to_string())) };
            let (a, b) = (number(start)?, number(stop)?);
            let count: usize = count.trim().parse().map_err(|_| SweepError::BadValue(count.to_string()))?;
            match count {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
            }
        } else {
            spec.split(',').map(number).collect::<Result<_, _>>()?
        };
        if values.is_empty() {
            return Err(SweepError::EmptyRange(param));
        }
        Ok(Self { param, values })
    }
}

/// One line of sweep output. Bound columns are empty when inapplicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub empirical_box: Option<f64>,
    pub empirical_lemma21: Option<f64>,
    pub thm11: Option<f64>,
    pub thm12: Option<f64>,
    pub thm25: Option<f64>,
    pub rmk24: Option<f64>,
    /// `true`, `false`, or `error`.
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_report(parameter: f64, report: &DimensionReport) -> Self {
        let bound = |t| report.bound(t).and_then(|b| b.value);
        let error = (!report.failures.is_empty()).then(|| {
            report.failures.iter().map(|f| format!("[{}] {}", f.stage, f.message)).collect::<Vec<_>>().join("; ")
        });
        Self {
            parameter,
            empirical_box: report.empirical.box_counting.as_ref().map(|f| f.estimate),
            empirical_lemma21: report.empirical.lemma21.as_ref().map(|f| f.estimate),
            thm11: bound(Theorem::Thm11),
            thm12: bound(Theorem::Thm12),
            thm25: bound(Theorem::Thm25),
            rmk24: bound(Theorem::Rmk24),
            verdict: if error.is_some() { "error".into() } else { report.all_dominate.to_string() },
            error,
        }
    }

    fn failed(parameter: f64, message: String) -> Self {
        Self {
            parameter,
            empirical_box: None,
            empirical_lemma21: None,
            thm11: None,
            thm12: None,
            thm25: None,
            rmk24: None,
            verdict: "error".into(),
            error: Some(message),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == "true"
    }
}

/// Runs one report per value; a failing value becomes an `error` row.
pub fn run_sweep(base: &RunConfig, range: &SweepRange) -> Vec<SweepRow> {
    range
        .values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.params.insert(range.param.clone(), v);
            match cfg.validate().and_then(|_| build_report(&cfg)) {
                Ok(report) => SweepRow::from_report(v, &report),
                Err(e) => SweepRow::failed(v, e.to_string()),
            }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 8] =
    ["parameter", "empirical_box", "empirical_lemma21", "thm11", "thm12", "thm25", "rmk24", "verdict"];

pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), csv::Error> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.parameter.to_string(),
            cell(r.empirical_box),
            cell(r.empirical_lemma21),
            cell(r.thm11),
            cell(r.thm12),
            cell(r.thm25),
            cell(r.rmk24),
            r.verdict.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
