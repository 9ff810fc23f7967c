//! Time-series container, CSV ingestion, and fixed-window splitting.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::io::Write;
use std::path::Path;

/// Ordered univariate observations, optionally dated.
///
/// Immutable after construction; values are validated finite and any
/// timestamps strictly increasing and aligned 1:1 with the values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    values: Vec<f64>,
    timestamps: Option<Vec<NaiveDate>>,
}

impl ObservedSeries {
    pub fn new(values: Vec<f64>, timestamps: Option<Vec<NaiveDate>>) -> Result<Self> {
        Self::with_min_len(values, timestamps, 2)
    }

    // Holdout slices from `split` may legitimately have length 1.
    fn with_min_len(
        values: Vec<f64>,
        timestamps: Option<Vec<NaiveDate>>,
        min: usize,
    ) -> Result<Self> {
        if values.len() < min {
            return Err(Error::SeriesTooShort { len: values.len(), min });
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i + 1 });
            }
        }
        if let Some(dates) = &timestamps {
            if dates.len() != values.len() {
                return Err(Error::Config(format!(
                    "{} timestamps for {} values",
                    dates.len(),
                    values.len()
                )));
            }
            for (i, pair) in dates.windows(2).enumerate() {
                if pair[1] <= pair[0] {
                    return Err(Error::NonIncreasingDates { row: i + 2 });
                }
            }
        }
        Ok(Self { values, timestamps })
    }

    /// Values without dates; used for simulation output.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, None)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[NaiveDate]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Empirical p-quantile (type-1: order statistic at rank ceil(p*n)).
    pub fn empirical_quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        let mut sorted = self.values.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
        sorted[rank - 1]
    }
}

/// Fixed estimation window `n` followed by a holdout of length `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleSplit {
    pub n: usize,
    pub tau: usize,
}

impl SampleSplit {
    pub fn new(n: usize, tau: usize) -> Result<Self> {
        if n < 2 || tau < 1 {
            return Err(Error::Config(format!("invalid split: n={n}, tau={tau}")));
        }
        Ok(Self { n, tau })
    }
}

/// Pure prefix split: first `n` values in-sample, next `tau` held out.
pub fn split(series: &ObservedSeries, spec: SampleSplit) -> Result<(ObservedSeries, ObservedSeries)> {
    let needed = spec.n + spec.tau;
    if needed > series.len() {
        return Err(Error::SplitOutOfRange { n: spec.n, tau: spec.tau, len: series.len() });
    }
    let take = |range: std::ops::Range<usize>| -> Result<ObservedSeries> {
        ObservedSeries::with_min_len(
            series.values[range.clone()].to_vec(),
            series.timestamps.as_ref().map(|d| d[range].to_vec()),
            1,
        )
    };
    Ok((take(0..spec.n)?, take(spec.n..needed)?))
}

/// Load a series from CSV with header `date,value` or `value`.
///
/// Rows are never reordered or dropped; the first offending row aborts the
/// load with its 1-based data-row index.
pub fn load_csv(path: &Path) -> Result<ObservedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::CsvRow { row: 0, msg: e.to_string() })?;

    let headers = rdr
        .headers()
        .map_err(|e| Error::CsvRow { row: 0, msg: e.to_string() })?
        .clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    let dated = match cols.as_slice() {
        ["date", "value"] => true,
        ["value"] => false,
        other => {
            return Err(Error::CsvRow {
                row: 0,
                msg: format!("expected header `date,value` or `value`, got {other:?}"),
            })
        }
    };

    let mut values = Vec::new();
    let mut dates = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::CsvRow { row, msg: e.to_string() })?;
        let value_field = if dated { rec.get(1) } else { rec.get(0) };
        let value_field = value_field.ok_or_else(|| Error::CsvRow {
            row,
            msg: "missing value column".into(),
        })?;
        let v: f64 = value_field
            .trim()
            .parse()
            .map_err(|e| Error::CsvRow { row, msg: format!("bad value `{value_field}`: {e}") })?;
        if !v.is_finite() {
            return Err(Error::NonFinite { row });
        }
        if dated {
            let d = rec.get(0).unwrap_or("").trim();
            let date = NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::CsvRow { row, msg: format!("bad date `{d}`: {e}") })?;
            if let Some(prev) = dates.last() {
                if date <= *prev {
                    return Err(Error::NonIncreasingDates { row });
                }
            }
            dates.push(date);
        }
        values.push(v);
    }
    ObservedSeries::new(values, dated.then_some(dates))
}

/// Write a series back out in the same CSV dialect `load_csv` accepts.
///
/// Floats use shortest round-trip formatting, so write -> load -> write is
/// byte-stable.
pub fn write_csv(series: &ObservedSeries, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match series.timestamps() {
        Some(dates) => {
            writeln!(out, "date,value")?;
            for (d, v) in dates.iter().zip(series.values()) {
                writeln!(out, "{},{}", d.format("%Y-%m-%d"), v)?;
            }
        }
        None => {
            writeln!(out, "value")?;
            for v in series.values() {
                writeln!(out, "{v}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
