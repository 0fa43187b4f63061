//! Daily flux series: parsing, validation, and serialization of delimited text.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Days between consecutive samples.
pub const STEP_DAYS: i64 = 1;

/// Longest gap (in days) that [`GapPolicy::Interpolate`] may fill.
pub const MAX_INTERPOLATED_GAP: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-uniform sampling: {missing} missing day(s) after {after}")]
    NonUniformSampling { after: NaiveDate, missing: i64 },
    #[error("line {line}: missing value")]
    MissingValue { line: u64 },
    #[error("gap of {len} day(s) starting {start} exceeds the interpolation limit of {max}")]
    GapTooLong { start: NaiveDate, len: usize, max: usize },
    #[error("duplicate date {date} (line {line})")]
    DuplicateDate { date: NaiveDate, line: u64 },
    #[error("empty series")]
    EmptySeries,
    #[error("series too short: {len} < {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("quality flag {value} at index {index} outside [0, 1]")]
    QfOutOfRange { index: usize, value: f64 },
    #[error("quality flag length {qf} differs from value length {values}")]
    QfLengthMismatch { values: usize, qf: usize },
    #[error("invalid column spec: {0}")]
    InvalidColumnSpec(String),
    #[error("column {0} not found in header")]
    UnknownColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A column addressed by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Numeric strings address by position, anything else by name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, header: Option<&csv::StringRecord>) -> Result<usize, IngestError> {
        match self {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|c| c.trim() == name))
                .ok_or_else(|| IngestError::UnknownColumn(name.clone())),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Name(n) => write!(f, "{n}"),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

/// What to do with missing days or missing cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GapPolicy {
    #[default]
    Reject,
    /// Linearly interpolate interior gaps of at most [`MAX_INTERPOLATED_GAP`] days.
    /// Filled samples receive quality flag 0.
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub date_column: ColumnRef,
    pub value_column: ColumnRef,
    pub qf_column: Option<ColumnRef>,
    pub delimiter: char,
    pub decimal_mark: char,
    pub has_header: bool,
    pub gap_policy: GapPolicy,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            date_column: ColumnRef::Index(0),
            value_column: ColumnRef::Index(1),
            qf_column: None,
            delimiter: ',',
            decimal_mark: '.',
            has_header: false,
            gap_policy: GapPolicy::Reject,
        }
    }
}

impl ColumnSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.qf_column.as_ref() == Some(&self.value_column) {
            return Err(IngestError::InvalidColumnSpec(
                "value and quality-flag columns coincide".into(),
            ));
        }
        if self.delimiter == self.decimal_mark {
            return Err(IngestError::InvalidColumnSpec(
                "delimiter equals decimal mark".into(),
            ));
        }
        if !self.delimiter.is_ascii() {
            return Err(IngestError::InvalidColumnSpec("delimiter must be ASCII".into()));
        }
        let named = |c: &ColumnRef| matches!(c, ColumnRef::Name(_));
        let any_named = named(&self.date_column)
            || named(&self.value_column)
            || self.qf_column.as_ref().is_some_and(named);
        if any_named && !self.has_header {
            return Err(IngestError::InvalidColumnSpec(
                "named columns require a header row".into(),
            ));
        }
        Ok(())
    }
}

/// One uniformly sampled daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSeries<T> {
    pub site_id: String,
    pub variable: String,
    pub start_date: NaiveDate,
    pub values: Vec<T>,
    /// Per-sample confidence in [0, 1].
    pub qf: Option<Vec<T>>,
}

impl<T: Real> FluxSeries<T> {
    pub fn new(start_date: NaiveDate, values: Vec<T>) -> Self {
        Self {
            site_id: String::new(),
            variable: String::new(),
            start_date,
            values,
            qf: None,
        }
    }

    pub fn with_labels(mut self, site_id: impl Into<String>, variable: impl Into<String>) -> Self {
        self.site_id = site_id.into();
        self.variable = variable.into();
        self
    }

    pub fn with_qf(mut self, qf: Vec<T>) -> Self {
        self.qf = Some(qf);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start_date + Duration::days(index as i64 * STEP_DAYS)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len()).map(|i| self.date(i))
    }

    /// Converts the sample type.
    pub fn cast<U: Real>(&self) -> FluxSeries<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        FluxSeries {
            site_id: self.site_id.clone(),
            variable: self.variable.clone(),
            start_date: self.start_date,
            values: conv(&self.values),
            qf: self.qf.as_deref().map(conv),
        }
    }
}

struct RawRow {
    line: u64,
    date: NaiveDate,
    value: Option<f64>,
    qf: Option<f64>,
}

fn parse_date(cell: &str) -> Option<NaiveDate> {
    let cell = cell.trim();
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(cell, "%Y%m%d"))
        .ok()
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_number(cell: &str, decimal_mark: char, line: u64) -> Result<Option<f64>, IngestError> {
    if is_missing(cell) {
        return Ok(None);
    }
    let text = if decimal_mark == '.' {
        cell.trim().to_string()
    } else {
        cell.trim().replace(decimal_mark, ".")
    };
    text.parse::<f64>()
        .map(Some)
        .map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse number {:?}", cell.trim()),
        })
}

/// Parses a delimited daily series. Rows may appear in any order.
pub fn parse_flux_csv<T: Real, R: Read>(
    source: R,
    spec: &ColumnSpec,
) -> Result<FluxSeries<T>, IngestError> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .has_headers(spec.has_header)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(source);
    let header = if spec.has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };
    let date_col = spec.date_column.resolve(header.as_ref())?;
    let value_col = spec.value_column.resolve(header.as_ref())?;
    let qf_col = spec
        .qf_column
        .as_ref()
        .map(|c| c.resolve(header.as_ref()))
        .transpose()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = |i: usize| {
            record.get(i).ok_or_else(|| IngestError::MalformedRow {
                line,
                reason: format!("missing column {i}"),
            })
        };
        let date_cell = cell(date_col)?;
        let date = parse_date(date_cell).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse date {:?}", date_cell.trim()),
        })?;
        let value = parse_number(cell(value_col)?, spec.decimal_mark, line)?;
        let qf = match qf_col {
            Some(c) => parse_number(cell(c)?, spec.decimal_mark, line)?,
            None => None,
        };
        rows.push(RawRow { line, date, value, qf });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptySeries);
    }
    rows.sort_by_key(|r| r.date);
    for pair in rows.windows(2) {
        if pair[0].date == pair[1].date {
            return Err(IngestError::DuplicateDate {
                date: pair[1].date,
                line: pair[1].line.max(pair[0].line),
            });
        }
    }

    let start = rows[0].date;
    let end = rows[rows.len() - 1].date;
    let n = (end - start).num_days() as usize + 1;
    let mut values: Vec<Option<f64>> = vec![None; n];
    let mut qf: Vec<Option<f64>> = vec![None; n];
    let mut lines: Vec<u64> = vec![0; n];
    for r in &rows {
        let i = (r.date - start).num_days() as usize;
        values[i] = r.value;
        qf[i] = r.qf;
        lines[i] = r.line;
    }

    let filled = fill_gaps(&mut values, &lines, start, spec.gap_policy)?;
    let mut series = FluxSeries::new(
        start,
        values
            .into_iter()
            .map(|v| T::lit(v.expect("gaps filled")))
            .collect(),
    );
    if qf_col.is_some() {
        let raw: Vec<f64> = qf
            .iter()
            .zip(&filled)
            .map(|(q, &was_filled)| if was_filled { 0.0 } else { q.unwrap_or(0.0) })
            .collect();
        let scale = if raw.iter().cloned().fold(0.0, f64::max) > 1.0 {
            100.0
        } else {
            1.0
        };
        series.qf = Some(raw.into_iter().map(|q| T::lit(q / scale)).collect());
    }
    Ok(series)
}

/// Applies the gap policy in place; returns which samples were synthesized.
fn fill_gaps(
    values: &mut [Option<f64>],
    lines: &[u64],
    start: NaiveDate,
    policy: GapPolicy,
) -> Result<Vec<bool>, IngestError> {
    let n = values.len();
    let mut filled = vec![false; n];
    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let len = i - gap_start;
        let whole_days_missing = lines[gap_start..i].iter().all(|&l| l == 0);
        match policy {
            GapPolicy::Reject => {
                return Err(if whole_days_missing {
                    IngestError::NonUniformSampling {
                        after: start + Duration::days(gap_start as i64 - 1),
                        missing: len as i64,
                    }
                } else {
                    let line = lines[gap_start..i]
                        .iter()
                        .copied()
                        .find(|&l| l != 0)
                        .unwrap_or(0);
                    IngestError::MissingValue { line }
                });
            }
            GapPolicy::Interpolate => {
                let gap_date = start + Duration::days(gap_start as i64);
                if gap_start == 0 || i == n || len > MAX_INTERPOLATED_GAP {
                    return Err(IngestError::GapTooLong {
                        start: gap_date,
                        len,
                        max: MAX_INTERPOLATED_GAP,
                    });
                }
                let left = values[gap_start - 1].expect("bounded gap");
                let right = values[i].expect("bounded gap");
                for (k, slot) in values[gap_start..i].iter_mut().enumerate() {
                    let w = (k + 1) as f64 / (len + 1) as f64;
                    *slot = Some(left + w * (right - left));
                    filled[gap_start + k] = true;
                }
            }
        }
    }
    Ok(filled)
}

/// Writes `date,value[,qf]` with ISO dates and shortest round-trip number formatting.
pub fn write_flux_csv<T: Real, W: Write>(series: &FluxSeries<T>, sink: W) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    match &series.qf {
        Some(_) => w.write_record(["date", "value", "qf"])?,
        None => w.write_record(["date", "value"])?,
    }
    for (i, date) in series.dates().enumerate() {
        let date = date.format("%Y-%m-%d").to_string();
        let value = series.values[i].to_string();
        match &series.qf {
            Some(qf) => w.write_record([date, value, qf[i].to_string()])?,
            None => w.write_record([date, value])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Column spec matching [`write_flux_csv`] output.
pub fn written_column_spec(with_qf: bool) -> ColumnSpec {
    ColumnSpec {
        date_column: ColumnRef::Name("date".into()),
        value_column: ColumnRef::Name("value".into()),
        qf_column: with_qf.then(|| ColumnRef::Name("qf".into())),
        has_header: true,
        ..ColumnSpec::default()
    }
}

/// Checks length, finiteness, and quality-flag range.
pub fn validate_series<T: Real>(
    series: FluxSeries<T>,
    min_len: usize,
) -> Result<FluxSeries<T>, IngestError> {
    if series.is_empty() {
        return Err(IngestError::EmptySeries);
    }
    if series.len() < min_len {
        return Err(IngestError::TooShort {
            len: series.len(),
            min: min_len,
        });
    }
    if let Some(index) = series.values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteValue { index });
    }
    if let Some(qf) = &series.qf {
        if qf.len() != series.len() {
            return Err(IngestError::QfLengthMismatch {
                values: series.len(),
                qf: qf.len(),
            });
        }
        if let Some(index) = qf
            .iter()
            .position(|&q| !(q >= T::zero() && q <= T::one()))
        {
            return Err(IngestError::QfOutOfRange {
                index,
                value: qf[index].as_f64(),
            });
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let src = "2007-01-01,1.0\n2007-01-02,2.0\n2007-01-03,3.0\n";
        let s: FluxSeries<f64> = parse_flux_csv(src.as_bytes(), &ColumnSpec::default()).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.start_date, d(2007, 1, 1));
        assert!(s.qf.is_none());
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let sorted = "2007-01-01,1.0\n2007-01-02,2.0\n2007-01-03,3.0\n";
        let shuffled = "2007-01-03,3.0\n2007-01-01,1.0\n2007-01-02,2.0\n";
        let a: FluxSeries<f64> = parse_flux_csv(sorted.as_bytes(), &ColumnSpec::default()).unwrap();
        let b: FluxSeries<f64> =
            parse_flux_csv(shuffled.as_bytes(), &ColumnSpec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_day_is_non_uniform() {
        let src = "2007-01-01,1.0\n2007-01-03,3.0\n";
        let err = parse_flux_csv::<f64, _>(src.as_bytes(), &ColumnSpec::default()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::NonUniformSampling { missing: 1, after } if after == d(2007, 1, 1)
        ));
    }

    #[test]
    fn interpolation_fills_short_gaps_only() {
        let spec = ColumnSpec {
            gap_policy: GapPolicy::Interpolate,
            qf_column: Some(ColumnRef::Index(2)),
            ..ColumnSpec::default()
        };
        let src = "2007-01-01,1.0,1\n2007-01-02,NA,1\n2007-01-04,4.0,1\n";
        let s: FluxSeries<f64> = parse_flux_csv(src.as_bytes(), &spec).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.qf.unwrap(), vec![1.0, 0.0, 0.0, 1.0]);

        let long = "2007-01-01,1.0,1\n2007-01-08,8.0,1\n";
        let err = parse_flux_csv::<f64, _>(long.as_bytes(), &spec).unwrap_err();
        assert!(matches!(err, IngestError::GapTooLong { len: 6, .. }));
    }

    #[test]
    fn missing_cell_rejected_by_default() {
        let src = "2007-01-01,1.0\n2007-01-02,\n2007-01-03,3.0\n";
        let err = parse_flux_csv::<f64, _>(src.as_bytes(), &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingValue { line: 2 }));
    }

    #[test]
    fn malformed_row_reports_line() {
        let src = "2007-01-01,1.0\n2007-01-02,abc\n";
        let err = parse_flux_csv::<f64, _>(src.as_bytes(), &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { line: 2, .. }));
        let src = "not-a-date,1.0\n";
        let err = parse_flux_csv::<f64, _>(src.as_bytes(), &ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn duplicates_and_empty_rejected() {
        let src = "2007-01-01,1.0\n2007-01-01,2.0\n";
        assert!(matches!(
            parse_flux_csv::<f64, _>(src.as_bytes(), &ColumnSpec::default()),
            Err(IngestError::DuplicateDate { .. })
        ));
        assert!(matches!(
            parse_flux_csv::<f64, _>("".as_bytes(), &ColumnSpec::default()),
            Err(IngestError::EmptySeries)
        ));
    }

    #[test]
    fn named_columns_percent_qf_and_decimal_comma() {
        let spec = ColumnSpec {
            date_column: ColumnRef::Name("TIMESTAMP".into()),
            value_column: ColumnRef::Name("GPP".into()),
            qf_column: Some(ColumnRef::Name("GPP_QC".into())),
            delimiter: ';',
            decimal_mark: ',',
            has_header: true,
            gap_policy: GapPolicy::Reject,
        };
        let src = "TIMESTAMP;GPP;GPP_QC\n20070101;1,5;100\n20070102;2,25;50\n";
        let s: FluxSeries<f64> = parse_flux_csv(src.as_bytes(), &spec).unwrap();
        assert_eq!(s.values, vec![1.5, 2.25]);
        assert_eq!(s.qf.unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn column_spec_invariants() {
        let bad = ColumnSpec {
            qf_column: Some(ColumnRef::Index(1)),
            ..ColumnSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = ColumnSpec {
            decimal_mark: ',',
            ..ColumnSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = ColumnSpec {
            value_column: ColumnRef::Name("x".into()),
            ..ColumnSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn validation_errors() {
        let base = FluxSeries::new(d(2007, 1, 1), vec![1.0_f64; 5114]);
        assert!(validate_series(base.clone(), 5114).is_ok());
        assert!(matches!(
            validate_series(base.clone(), 5115),
            Err(IngestError::TooShort { len: 5114, min: 5115 })
        ));

        let mut nan = base.clone();
        nan.values[17] = f64::NAN;
        assert!(matches!(
            validate_series(nan, 10),
            Err(IngestError::NonFiniteValue { index: 17 })
        ));

        let mut qf = vec![1.0; 5114];
        qf[3] = 1.5;
        assert!(matches!(
            validate_series(base.with_qf(qf), 10),
            Err(IngestError::QfOutOfRange { index: 3, .. })
        ));
    }
}
