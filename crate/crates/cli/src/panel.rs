//! Return panels and CSV ingestion.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MIN_ROWS: usize = 500;
pub const DEFAULT_SPLIT: f64 = 0.75;
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Tokens read as a missing value.
const MISSING: [&str; 6] = ["", "NA", "N/A", "NaN", "nan", "null"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Prices,
    Returns,
}

impl InputMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::Prices => "prices",
            InputMode::Returns => "returns",
        }
    }
}

/// Aligned percent log-returns with a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// `T x n`.
    pub returns: DMatrix<f64>,
    /// First test-set row.
    pub split_index: usize,
}

/// `ceil(fraction * t)`, the first row of the test set. A fraction of 1 puts
/// every row in the training set.
pub fn split_index(t: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Config(format!("split must lie in (0, 1], got {fraction}")));
    }
    let s = (fraction * t as f64).ceil() as usize;
    Ok(s.clamp(1, t))
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, returns: DMatrix<f64>, split: f64) -> Result<Self> {
        let (t, n) = returns.shape();
        let bad = |msg: String| CliError::Config(format!("invalid panel: {msg}"));
        if dates.len() != t || names.len() != n {
            return Err(bad(format!("{} dates and {} names for a {t}x{n} matrix", dates.len(), names.len())));
        }
        if n == 0 || t == 0 {
            return Err(bad("empty panel".into()));
        }
        if let Some(k) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(bad(format!("dates not strictly increasing at row {}", k + 1)));
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite return".into()));
        }
        Ok(ReturnPanel {
            split_index: split_index(t, split)?,
            dates,
            names,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.returns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.returns.ncols()
    }

    pub fn test_len(&self) -> usize {
        self.len() - self.split_index
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).iter().copied().collect()
    }

    pub fn train_column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).rows(0, self.split_index).iter().copied().collect()
    }

    pub fn test_column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).rows(self.split_index, self.test_len()).iter().copied().collect()
    }

    pub fn test_matrix(&self) -> DMatrix<f64> {
        self.returns.rows(self.split_index, self.test_len()).into_owned()
    }

    /// Returns-mode CSV of the whole panel.
    pub fn to_returns_csv(&self) -> String {
        let mut s = header(&self.names);
        for (t, d) in self.dates.iter().enumerate() {
            let _ = write!(s, "{}", d.format(DATE_FORMAT));
            for v in self.returns.row(t).iter() {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Prices-mode CSV: every series starts at 100 on the day before the
    /// first return.
    pub fn to_prices_csv(&self) -> String {
        let mut s = header(&self.names);
        let first = self.dates[0].pred_opt().unwrap_or(self.dates[0]);
        let mut log_p = vec![100f64.ln(); self.n_series()];
        let push_row = |s: &mut String, d: NaiveDate, lp: &[f64]| {
            let _ = write!(s, "{}", d.format(DATE_FORMAT));
            for v in lp {
                let _ = write!(s, ",{:?}", v.exp());
            }
            s.push('\n');
        };
        push_row(&mut s, first, &log_p);
        for (t, d) in self.dates.iter().enumerate() {
            for (j, lp) in log_p.iter_mut().enumerate() {
                *lp += self.returns[(t, j)] / 100.0;
            }
            push_row(&mut s, *d, &log_p);
        }
        s
    }
}

fn header(names: &[String]) -> String {
    let mut s = String::from("date");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub mode: InputMode,
    pub split: f64,
    pub min_rows: usize,
}

impl IngestOptions {
    pub fn new(mode: InputMode) -> Self {
        IngestOptions {
            mode,
            split: DEFAULT_SPLIT,
            min_rows: MIN_ROWS,
        }
    }
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path).map_err(CliError::io(format!("open {}", path.display())))?;
    ingest_reader(file, &path.display().to_string(), opts)
}

/// Reads a `date,<series>...` CSV. Rows with any missing value are dropped
/// before prices are differenced, so a gap yields one return spanning it.
pub fn ingest_reader<R: Read>(reader: R, source_name: &str, opts: &IngestOptions) -> Result<ReturnPanel> {
    let err = |line: usize, msg: String| CliError::Ingest {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(err(1, "need a date column and at least one series".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if let Some(empty) = names.iter().position(String::is_empty) {
        return Err(err(1, format!("series {} has an empty name", empty + 1)));
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], DATE_FORMAT)
            .map_err(|e| err(line, format!("bad date `{}`: {e}", &rec[0])))?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(err(line, format!("date {date} does not follow {prev}")));
            }
        }
        let mut values = Vec::with_capacity(names.len());
        let mut missing = false;
        for field in rec.iter().skip(1) {
            if MISSING.contains(&field) {
                missing = true;
                continue;
            }
            let v: f64 = field.parse().map_err(|_| err(line, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite value `{field}`")));
            }
            if opts.mode == InputMode::Prices && v <= 0.0 {
                return Err(err(line, format!("price must be positive, got {v}")));
            }
            values.push(v);
        }
        // Dropped rows keep their date so later rows are still checked for
        // monotonicity.
        if missing {
            dropped += 1;
            values.clear();
        }
        dates.push(date);
        rows.push(values);
    }
    if dropped > 0 {
        log::warn!("{source_name}: dropped {dropped} rows with missing values");
    }
    let kept: Vec<(NaiveDate, Vec<f64>)> = dates.into_iter().zip(rows).filter(|(_, r)| !r.is_empty()).collect();

    let (dates, values): (Vec<NaiveDate>, Vec<Vec<f64>>) = match opts.mode {
        InputMode::Returns => kept.into_iter().unzip(),
        InputMode::Prices => kept
            .windows(2)
            .map(|w| {
                let r = w[1].1.iter().zip(&w[0].1).map(|(p1, p0)| 100.0 * (p1 / p0).ln()).collect();
                (w[1].0, r)
            })
            .unzip(),
    };
    if values.len() < opts.min_rows {
        return Err(err(
            0,
            format!("{} usable rows, at least {} required", values.len(), opts.min_rows),
        ));
    }
    let n = names.len();
    let m = DMatrix::from_fn(values.len(), n, |t, j| values[t][j]);
    ReturnPanel::new(dates, names, m, opts.split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(mode: InputMode, min_rows: usize) -> IngestOptions {
        IngestOptions {
            mode,
            split: DEFAULT_SPLIT,
            min_rows,
        }
    }

    #[test]
    fn price_pair_gives_log_return() {
        let csv = "date,A\n2020-01-01,100\n2020-01-02,101\n";
        let p = ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Prices, 1)).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.returns[(0, 0)] - 0.995_033_085_316_808_3).abs() < 1e-12);
        assert_eq!(p.dates[0], NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let mut csv = String::from("date,A\n");
        for d in 1..=20 {
            csv.push_str(&format!("2020-01-{d:02},50\n"));
        }
        let p = ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Prices, 10)).unwrap();
        assert!(p.returns.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn non_monotone_dates_fail_with_line() {
        let csv = "date,A\n2020-01-02,1\n2020-01-01,2\n";
        match ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Returns, 1)) {
            Err(CliError::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let csv = "date,A,B\n2020-01-01,1,2\n2020-01-02,1,x\n";
        match ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Returns, 1)) {
            Err(CliError::Ingest { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_rows_are_dropped_and_prices_span_the_gap() {
        let csv = "date,A,B\n2020-01-01,100,10\n2020-01-02,NA,11\n2020-01-03,110,12\n";
        let p = ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Prices, 1)).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.returns[(0, 0)] - 100.0 * 1.1f64.ln()).abs() < 1e-12);
        assert!((p.returns[(0, 1)] - 100.0 * 1.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows_rejected() {
        let csv = "date,A\n2020-01-01,1\n2020-01-02,2\n";
        let e = ingest_reader(csv.as_bytes(), "t", &opts(InputMode::Returns, MIN_ROWS)).unwrap_err();
        assert!(e.to_string().contains("500"));
    }

    #[test]
    fn split_is_ceiling_of_fraction() {
        assert_eq!(split_index(8000, 0.75).unwrap(), 6000);
        assert_eq!(split_index(8302, 0.75).unwrap(), 6227);
        assert_eq!(8302 - split_index(8302, 0.75).unwrap(), 2075);
        assert_eq!(split_index(10, 1.0).unwrap(), 10);
        assert!(split_index(10, 0.0).is_err());
    }

    #[test]
    fn prices_csv_roundtrips_returns() {
        let dates: Vec<NaiveDate> = (1..=5).map(|d| NaiveDate::from_ymd_opt(2021, 3, d).unwrap()).collect();
        let r = DMatrix::from_fn(5, 2, |t, j| (t as f64 - 2.0) * 0.7 + j as f64);
        let p = ReturnPanel::new(dates, vec!["A".into(), "B".into()], r, 0.6).unwrap();
        let back = ingest_reader(p.to_prices_csv().as_bytes(), "t", &IngestOptions {
            mode: InputMode::Prices,
            split: 0.6,
            min_rows: 1,
        })
        .unwrap();
        assert_eq!(back.dates, p.dates);
        assert!((back.returns.clone() - &p.returns).amax() < 1e-9);
        let same = ingest_reader(p.to_returns_csv().as_bytes(), "t", &IngestOptions {
            mode: InputMode::Returns,
            split: 0.6,
            min_rows: 1,
        })
        .unwrap();
        assert_eq!(same, p);
    }
}
