//! Return-panel ingestion and the leakage-free preparation protocol:
//! log-return computation, chronological 70/10/20 splitting, train-only
//! standardization, and the [`TrainOnlyView`] handle that fitting code uses
//! so validation and test rows cannot flow into grid updates or gradients.

use crate::audit::{AuditHandle, SplitTag};
use csv::ReaderBuilder;
use ndarray::{Array1, Array2, ArrayView2};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
    #[error("csv parse failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("header row with a date column and at least one ticker is required")]
    BadHeader,
    #[error("unparseable cell at data row {row}, column {column} ({ticker}): {cell:?}")]
    BadCell { row: usize, column: usize, ticker: String, cell: String },
    #[error("non-positive price at data row {row}, column {column} ({ticker})")]
    NonPositivePrice { row: usize, column: usize, ticker: String },
    #[error("dates are not strictly increasing at data row {row} ({date})")]
    NonMonotoneDates { row: usize, date: String },
    #[error("duplicate date at data row {row} ({date})")]
    DuplicateDate { row: usize, date: String },
    #[error("fewer than 10 usable rows after ingestion ({0})")]
    TooFewRows(usize),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),
    #[error("asset {ticker} has zero variance on the training split")]
    ConstantAsset { ticker: String },
    #[error("operation requires {expected} panels, got mismatched shapes")]
    ShapeMismatch { expected: String },
    #[error("panels are already standardized")]
    AlreadyStandardized,
}

/// Input layout of a wide CSV: raw price levels or ready-made log-returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvSchema {
    WidePrices,
    WideReturns,
}

/// Which split produced the standardization statistics.
#[derive(Debug, Clone)]
pub struct Standardization {
    pub means: Array1<f64>,
    pub stds: Array1<f64>,
    pub fitted_on: SplitTag,
}

/// A T x N panel of log-returns with a date index.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub values: Array2<f64>,
    pub standardization: Option<Standardization>,
}

impl ReturnPanel {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }
}

/// Chronologically disjoint train/validation/test panels.
#[derive(Debug, Clone)]
pub struct SplitPanels {
    pub train: ReturnPanel,
    pub validation: ReturnPanel,
    pub test: ReturnPanel,
    /// First validation date and first test date.
    pub boundaries: (String, String),
}

impl SplitPanels {
    /// Global row offset of each split in the original panel.
    pub fn offsets(&self) -> (usize, usize, usize) {
        let t = self.train.n_rows();
        let v = self.validation.n_rows();
        (0, t, t + v)
    }

    pub fn total_rows(&self) -> usize {
        self.train.n_rows() + self.validation.n_rows() + self.test.n_rows()
    }

    pub fn is_standardized(&self) -> bool {
        self.train.standardization.is_some()
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("null")
}

/// Load a wide CSV (first column ISO dates, remaining columns one ticker
/// each). Rows with any missing cell are dropped with a logged count; for
/// price panels, per-column log-returns `ln(p_t / p_{t-1})` are computed over
/// the surviving rows and the first row is consumed.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<ReturnPanel, PipelineError> {
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(PipelineError::BadHeader);
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let n = tickers.len();

    let mut dates: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(PipelineError::BadHeader);
        }
        let date = record.get(0).unwrap_or("").to_string();
        let mut row = Vec::with_capacity(n);
        let mut missing = false;
        for (col, cell) in record.iter().skip(1).enumerate() {
            if is_missing(cell) {
                missing = true;
                break;
            }
            let value: f64 = cell.parse().map_err(|_| PipelineError::BadCell {
                row: row_idx,
                column: col + 1,
                ticker: tickers[col].clone(),
                cell: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(PipelineError::BadCell {
                    row: row_idx,
                    column: col + 1,
                    ticker: tickers[col].clone(),
                    cell: cell.to_string(),
                });
            }
            if schema == CsvSchema::WidePrices && value <= 0.0 {
                return Err(PipelineError::NonPositivePrice {
                    row: row_idx,
                    column: col + 1,
                    ticker: tickers[col].clone(),
                });
            }
            row.push(value);
        }
        if missing {
            dropped += 1;
            continue;
        }
        if let Some(last) = dates.last() {
            if date == *last {
                return Err(PipelineError::DuplicateDate { row: row_idx, date });
            }
            if date < *last {
                return Err(PipelineError::NonMonotoneDates { row: row_idx, date });
            }
        }
        dates.push(date);
        rows.push(row);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing cells from {}", path.display());
    }

    let (dates, values) = match schema {
        CsvSchema::WideReturns => {
            let t = rows.len();
            let mut values = Array2::zeros((t, n));
            for (r, row) in rows.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    values[[r, c]] = v;
                }
            }
            (dates, values)
        }
        CsvSchema::WidePrices => {
            let t = rows.len().saturating_sub(1);
            let mut values = Array2::zeros((t, n));
            for r in 0..t {
                for c in 0..n {
                    values[[r, c]] = (rows[r + 1][c] / rows[r][c]).ln();
                }
            }
            (dates.into_iter().skip(1).collect(), values)
        }
    };
    if values.nrows() < 10 {
        return Err(PipelineError::TooFewRows(values.nrows()));
    }
    Ok(ReturnPanel { dates, tickers, values, standardization: None })
}

/// Write a panel back out in `wide_returns` layout. Values use the shortest
/// round-trip decimal form, so reloading reproduces them bit-exactly.
pub fn write_csv(panel: &ReturnPanel, path: &Path) -> Result<(), PipelineError> {
    let mut out = String::new();
    out.push_str("date");
    for t in &panel.tickers {
        let _ = write!(out, ",{t}");
    }
    out.push('\n');
    for r in 0..panel.n_rows() {
        let _ = write!(out, "{}", panel.dates[r]);
        for c in 0..panel.n_assets() {
            let _ = write!(out, ",{}", panel.values[[r, c]]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Chronological split with floor row counts: `floor(f_train T)`,
/// `floor(f_val T)`, remainder. Order is preserved; nothing is shuffled.
pub fn chronological_split(
    panel: &ReturnPanel,
    fractions: (f64, f64, f64),
) -> Result<SplitPanels, PipelineError> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(PipelineError::BadFractions(fractions));
    }
    let t = panel.n_rows();
    let n_train = (ft * t as f64).floor() as usize;
    let n_val = (fv * t as f64).floor() as usize;
    let n_test = t - n_train - n_val;
    if n_train == 0 {
        return Err(PipelineError::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(PipelineError::EmptySplit("validation"));
    }
    if n_test == 0 {
        return Err(PipelineError::EmptySplit("test"));
    }
    let slice = |start: usize, len: usize| ReturnPanel {
        dates: panel.dates[start..start + len].to_vec(),
        tickers: panel.tickers.clone(),
        values: panel.values.slice(ndarray::s![start..start + len, ..]).to_owned(),
        standardization: None,
    };
    let train = slice(0, n_train);
    let validation = slice(n_train, n_val);
    let test = slice(n_train + n_val, n_test);
    let boundaries = (validation.dates[0].clone(), test.dates[0].clone());
    Ok(SplitPanels { train, validation, test, boundaries })
}

/// Standardize all three splits with per-asset mean and (population) standard
/// deviation computed on the training split only. The returned panels carry a
/// record of which split produced the statistics.
pub fn standardize(splits: &SplitPanels, audit: &AuditHandle) -> Result<SplitPanels, PipelineError> {
    if splits.is_standardized() {
        return Err(PipelineError::AlreadyStandardized);
    }
    let train = &splits.train.values;
    let t = train.nrows() as f64;
    let n = train.ncols();
    let mut means = Array1::zeros(n);
    let mut stds = Array1::zeros(n);
    for j in 0..n {
        let mean = train.column(j).sum() / t;
        let var = train.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        if var <= 0.0 {
            return Err(PipelineError::ConstantAsset { ticker: splits.train.tickers[j].clone() });
        }
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    crate::audit::record(audit, "standardize_fit", SplitTag::Train, (0, train.nrows()));

    let record = Standardization { means: means.clone(), stds: stds.clone(), fitted_on: SplitTag::Train };
    let (_, off_v, off_t) = splits.offsets();
    let apply = |panel: &ReturnPanel, tag: SplitTag, offset: usize| -> ReturnPanel {
        crate::audit::record(audit, "standardize_apply", tag, (offset, offset + panel.n_rows()));
        let mut values = panel.values.clone();
        for j in 0..n {
            values.column_mut(j).mapv_inplace(|v| (v - means[j]) / stds[j]);
        }
        ReturnPanel {
            dates: panel.dates.clone(),
            tickers: panel.tickers.clone(),
            values,
            standardization: Some(record.clone()),
        }
    };
    Ok(SplitPanels {
        train: apply(&splits.train, SplitTag::Train, 0),
        validation: apply(&splits.validation, SplitTag::Validation, off_v),
        test: apply(&splits.test, SplitTag::Test, off_t),
        boundaries: splits.boundaries.clone(),
    })
}

/// Access-restricted handle over standardized splits: the only rows reachable
/// through it are training rows, so grid updates and gradient passes that
/// take this type cannot observe validation or test data.
///
/// There is deliberately no accessor for the other splits:
///
/// ```compile_fail
/// fn leak(view: &kanpca::pipeline::TrainOnlyView) {
///     let _ = view.test_rows();
/// }
/// ```
pub struct TrainOnlyView<'a> {
    train: &'a ReturnPanel,
    audit: AuditHandle,
}

/// Build the fitting-side view of standardized splits.
pub fn train_view<'a>(splits: &'a SplitPanels, audit: &AuditHandle) -> TrainOnlyView<'a> {
    TrainOnlyView { train: &splits.train, audit: audit.clone() }
}

impl<'a> TrainOnlyView<'a> {
    /// Training rows; each call is recorded in the audit log under the given
    /// operation name.
    pub fn rows(&self, operation: &str) -> ArrayView2<'a, f64> {
        crate::audit::record(&self.audit, operation, SplitTag::Train, (0, self.train.n_rows()));
        self.train.values.view()
    }

    pub fn n_rows(&self) -> usize {
        self.train.n_rows()
    }

    pub fn n_assets(&self) -> usize {
        self.train.n_assets()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.train.standardization.as_ref()
    }

    pub fn audit(&self) -> &AuditHandle {
        &self.audit
    }
}
