//! Historical price ingestion, daily returns and covariance.
//!
//! Rows are days in ascending order, columns are assets. Returns are simple
//! (arithmetic) returns, so a `K`-row price matrix yields `K - 1` return rows.

use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Daily prices, `K` days by `N` assets, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMatrix {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl PriceMatrix {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() {
            return Err(Error::DimensionMismatch {
                what: "price rows vs dates",
                expected: dates.len(),
                actual: values.nrows(),
            });
        }
        if values.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                what: "price columns vs tickers",
                expected: tickers.len(),
                actual: values.ncols(),
            });
        }
        if tickers.is_empty() {
            return Err(Error::data("price matrix has no assets"));
        }
        if dates.len() < 2 {
            return Err(Error::data(format!(
                "need at least 2 price rows, got {}",
                dates.len()
            )));
        }
        let mut seen = HashSet::new();
        for t in &tickers {
            if !seen.insert(t.as_str()) {
                return Err(Error::data_at("duplicate ticker", None, Some(t)));
            }
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::data(format!(
                    "dates not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        for (j, t) in tickers.iter().enumerate() {
            for i in 0..values.nrows() {
                let v = values[(i, j)];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::data_at(
                        format!("non-positive price {v} on {}", dates[i]),
                        None,
                        Some(t),
                    ));
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_days(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    pub fn last_row(&self) -> Vec<f64> {
        self.values.row(self.n_days() - 1).iter().copied().collect()
    }

    /// Keeps the given columns, in the given order, and every row.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_assets()) {
            return Err(Error::InvalidParameter(format!(
                "column {bad} out of range"
            )));
        }
        let values = self.values.select_columns(columns);
        let tickers = columns.iter().map(|&c| self.tickers[c].clone()).collect();
        Self::new(self.dates.clone(), tickers, values)
    }

    pub fn column_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }
}

/// Simple daily returns, `K - 1` rows by `N` assets, every entry `> -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl ReturnsMatrix {
    pub fn new(tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                what: "return columns vs tickers",
                expected: tickers.len(),
                actual: values.ncols(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > -1.0)) {
            return Err(Error::data(format!("return {v} is not greater than -1")));
        }
        Ok(Self { tickers, values })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }
}

/// Symmetric `N x N` covariance of daily returns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Builds a covariance matrix, rejecting non-square or visibly asymmetric input.
    pub fn new(tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let n = tickers.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "covariance dimension",
                expected: n,
                actual: values.nrows().max(values.ncols()),
            });
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "covariance has non-finite entries".into(),
            ));
        }
        Ok(Self { tickers, values })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Parses a price CSV with header `date,<ticker>,...`.
///
/// Rows may come in any date order; the result is sorted ascending.
pub fn load_prices_csv<R: Read>(source: R) -> Result<PriceMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("unreadable header: {e}")))?
        .clone();
    if headers.get(0) != Some("date") {
        return Err(Error::data_at("first header must be `date`", Some(1), None));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if tickers.is_empty() {
        return Err(Error::data_at("no ticker columns", Some(1), None));
    }
    let mut seen = HashSet::new();
    for t in &tickers {
        if t.is_empty() {
            return Err(Error::data_at("empty ticker name", Some(1), None));
        }
        if !seen.insert(t.as_str()) {
            return Err(Error::data_at("duplicate ticker", Some(1), Some(t)));
        }
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            Error::data_at(format!("malformed CSV record: {e}"), line, None)
        })?;
        let line = record.position().map(|p| p.line());
        let raw_date = record.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|_| {
            Error::data_at(format!("invalid date {raw_date:?}"), line, Some("date"))
        })?;
        if record.len() > tickers.len() + 1 {
            return Err(Error::data_at("too many cells", line, None));
        }
        let mut prices = Vec::with_capacity(tickers.len());
        for (j, ticker) in tickers.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::data_at("missing cell", line, Some(ticker)));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::data_at(format!("non-numeric price {cell:?}"), line, Some(ticker))
            })?;
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::data_at("non-positive price", line, Some(ticker)));
            }
            prices.push(v);
        }
        rows.push((date, prices));
    }

    if rows.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 price rows, got {}",
            rows.len()
        )));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::data_at(
            format!("duplicate date {}", w[0].0),
            None,
            Some("date"),
        ));
    }

    let k = rows.len();
    let n = tickers.len();
    let values = DMatrix::from_fn(k, n, |i, j| rows[i].1[j]);
    let dates = rows.into_iter().map(|(d, _)| d).collect();
    PriceMatrix::new(dates, tickers, values)
}

/// Writes prices in the same CSV layout [`load_prices_csv`] reads. Floats use
/// shortest round-trip formatting, so reloading is lossless.
pub fn write_prices_csv<W: Write>(prices: &PriceMatrix, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["date".to_owned()];
    header.extend(prices.tickers.iter().cloned());
    writer.write_record(&header).map_err(csv_io)?;
    for (i, date) in prices.dates.iter().enumerate() {
        let mut row = Vec::with_capacity(prices.n_assets() + 1);
        row.push(date.format(DATE_FORMAT).to_string());
        row.extend(prices.values.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn daily_returns(prices: &PriceMatrix) -> ReturnsMatrix {
    let p = &prices.values;
    let values = DMatrix::from_fn(p.nrows() - 1, p.ncols(), |k, i| {
        (p[(k + 1, i)] - p[(k, i)]) / p[(k, i)]
    });
    ReturnsMatrix {
        tickers: prices.tickers.clone(),
        values,
    }
}

/// Sample covariance of the columns of `data`, denominator `rows - 1`.
/// The upper triangle is computed and mirrored, so the result is exactly symmetric.
pub(crate) fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = data.shape();
    let means: Vec<f64> = (0..cols).map(|j| data.column(j).mean()).collect();
    let centered = DMatrix::from_fn(rows, cols, |k, j| data[(k, j)] - means[j]);
    let denom = (rows - 1) as f64;
    let mut cov = DMatrix::zeros(cols, cols);
    for i in 0..cols {
        for j in i..cols {
            let s = centered.column(i).dot(&centered.column(j)) / denom;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    cov
}

pub fn covariance(returns: &ReturnsMatrix) -> Result<CovarianceMatrix> {
    if returns.n_rows() < 2 {
        return Err(Error::data(format!(
            "covariance needs at least 2 return rows, got {}",
            returns.n_rows()
        )));
    }
    Ok(CovarianceMatrix {
        tickers: returns.tickers.clone(),
        values: sample_covariance(&returns.values),
    })
}

/// Total return over the window per asset: `last / first - 1`.
pub fn compounded_returns(prices: &PriceMatrix) -> Vec<f64> {
    let last = prices.n_days() - 1;
    (0..prices.n_assets())
        .map(|i| prices.values[(last, i)] / prices.values[(0, i)] - 1.0)
        .collect()
}
