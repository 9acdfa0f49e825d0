//! Predicted dataset generation.
//!
//! Builds a future price path whose daily-return covariance equals a
//! historical covariance exactly (in sample) and whose compounded return per
//! asset equals an analyst target:
//!
//! 1. draw `X` (`R x N`) i.i.d. standard normal and center its columns;
//! 2. right-multiply by `L_x^{-T} L_h^T`, where `L_x`, `L_h` are the Cholesky
//!    factors of `cov(X)` and of the historical covariance;
//! 3. per asset, find the shift `b_i` solving `sum_k ln(1 + y_ki + b_i) = ln(1 + Er_i)`;
//! 4. compound the shifted returns forward from the initial prices.
//!
//! Shifting a column leaves its covariance untouched, so steps 2 and 3 do not
//! interfere.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market_data::{
    covariance, daily_returns, sample_covariance, CovarianceMatrix, PriceMatrix, ReturnsMatrix,
};
use crate::rng::stream_rng;

/// First rung of the jitter ladder, relative to `trace / N`.
pub const JITTER_START: f64 = 1e-10;
/// Last rung of the jitter ladder, relative to `trace / N`.
pub const JITTER_MAX: f64 = 1e-6;

/// Lower-triangular `L` with `L L^T = C + jitter I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub tickers: Vec<String>,
    pub values: DMatrix<f64>,
    /// Absolute diagonal jitter that was added before factorizing.
    pub jitter: f64,
}

/// Factorizes `c + jitter * I`. Fails if a pivot is not strictly positive;
/// no escalation is attempted. See [`cholesky_escalating`].
pub fn cholesky(c: &CovarianceMatrix, jitter: f64) -> Result<CholeskyFactor> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "jitter must be non-negative, got {jitter}"
        )));
    }
    let values = cholesky_lower(c.values(), jitter)?;
    Ok(CholeskyFactor {
        tickers: c.tickers().to_vec(),
        values,
        jitter,
    })
}

/// Tries the plain factorization, then jitter `1e-10 * trace / N`, growing
/// ×10 per attempt up to `1e-6 * trace / N`.
pub fn cholesky_escalating(c: &CovarianceMatrix) -> Result<CholeskyFactor> {
    let values = cholesky_lower_escalating(c.values())?;
    Ok(CholeskyFactor {
        tickers: c.tickers().to_vec(),
        values: values.0,
        jitter: values.1,
    })
}

fn cholesky_lower_escalating(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let first = match cholesky_lower(m, 0.0) {
        Ok(l) => return Ok((l, 0.0)),
        Err(e) => e,
    };
    let n = m.nrows().max(1) as f64;
    let scale = m.trace() / n;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(first);
    }
    let mut rel = JITTER_START;
    let mut last = first;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        match cholesky_lower(m, jitter) {
            Ok(l) => return Ok((l, jitter)),
            Err(e) => last = e,
        }
        rel *= 10.0;
    }
    Err(last)
}

/// Cholesky–Banachiewicz on `m + jitter I`, reading only the lower triangle.
fn cholesky_lower(m: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "cholesky input",
            expected: n,
            actual: m.ncols(),
        });
    }
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0_f64, f64::max) + jitter;
    let tiny = f64::EPSILON * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                let d = s + jitter;
                if !(d > tiny) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, jitter });
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// `rows x cols` matrix of i.i.d. standard normals, filled row by row from a
/// single seeded stream.
pub fn sample_standard_normal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed);
    let row_major: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &row_major)
}

/// Centers the columns of `x` and maps them so their sample covariance is `target`.
pub fn fit_covariance_transform(
    x: &DMatrix<f64>,
    target: &CovarianceMatrix,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = x.shape();
    if cols != target.dim() {
        return Err(Error::DimensionMismatch {
            what: "sample columns vs target covariance",
            expected: target.dim(),
            actual: cols,
        });
    }
    if rows < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 sample rows, got {rows}"
        )));
    }
    let means: Vec<f64> = (0..cols).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(rows, cols, |k, j| x[(k, j)] - means[j]);

    let (lx, _) = cholesky_lower_escalating(&sample_covariance(&centered))?;
    let (lh, _) = cholesky_lower_escalating(target.values())?;
    // L_x^T M = L_h^T  =>  M = L_x^{-T} L_h^T
    let mixing = lx
        .transpose()
        .solve_upper_triangular(&lh.transpose())
        .ok_or(Error::NotPositiveDefinite {
            pivot: 0,
            jitter: 0.0,
        })?;
    let mut y = centered * mixing;
    // Re-center: the product is zero-mean in exact arithmetic, this strips round-off.
    for j in 0..cols {
        let m = y.column(j).mean();
        y.column_mut(j).add_scalar_mut(-m);
    }
    Ok(y)
}

pub const BIAS_RESIDUAL_TOL: f64 = 1e-12;

/// Shift `b` with `sum_k ln(1 + y_k + b) = ln(1 + target)` and `min_k(y_k + b) > -1`.
///
/// The left side is strictly increasing in `b` and spans the whole real line on
/// `(-1 - min y, inf)`, so the root exists and is unique. Solved by bracketed
/// bisection down to a residual of `1e-12` or the float resolution of the bracket.
pub fn find_bias(y: &[f64], target: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InvalidParameter(
            "bias fit needs at least one return".into(),
        ));
    }
    if !(target > -1.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target return must exceed -1, got {target}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite return in bias fit".into(),
        ));
    }
    let goal = target.ln_1p();
    let f = |b: f64| y.iter().map(|&v| (v + b).ln_1p()).sum::<f64>() - goal;

    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let boundary = -1.0 - y_min;

    let mut eps = 1e-12;
    let mut lo = boundary + eps;
    while f(lo) > 0.0 {
        eps *= 0.5;
        let next = boundary + eps;
        if next <= boundary {
            // `lo` is the smallest representable shift; accept it.
            return Ok(lo);
        }
        lo = next;
    }
    let mut step = 1.0_f64.max(boundary.abs());
    let mut hi = lo + step;
    while f(hi) < 0.0 {
        lo = hi;
        step *= 2.0;
        hi = lo + step;
    }

    let (mut f_lo, mut f_hi) = (f(lo), f(hi));
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm.abs() <= BIAS_RESIDUAL_TOL {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    Ok(if f_lo.abs() <= f_hi.abs() { lo } else { hi })
}

/// Compounds `returns` forward from `initial`. Row 0 is `initial`, dated
/// `start`; row `k` is dated `start + k` days.
pub fn reconstruct_prices(
    initial: &[f64],
    returns: &ReturnsMatrix,
    start: NaiveDate,
) -> Result<PriceMatrix> {
    let n = returns.n_assets();
    if initial.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial values",
            expected: n,
            actual: initial.len(),
        });
    }
    if let Some(v) = initial.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "initial value {v} must be positive"
        )));
    }
    let r = returns.values();
    let rows = r.nrows() + 1;
    let mut values = DMatrix::zeros(rows, n);
    for i in 0..n {
        values[(0, i)] = initial[i];
        for k in 0..r.nrows() {
            values[(k + 1, i)] = values[(k, i)] * (1.0 + r[(k, i)]);
        }
    }
    let dates = (0..rows)
        .map(|k| {
            start.checked_add_days(Days::new(k as u64)).ok_or_else(|| {
                Error::InvalidParameter("scenario dates overflow the calendar".into())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PriceMatrix::new(dates, returns.tickers().to_vec(), values)
}

/// Analyst targets aligned to a ticker list.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub expected_returns: Vec<f64>,
    /// Present only when the file has an `initial_value` column.
    pub initial_values: Option<Vec<f64>>,
}

/// Reads `ticker,expected_return[,initial_value]` and orders the rows like `tickers`.
///
/// Every ticker must appear exactly once; unknown tickers are rejected.
pub fn load_targets_csv<R: std::io::Read>(source: R, tickers: &[String]) -> Result<Targets> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("unreadable targets header: {e}")))?
        .clone();
    let with_initial = match headers.iter().collect::<Vec<_>>()[..] {
        ["ticker", "expected_return"] => false,
        ["ticker", "expected_return", "initial_value"] => true,
        _ => {
            return Err(Error::data_at(
                "targets header must be `ticker,expected_return[,initial_value]`",
                Some(1),
                None,
            ))
        }
    };

    let mut returns: Vec<Option<f64>> = vec![None; tickers.len()];
    let mut initial: Vec<Option<f64>> = vec![None; tickers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            Error::data_at(format!("malformed targets record: {e}"), line, None)
        })?;
        let line = record.position().map(|p| p.line());
        let ticker = &record[0];
        let idx = tickers
            .iter()
            .position(|t| t == ticker)
            .ok_or_else(|| Error::UnknownTicker(ticker.to_owned()))?;
        if returns[idx].is_some() {
            return Err(Error::data_at(
                format!("duplicate ticker {ticker}"),
                line,
                Some("ticker"),
            ));
        }
        let parse = |col: usize, name: &str| -> Result<f64> {
            record[col]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::data_at(
                        format!("invalid number {:?}", &record[col]),
                        line,
                        Some(name),
                    )
                })
        };
        let r = parse(1, "expected_return")?;
        if r <= -1.0 {
            return Err(Error::data_at(
                "expected return must exceed -1",
                line,
                Some("expected_return"),
            ));
        }
        returns[idx] = Some(r);
        if with_initial {
            let v = parse(2, "initial_value")?;
            if v <= 0.0 {
                return Err(Error::data_at(
                    "initial value must be positive",
                    line,
                    Some("initial_value"),
                ));
            }
            initial[idx] = Some(v);
        }
    }
    let expected_returns = returns
        .into_iter()
        .zip(tickers)
        .map(|(r, t)| r.ok_or_else(|| Error::MissingTicker(t.clone())))
        .collect::<Result<Vec<_>>>()?;
    let initial_values = with_initial.then(|| {
        initial
            .into_iter()
            .map(|v| v.expect("set with return"))
            .collect()
    });
    Ok(Targets {
        expected_returns,
        initial_values,
    })
}

/// Inputs for one generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Target compounded return per asset over the horizon.
    pub target_returns: Vec<f64>,
    /// Starting price per asset.
    pub initial_values: Vec<f64>,
    /// Number of future daily returns to generate.
    pub horizon_returns: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Spec with the defaults used when only targets are known: horizon equal to
    /// the number of historical returns, initial values equal to the last prices.
    pub fn from_history(hist: &PriceMatrix, target_returns: Vec<f64>, seed: u64) -> Self {
        Self {
            target_returns,
            initial_values: hist.last_row(),
            horizon_returns: hist.n_days() - 1,
            seed,
        }
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.target_returns.len() != n_assets {
            return Err(Error::DimensionMismatch {
                what: "target returns",
                expected: n_assets,
                actual: self.target_returns.len(),
            });
        }
        if self.initial_values.len() != n_assets {
            return Err(Error::DimensionMismatch {
                what: "initial values",
                expected: n_assets,
                actual: self.initial_values.len(),
            });
        }
        if let Some(t) = self
            .target_returns
            .iter()
            .find(|t| !(t.is_finite() && **t > -1.0))
        {
            return Err(Error::InvalidParameter(format!(
                "target return {t} must exceed -1"
            )));
        }
        if let Some(v) = self
            .initial_values
            .iter()
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "initial value {v} must be positive"
            )));
        }
        let min_horizon = 2.max(n_assets + 1);
        if self.horizon_returns < min_horizon {
            return Err(Error::InvalidParameter(format!(
                "horizon of {} returns is too short for {n_assets} assets (need at least {min_horizon})",
                self.horizon_returns
            )));
        }
        Ok(())
    }
}

/// Generates a future price path from `hist` and `spec`.
pub fn generate_scenario(hist: &PriceMatrix, spec: &ScenarioSpec) -> Result<PriceMatrix> {
    let n = hist.n_assets();
    spec.validate(n)?;
    let target_cov = covariance(&daily_returns(hist))?;

    let x = sample_standard_normal(spec.horizon_returns, n, spec.seed);
    let mut y = fit_covariance_transform(&x, &target_cov)?;

    let biases = (0..n)
        .into_par_iter()
        .map(|i| {
            let column: Vec<f64> = y.column(i).iter().copied().collect();
            find_bias(&column, spec.target_returns[i])
        })
        .collect::<Result<Vec<f64>>>()?;
    for (i, b) in biases.iter().enumerate() {
        y.column_mut(i).add_scalar_mut(*b);
    }

    let returns = ReturnsMatrix::new(hist.tickers().to_vec(), y)?;
    let start = *hist
        .dates()
        .last()
        .expect("validated price matrix has rows");
    reconstruct_prices(&spec.initial_values, &returns, start)
}
