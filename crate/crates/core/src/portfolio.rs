//! Turns decoded weights into the quantities reported to the user.
//!
//! Metrics are computed on the weights normalized by their own sum, so a
//! portfolio that misses the budget slightly is still described as held;
//! the miss is reported separately as `budget_violation`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::CovarianceMatrix;
use crate::qubo::WeightVector;

pub const DEFAULT_ANNUALIZATION: u32 = 252;
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMetrics {
    /// Weighted expected return, as a fraction.
    pub expected_return: f64,
    /// Annualized volatility, as a fraction.
    pub risk: f64,
    /// `expected_return / risk`; `None` when risk is zero but return is not.
    pub sharpe: Option<f64>,
    pub budget_used: f64,
    pub budget_violation: f64,
}

/// Metrics for `w` with the zero risk-free rate.
///
/// `budget` is only used for `budget_used` / `budget_violation`.
pub fn portfolio_metrics(
    w: &WeightVector,
    er: &[f64],
    cov_daily: &CovarianceMatrix,
    annualization: u32,
    budget: f64,
) -> Result<PortfolioMetrics> {
    let n = w.len();
    if er.len() != n || cov_daily.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "portfolio inputs",
            expected: n,
            actual: if er.len() != n {
                er.len()
            } else {
                cov_daily.dim()
            },
        });
    }
    if annualization == 0 {
        return Err(Error::InvalidParameter(
            "annualization must be positive".into(),
        ));
    }
    if !(budget > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "budget must be positive, got {budget}"
        )));
    }
    let total = w.total();
    if !(total > 0.0) {
        return Err(Error::EmptyPortfolio);
    }
    let omega: Vec<f64> = w.weights.iter().map(|wi| wi / total).collect();
    let expected_return: f64 = omega.iter().zip(er).map(|(o, r)| o * r).sum();

    let mut variance = 0.0;
    for i in 0..n {
        if omega[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            variance += omega[i] * cov_daily.get(i, j) * omega[j];
        }
    }
    // Round-off can push a PSD quadratic form a hair below zero.
    let risk = (variance.max(0.0) * annualization as f64).sqrt();
    let sharpe = if risk > 0.0 {
        Some(expected_return / risk)
    } else if expected_return == 0.0 {
        Some(0.0)
    } else {
        None
    };
    Ok(PortfolioMetrics {
        expected_return,
        risk,
        sharpe,
        budget_used: total,
        budget_violation: (total - budget).abs() / budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub budget_met: bool,
    pub budget_violation: f64,
    /// Assets holding more than the whole budget.
    pub overcap: Vec<String>,
    /// Assets with positive weight.
    pub selected: Vec<String>,
}

pub fn feasibility_check(w: &WeightVector, budget: f64, tol: f64) -> Feasibility {
    let violation = (w.total() - budget).abs() / budget;
    let pick = |pred: &dyn Fn(f64) -> bool| -> Vec<String> {
        w.tickers
            .iter()
            .zip(&w.weights)
            .filter(|(_, wi)| pred(**wi))
            .map(|(t, _)| t.clone())
            .collect()
    };
    Feasibility {
        budget_met: violation <= tol,
        budget_violation: violation,
        overcap: pick(&|wi| wi > budget),
        selected: pick(&|wi| wi > 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn wv(w: &[f64]) -> WeightVector {
        WeightVector::new((0..w.len()).map(|i| format!("A{i}")).collect(), w.to_vec()).unwrap()
    }

    fn cov(n: usize, flat: &[f64]) -> CovarianceMatrix {
        CovarianceMatrix::new(
            (0..n).map(|i| format!("A{i}")).collect(),
            DMatrix::from_row_slice(n, n, flat),
        )
        .unwrap()
    }

    #[test]
    fn expected_return_of_even_split() {
        let m = portfolio_metrics(
            &wv(&[0.5, 0.5]),
            &[0.10, 0.20],
            &cov(2, &[0.01, 0.0, 0.0, 0.01]),
            252,
            1.0,
        )
        .unwrap();
        assert!((m.expected_return - 0.15).abs() < 1e-15);
    }

    #[test]
    fn annualized_single_asset_risk() {
        let m = portfolio_metrics(
            &wv(&[1.0, 0.0]),
            &[0.1, 0.0],
            &cov(2, &[0.0001, 0.0, 0.0, 1.0]),
            252,
            1.0,
        )
        .unwrap();
        assert!((m.risk - 0.01 * 252f64.sqrt()).abs() < 1e-15);
        assert!((m.risk - 0.158745).abs() < 1e-6);
        assert_eq!(m.expected_return, 0.1);
    }

    #[test]
    fn sharpe_ratio_cases() {
        // risk = sqrt(0.0025 * 1) = 0.05
        let m = portfolio_metrics(&wv(&[2.0]), &[0.10], &cov(1, &[0.0025]), 1, 2.0).unwrap();
        assert!((m.sharpe.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(m.budget_violation, 0.0);

        let flat = portfolio_metrics(&wv(&[1.0]), &[0.0], &cov(1, &[0.0]), 252, 1.0).unwrap();
        assert_eq!(flat.sharpe, Some(0.0));
        let undefined = portfolio_metrics(&wv(&[1.0]), &[0.05], &cov(1, &[0.0]), 252, 1.0).unwrap();
        assert_eq!(undefined.sharpe, None);
    }

    #[test]
    fn empty_portfolio_errors() {
        assert!(matches!(
            portfolio_metrics(
                &wv(&[0.0, 0.0]),
                &[0.1, 0.2],
                &cov(2, &[1.0, 0.0, 0.0, 1.0]),
                252,
                1.0
            ),
            Err(Error::EmptyPortfolio)
        ));
    }

    #[test]
    fn feasibility_examples() {
        let ok = feasibility_check(&wv(&[60.0, 40.0, 0.0]), 100.0, DEFAULT_FEASIBILITY_TOL);
        assert!(ok.budget_met);
        assert!(ok.overcap.is_empty());
        assert_eq!(ok.selected, ["A0", "A1"]);

        let saturated = feasibility_check(&wv(&[150.0, 150.0]), 100.0, DEFAULT_FEASIBILITY_TOL);
        assert!(!saturated.budget_met);
        assert_eq!(saturated.overcap, ["A0", "A1"]);

        let empty = feasibility_check(&wv(&[0.0, 0.0]), 100.0, DEFAULT_FEASIBILITY_TOL);
        assert!(!empty.budget_met);
        assert!(empty.selected.is_empty());
        assert_eq!(empty.budget_violation, 1.0);
    }
}
