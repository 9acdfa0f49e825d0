//! Seeded synthetic price histories for demos and tests.
//!
//! Log returns follow a one-factor model,
//! `r_ki = mu_i + sigma_i * (rho_i f_k + sqrt(1 - rho_i^2) e_ki)`, with
//! per-asset drift, volatility and factor loading drawn from the same seeded
//! stream as the shocks.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::market_data::PriceMatrix;
use crate::rng::stream_rng;

pub fn synthetic_tickers(n_assets: usize) -> Vec<String> {
    (0..n_assets).map(|i| format!("T{i:02}")).collect()
}

pub fn synthetic_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid constant date")
}

/// `days` rows of geometric random-walk prices for `n_assets` assets.
pub fn synthetic_history(n_assets: usize, days: usize, seed: u64) -> Result<PriceMatrix> {
    if n_assets == 0 {
        return Err(Error::InvalidParameter(
            "synthetic history needs at least one asset".into(),
        ));
    }
    if days < 3 {
        return Err(Error::InvalidParameter(format!(
            "synthetic history needs at least 3 days, got {days}"
        )));
    }
    let mut rng = stream_rng(seed);
    let drift: Vec<f64> = (0..n_assets)
        .map(|_| rng.random_range(-2e-4..8e-4))
        .collect();
    let vol: Vec<f64> = (0..n_assets)
        .map(|_| rng.random_range(0.006..0.025))
        .collect();
    let loading: Vec<f64> = (0..n_assets).map(|_| rng.random_range(0.0..0.7)).collect();
    let start_price: Vec<f64> = (0..n_assets)
        .map(|_| rng.random_range(20.0..200.0))
        .collect();

    let mut values = DMatrix::zeros(days, n_assets);
    for i in 0..n_assets {
        values[(0, i)] = start_price[i];
    }
    for k in 1..days {
        let factor: f64 = StandardNormal.sample(&mut rng);
        for i in 0..n_assets {
            let idio: f64 = StandardNormal.sample(&mut rng);
            let rho = loading[i];
            let shock = rho * factor + (1.0 - rho * rho).sqrt() * idio;
            values[(k, i)] = values[(k - 1, i)] * (drift[i] + vol[i] * shock).exp();
        }
    }
    let start = synthetic_start_date();
    let dates = (0..days).map(|k| start + Days::new(k as u64)).collect();
    PriceMatrix::new(dates, synthetic_tickers(n_assets), values)
}
