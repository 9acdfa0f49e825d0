//! Solver runs on price data and asset-universe reduction.
//!
//! A single run ([`run_qcs`]) builds the QUBO from a price matrix, solves it
//! and decodes the best sample. [`reduce_universe`] repeats that `E` times
//! with independent seeds and keeps the assets that received weight in at
//! least `min_count` rounds (`min_count = 1` is the plain union).
//! [`solve_with_reduction`] then solves once more on the reduced data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{compounded_returns, covariance, daily_returns, PriceMatrix};
use crate::pdg::{generate_scenario, ScenarioSpec};
use crate::portfolio::{
    feasibility_check, portfolio_metrics, Feasibility, PortfolioMetrics, DEFAULT_ANNUALIZATION,
    DEFAULT_FEASIBILITY_TOL,
};
use crate::qubo::{
    build_qubo, decode_weights, energy_terms, BitLayout, Bitstring, EnergyTerms, Multipliers,
    WeightVector,
};
use crate::rng::derive_seed;
use crate::solver::{backend, SolverConfig, SolverMetadata};

/// Stream index reserved for the final solve in [`solve_with_reduction`].
pub const FINAL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcsConfig {
    pub multipliers: Multipliers,
    /// Proportion levels per asset.
    pub levels: usize,
    /// Budget in currency units.
    pub budget: f64,
    pub solver: SolverConfig,
    pub annualization: u32,
    pub feasibility_tol: f64,
}

impl Default for QcsConfig {
    fn default() -> Self {
        Self {
            multipliers: Multipliers::default(),
            levels: 2,
            budget: 1.0,
            solver: SolverConfig::default(),
            annualization: DEFAULT_ANNUALIZATION,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurConfig {
    /// Number of preliminary rounds `E`.
    pub rounds: usize,
    /// Rounds an asset must be selected in to survive.
    pub min_count: usize,
}

impl Default for AurConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            min_count: 1,
        }
    }
}

impl AurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter(
                "aur.rounds must be at least 1".into(),
            ));
        }
        if self.min_count == 0 || self.min_count > self.rounds {
            return Err(Error::InvalidParameter(format!(
                "aur.min_count must be in [1, {}], got {}",
                self.rounds, self.min_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcsRunResult {
    pub weights: WeightVector,
    pub bits: Bitstring,
    /// `None` when nothing was allocated.
    pub metrics: Option<PortfolioMetrics>,
    pub feasibility: Feasibility,
    pub best_energy: f64,
    pub terms: EnergyTerms,
    /// Tickers with positive weight, in data order.
    pub selected: Vec<String>,
    pub seed: u64,
    pub solver: SolverMetadata,
}

/// Build, solve and decode one QUBO for `data`.
///
/// Expected returns are the compounded returns over the window of `data`;
/// the risk term uses the daily-return covariance.
pub fn run_qcs(data: &PriceMatrix, config: &QcsConfig, seed: u64) -> Result<QcsRunResult> {
    let er = compounded_returns(data);
    let cov = covariance(&daily_returns(data))?;
    let layout = BitLayout::new(data.n_assets(), config.levels)?;
    let qubo = build_qubo(&er, &cov, layout, config.multipliers, config.budget)?;
    let samples = backend(&config.solver, seed)?.solve(&qubo)?;
    let best = samples
        .records
        .first()
        .ok_or_else(|| Error::InvalidParameter("solver returned no samples".into()))?;

    let weights = WeightVector::new(
        data.tickers().to_vec(),
        decode_weights(&best.bits, layout, config.budget)?,
    )?;
    let metrics = match portfolio_metrics(&weights, &er, &cov, config.annualization, config.budget)
    {
        Ok(m) => Some(m),
        Err(Error::EmptyPortfolio) => None,
        Err(e) => return Err(e),
    };
    let feasibility = feasibility_check(&weights, config.budget, config.feasibility_tol);
    let terms = energy_terms(&er, &cov, layout, config.multipliers, &best.bits)?;
    Ok(QcsRunResult {
        selected: feasibility.selected.clone(),
        bits: best.bits.clone(),
        best_energy: best.energy,
        weights,
        metrics,
        feasibility,
        terms,
        seed,
        solver: samples.metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    pub selected: Vec<String>,
    pub best_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionLog {
    pub rounds: Vec<RoundRecord>,
    pub min_count: usize,
    /// Surviving tickers, in original order.
    pub reduced_universe: Vec<String>,
    pub discarded: Vec<String>,
}

/// Runs `config.rounds` solves on `data` and keeps the assets selected often enough.
///
/// Round `r` uses seed `derive_seed(master_seed, r)`. Rounds may run in
/// parallel; the log is always in round order.
pub fn reduce_universe(
    data: &PriceMatrix,
    aur: &AurConfig,
    qcs: &QcsConfig,
    master_seed: u64,
) -> Result<(PriceMatrix, ReductionLog)> {
    aur.validate()?;
    let runs = (0..aur.rounds)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master_seed, r as u64);
            run_qcs(data, qcs, seed).map(|res| RoundRecord {
                round: r,
                seed,
                selected: res.selected,
                best_energy: res.best_energy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0usize; data.n_assets()];
    for run in &runs {
        for t in &run.selected {
            let idx = data
                .column_index(t)
                .expect("selection comes from data tickers");
            counts[idx] += 1;
        }
    }
    let keep: Vec<usize> = (0..data.n_assets())
        .filter(|&i| counts[i] >= aur.min_count)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyUniverse { rounds: aur.rounds });
    }
    let reduced = data.select_columns(&keep)?;
    let discarded = (0..data.n_assets())
        .filter(|i| counts[*i] < aur.min_count)
        .map(|i| data.tickers()[i].clone())
        .collect();
    let log = ReductionLog {
        rounds: runs,
        min_count: aur.min_count,
        reduced_universe: reduced.tickers().to_vec(),
        discarded,
    };
    Ok((reduced, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub reduced: PriceMatrix,
    pub log: ReductionLog,
    pub final_run: QcsRunResult,
    /// Final weights over the full universe; discarded assets hold exactly zero.
    pub weights: WeightVector,
    /// Seed of the final solve: `derive_seed(master_seed, FINAL_STREAM)`.
    pub final_seed: u64,
}

pub fn final_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, FINAL_STREAM)
}

/// Universe reduction followed by the final solve on the reduced data.
pub fn solve_with_reduction(
    data: &PriceMatrix,
    aur: &AurConfig,
    qcs: &QcsConfig,
    master_seed: u64,
) -> Result<Solution> {
    let (reduced, log) = reduce_universe(data, aur, qcs, master_seed)?;
    let seed = final_seed(master_seed);
    let final_run = run_qcs(&reduced, qcs, seed)?;
    let weights = data
        .tickers()
        .iter()
        .map(|t| {
            final_run
                .weights
                .tickers
                .iter()
                .position(|r| r == t)
                .map_or(0.0, |k| final_run.weights.weights[k])
        })
        .collect();
    let weights = WeightVector::new(data.tickers().to_vec(), weights)?;
    Ok(Solution {
        reduced,
        log,
        final_run,
        weights,
        final_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub scenario: PriceMatrix,
    pub solution: Solution,
}

/// Scenario generation, universe reduction and final solve, end to end.
pub fn run_q4futurepop(
    hist: &PriceMatrix,
    spec: &ScenarioSpec,
    aur: &AurConfig,
    qcs: &QcsConfig,
    master_seed: u64,
) -> Result<PipelineOutput> {
    let scenario = generate_scenario(hist, spec)?;
    let solution = solve_with_reduction(&scenario, aur, qcs, master_seed)?;
    Ok(PipelineOutput { scenario, solution })
}
