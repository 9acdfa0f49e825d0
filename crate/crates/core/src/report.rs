//! Final report assembly and rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aur::{ReductionLog, Solution};
use crate::config::RunConfig;
use crate::error::Result;
use crate::portfolio::{Feasibility, PortfolioMetrics};
use crate::qubo::{Bitstring, EnergyTerms};
use crate::rng;
use crate::solver::SolverMetadata;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetLine {
    pub ticker: String,
    /// Currency amount.
    pub weight: f64,
    /// `weight / budget`.
    pub fraction: f64,
    pub in_reduced_universe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub generator: String,
    pub normal_transform: String,
    pub seed: u64,
    pub horizon_returns: usize,
    pub target_returns: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub pdg: Option<u64>,
    pub solver: u64,
    pub final_solve: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub version: String,
    pub budget: f64,
    pub assets: Vec<AssetLine>,
    pub metrics: Option<PortfolioMetrics>,
    pub feasibility: Feasibility,
    pub best_bits: Bitstring,
    pub best_energy: f64,
    pub energy_terms: EnergyTerms,
    pub reduction: ReductionLog,
    pub solver: SolverMetadata,
    pub scenario: Option<ScenarioInfo>,
    pub seeds: Seeds,
    pub config: BTreeMap<String, String>,
}

impl FinalReport {
    pub fn new(solution: &Solution, config: &RunConfig, scenario: Option<ScenarioInfo>) -> Self {
        let budget = config.qcs.budget;
        let run = &solution.final_run;
        let assets = solution
            .weights
            .tickers
            .iter()
            .zip(&solution.weights.weights)
            .map(|(t, &w)| AssetLine {
                ticker: t.clone(),
                weight: w,
                fraction: w / budget,
                in_reduced_universe: solution.log.reduced_universe.contains(t),
            })
            .collect();
        Self {
            version: VERSION.to_owned(),
            budget,
            assets,
            metrics: run.metrics.clone(),
            feasibility: run.feasibility.clone(),
            best_bits: run.bits.clone(),
            best_energy: run.best_energy,
            energy_terms: run.terms,
            reduction: solution.log.clone(),
            solver: run.solver.clone(),
            seeds: Seeds {
                master: config.seed,
                pdg: scenario.as_ref().map(|s| s.seed),
                solver: config.solver_seed(),
                final_solve: solution.final_seed,
            },
            scenario,
            config: config.echo(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human-readable summary; percentages with two decimals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>14} {:>9}", "asset", "weight", "share");
        for a in self.assets.iter().filter(|a| a.weight > 0.0) {
            let _ = writeln!(
                out,
                "{:<12} {:>14.2} {:>8.2}%",
                a.ticker,
                a.weight,
                a.fraction * 100.0
            );
        }
        match &self.metrics {
            Some(m) => {
                let _ = writeln!(out, "expected return {:.2}%", m.expected_return * 100.0);
                let _ = writeln!(out, "risk            {:.2}%", m.risk * 100.0);
                let sharpe = m
                    .sharpe
                    .map_or_else(|| "undefined".to_owned(), |s| format!("{s:.2}"));
                let _ = writeln!(out, "sharpe          {sharpe}");
            }
            None => {
                let _ = writeln!(out, "no allocation");
            }
        }
        let _ = writeln!(
            out,
            "budget met      {} (violation {:.2}%)",
            self.feasibility.budget_met,
            self.feasibility.budget_violation * 100.0
        );
        let _ = writeln!(
            out,
            "universe        {} kept, {} discarded over {} rounds",
            self.reduction.reduced_universe.len(),
            self.reduction.discarded.len(),
            self.reduction.rounds.len()
        );
        out
    }
}

pub fn scenario_info(
    tickers: &[String],
    targets: &[f64],
    seed: u64,
    horizon_returns: usize,
) -> ScenarioInfo {
    ScenarioInfo {
        generator: rng::GENERATOR.to_owned(),
        normal_transform: rng::NORMAL_TRANSFORM.to_owned(),
        seed,
        horizon_returns,
        target_returns: tickers
            .iter()
            .cloned()
            .zip(targets.iter().copied())
            .collect(),
    }
}

/// Removes every `wall_time_ms` field, leaving the parts of a report that
/// must be reproducible.
pub fn strip_wall_time(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("wall_time_ms");
            map.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strips_nested_wall_time() {
        let mut v = json!({"a": 1, "wall_time_ms": 3.2, "solver": {"wall_time_ms": 1, "x": [{"wall_time_ms": 2, "y": 0}]}});
        strip_wall_time(&mut v);
        assert_eq!(v, json!({"a": 1, "solver": {"x": [{"y": 0}]}}));
    }
}
