//! QUBO minimizers behind a common backend contract.
//!
//! * `exhaustive` enumerates every assignment (Gray-code order, incremental
//!   energy) and is the ground-truth oracle for small instances.
//! * `sa` is Metropolis single-bit-flip annealing on a geometric inverse
//!   temperature schedule.
//!
//! Every backend returns a [`SampleSet`] sorted by ascending energy with ties
//! broken by the lexicographically smaller bitstring, and stored energies are
//! recomputed with [`QuboProblem::energy`].

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::qubo::{Bitstring, QuboProblem};
use crate::rng::{derive_seed, stream_rng};

/// Largest problem the exhaustive backend accepts.
pub const EXHAUSTIVE_MAX_VARS: usize = 24;
/// Distinct energy levels reported by the exhaustive backend.
pub const EXHAUSTIVE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub bits: Bitstring,
    pub energy: f64,
    pub occurrences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMetadata {
    pub solver: String,
    pub params: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub records: Vec<SampleRecord>,
    pub metadata: SolverMetadata,
}

impl SampleSet {
    pub fn best(&self) -> &SampleRecord {
        &self.records[0]
    }

    pub fn total_occurrences(&self) -> u64 {
        self.records.iter().map(|r| r.occurrences).sum()
    }
}

fn sort_records(records: &mut [SampleRecord]) {
    records.sort_by(|a, b| {
        a.energy
            .total_cmp(&b.energy)
            .then_with(|| a.bits.cmp(&b.bits))
    });
}

/// Per-variable neighbor lists, with local fields `h_v = linear_v + sum_u Q_vu x_u`
/// maintained under single flips.
struct FlipState<'a> {
    adjacency: &'a [Vec<(usize, f64)>],
    x: Vec<bool>,
    field: Vec<f64>,
}

fn adjacency(q: &QuboProblem) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); q.n_vars()];
    for (&(v, u), &c) in q.quadratic() {
        adj[v].push((u, c));
        adj[u].push((v, c));
    }
    adj
}

impl<'a> FlipState<'a> {
    fn new(q: &QuboProblem, adjacency: &'a [Vec<(usize, f64)>], x: Vec<bool>) -> Self {
        let field = (0..q.n_vars())
            .map(|v| {
                q.linear()[v]
                    + adjacency[v]
                        .iter()
                        .filter(|(u, _)| x[*u])
                        .map(|(_, c)| c)
                        .sum::<f64>()
            })
            .collect();
        Self {
            adjacency,
            x,
            field,
        }
    }

    fn delta(&self, v: usize) -> f64 {
        if self.x[v] {
            -self.field[v]
        } else {
            self.field[v]
        }
    }

    fn flip(&mut self, v: usize) {
        let sign = if self.x[v] { -1.0 } else { 1.0 };
        self.x[v] = !self.x[v];
        for &(u, c) in &self.adjacency[v] {
            self.field[u] += sign * c;
        }
    }
}

/// Lowest `cap` energy levels seen so far, each with its smallest code.
struct TopLevels {
    cap: usize,
    entries: Vec<(f64, u64)>,
}

impl TopLevels {
    fn offer(&mut self, e: f64, code: u64) {
        let tol = 1e-12 * e.abs().max(1.0);
        if self.entries.len() == self.cap {
            if let Some(&(worst, _)) = self.entries.last() {
                if e > worst + tol {
                    return;
                }
            }
        }
        if let Some(entry) = self
            .entries
            .iter_mut()
            .find(|(le, _)| (le - e).abs() <= tol)
        {
            entry.1 = entry.1.min(code);
            return;
        }
        let pos = self.entries.partition_point(|(le, _)| *le < e);
        self.entries.insert(pos, (e, code));
        self.entries.truncate(self.cap);
    }
}

/// Enumerates all `2^n` assignments. Reports the lowest [`EXHAUSTIVE_LEVELS`]
/// distinct energies, each by its lexicographically smallest bitstring.
pub fn solve_exhaustive(q: &QuboProblem) -> Result<SampleSet> {
    let n = q.n_vars();
    if n > EXHAUSTIVE_MAX_VARS {
        return Err(Error::TooManyVariables {
            n_vars: n,
            limit: EXHAUSTIVE_MAX_VARS,
        });
    }
    let started = Instant::now();
    let adj = adjacency(q);
    let mut state = FlipState::new(q, &adj, vec![false; n]);
    let mut energy = q.offset();
    let mut code = 0u64;
    let mut top = TopLevels {
        cap: EXHAUSTIVE_LEVELS,
        entries: Vec::with_capacity(EXHAUSTIVE_LEVELS + 1),
    };
    top.offer(energy, code);

    for step in 1..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        let v = n - 1 - bit;
        energy += state.delta(v);
        state.flip(v);
        code ^= 1 << bit;
        if step & 0xFFFF == 0 {
            energy = q.energy_of(&state.x);
        }
        top.offer(energy, code);
    }

    let mut records: Vec<SampleRecord> = top
        .entries
        .iter()
        .map(|&(_, code)| {
            let bits = Bitstring::from_code(code, n);
            SampleRecord {
                energy: q.energy_of(bits.bits()),
                bits,
                occurrences: 1,
            }
        })
        .collect();
    sort_records(&mut records);

    let mut params = BTreeMap::new();
    params.insert("levels".to_owned(), json!(EXHAUSTIVE_LEVELS));
    Ok(SampleSet {
        records,
        metadata: SolverMetadata {
            solver: "exhaustive".into(),
            params,
            seed: None,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Simulated annealing settings. Unset betas are filled by [`default_beta_range`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub num_reads: usize,
    pub sweeps: usize,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub seed: u64,
}

impl Default for SaParams {
    fn default() -> Self {
        Self {
            num_reads: 64,
            sweeps: 1000,
            beta_min: None,
            beta_max: None,
            seed: 0,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_reads == 0 {
            return Err(Error::InvalidParameter(
                "sa.num_reads must be at least 1".into(),
            ));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidParameter(
                "sa.sweeps must be at least 1".into(),
            ));
        }
        for (name, b) in [
            ("sa.beta_min", self.beta_min),
            ("sa.beta_max", self.beta_max),
        ] {
            if let Some(b) = b {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "{name} must be positive, got {b}"
                    )));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.beta_min, self.beta_max) {
            if lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "sa.beta_min ({lo}) must be below sa.beta_max ({hi})"
                )));
            }
        }
        Ok(())
    }

    /// Inverse temperatures actually used for `q`.
    pub fn resolve_betas(&self, q: &QuboProblem) -> Result<(f64, f64)> {
        let (lo, hi) = match (self.beta_min, self.beta_max) {
            (Some(lo), Some(hi)) => (lo, hi),
            (lo, hi) => {
                let (auto_lo, auto_hi) = if q.is_zero() {
                    (0.1, 1.0)
                } else {
                    default_beta_range(q)?
                };
                (lo.unwrap_or(auto_lo), hi.unwrap_or(auto_hi))
            }
        };
        if lo >= hi {
            return Err(Error::InvalidParameter(format!(
                "resolved beta range [{lo}, {hi}] is empty; set both sa.beta_min and sa.beta_max"
            )));
        }
        Ok((lo, hi))
    }
}

/// Inverse temperature endpoints from the coefficient magnitudes.
///
/// Each variable's single-flip change is bounded by `|linear_v| + sum_u |Q_vu|`;
/// `dE_max` and `dE_min` are the largest and smallest nonzero bounds. The hot end accepts
/// the largest uphill move with probability 1/2, the cold end accepts the
/// smallest with probability 1/100.
pub fn default_beta_range(q: &QuboProblem) -> Result<(f64, f64)> {
    let mut bound = q.linear().iter().map(|c| c.abs()).collect::<Vec<_>>();
    for (&(v, u), c) in q.quadratic() {
        bound[v] += c.abs();
        bound[u] += c.abs();
    }
    let de_max = bound.iter().copied().fold(0.0_f64, f64::max);
    let de_min = bound
        .iter()
        .copied()
        .filter(|c| *c > 0.0)
        .fold(f64::INFINITY, f64::min);
    if de_max == 0.0 || !de_min.is_finite() {
        return Err(Error::InvalidParameter(
            "cannot derive a beta range for an all-zero QUBO".into(),
        ));
    }
    let beta_min = std::f64::consts::LN_2 / de_max;
    let mut beta_max = 100f64.ln() / de_min;
    if beta_max <= beta_min {
        beta_max = beta_min * 100.0;
    }
    Ok((beta_min, beta_max))
}

/// `sweeps` inverse temperatures, geometric from `beta_min` to `beta_max`.
pub fn geometric_schedule(beta_min: f64, beta_max: f64, sweeps: usize) -> Vec<f64> {
    if sweeps == 1 {
        return vec![beta_max];
    }
    let ratio = (beta_max / beta_min).powf(1.0 / (sweeps - 1) as f64);
    let mut schedule: Vec<f64> = (0..sweeps)
        .map(|k| beta_min * ratio.powi(k as i32))
        .collect();
    schedule[sweeps - 1] = beta_max;
    schedule
}

fn anneal_read(
    q: &QuboProblem,
    adj: &[Vec<(usize, f64)>],
    schedule: &[f64],
    seed: u64,
) -> Bitstring {
    let n = q.n_vars();
    let mut rng = stream_rng(seed);
    let start: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let mut state = FlipState::new(q, adj, start);
    let mut energy = q.energy_of(&state.x);
    let mut best = state.x.clone();
    let mut best_energy = energy;

    for &beta in schedule {
        for v in 0..n {
            let delta = state.delta(v);
            if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
                state.flip(v);
                energy += delta;
                if energy < best_energy {
                    best_energy = energy;
                    best.copy_from_slice(&state.x);
                }
            }
        }
    }
    best.into()
}

/// Runs `num_reads` independent anneals. Read `r` draws from the stream
/// seeded by `derive_seed(params.seed, r)` and reports the lowest state it
/// visited; reads are merged by bitstring.
pub fn solve_sa(q: &QuboProblem, params: &SaParams) -> Result<SampleSet> {
    params.validate()?;
    let started = Instant::now();
    let (beta_min, beta_max) = params.resolve_betas(q)?;
    let schedule = geometric_schedule(beta_min, beta_max, params.sweeps);
    let adj = adjacency(q);

    let finals: Vec<Bitstring> = (0..params.num_reads)
        .into_par_iter()
        .map(|r| anneal_read(q, &adj, &schedule, derive_seed(params.seed, r as u64)))
        .collect();

    let mut counts: BTreeMap<Bitstring, u64> = BTreeMap::new();
    for bits in finals {
        *counts.entry(bits).or_insert(0) += 1;
    }
    let mut records: Vec<SampleRecord> = counts
        .into_iter()
        .map(|(bits, occurrences)| SampleRecord {
            energy: q.energy_of(bits.bits()),
            bits,
            occurrences,
        })
        .collect();
    sort_records(&mut records);

    let mut meta = BTreeMap::new();
    meta.insert("num_reads".to_owned(), json!(params.num_reads));
    meta.insert("sweeps".to_owned(), json!(params.sweeps));
    meta.insert("beta_min".to_owned(), json!(beta_min));
    meta.insert("beta_max".to_owned(), json!(beta_max));
    meta.insert("schedule".to_owned(), json!("geometric"));
    Ok(SampleSet {
        records,
        metadata: SolverMetadata {
            solver: "sa".into(),
            params: meta,
            seed: Some(params.seed),
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Anything that can minimize a [`QuboProblem`].
pub trait QuboSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, q: &QuboProblem) -> Result<SampleSet>;
}

pub struct Exhaustive;

impl QuboSolver for Exhaustive {
    fn name(&self) -> &str {
        "exhaustive"
    }

    fn solve(&self, q: &QuboProblem) -> Result<SampleSet> {
        solve_exhaustive(q)
    }
}

pub struct SimulatedAnnealing(pub SaParams);

impl QuboSolver for SimulatedAnnealing {
    fn name(&self) -> &str {
        "sa"
    }

    fn solve(&self, q: &QuboProblem) -> Result<SampleSet> {
        solve_sa(q, &self.0)
    }
}

/// Placeholder for hardware or cloud annealers; always reports that the
/// backend is not bundled.
pub struct RemoteAnnealer(pub String);

impl QuboSolver for RemoteAnnealer {
    fn name(&self) -> &str {
        &self.0
    }

    fn solve(&self, _q: &QuboProblem) -> Result<SampleSet> {
        Err(Error::BackendNotBundled(self.0.clone()))
    }
}

/// Backend names recognized by [`backend`].
pub const REMOTE_BACKENDS: &[&str] = &["dwave", "hybrid"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub backend: String,
    pub sa: SaParams,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: "sa".into(),
            sa: SaParams::default(),
        }
    }
}

/// Resolves a backend by name. `seed` overrides `config.sa.seed`.
pub fn backend(config: &SolverConfig, seed: u64) -> Result<Box<dyn QuboSolver>> {
    match config.backend.as_str() {
        "exhaustive" => Ok(Box::new(Exhaustive)),
        "sa" => {
            let params = SaParams {
                seed,
                ..config.sa.clone()
            };
            params.validate()?;
            Ok(Box::new(SimulatedAnnealing(params)))
        }
        name if REMOTE_BACKENDS.contains(&name) => Ok(Box::new(RemoteAnnealer(name.to_owned()))),
        other => Err(Error::UnknownBackend(other.to_owned())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::CovarianceMatrix;
    use crate::qubo::{build_qubo, BitLayout, Multipliers};
    use nalgebra::DMatrix;

    fn single_asset() -> QuboProblem {
        let cov =
            CovarianceMatrix::new(vec!["A".into()], DMatrix::from_element(1, 1, 0.04)).unwrap();
        build_qubo(
            &[0.1],
            &cov,
            BitLayout::new(1, 1).unwrap(),
            Multipliers {
                alpha: 1.0,
                beta: 1.0,
                gamma: 1.0,
            },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_single_asset() {
        let s = solve_exhaustive(&single_asset()).unwrap();
        assert_eq!(s.best().bits.to_string(), "1");
        assert!((s.best().energy + 0.06).abs() < 1e-12);
        assert_eq!(s.records.len(), 2);
    }

    #[test]
    fn exhaustive_all_zero_prefers_zeros() {
        let q = QuboProblem::from_coefficients(vec![0.0; 5], [], 0.0).unwrap();
        let s = solve_exhaustive(&q).unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.best().bits, Bitstring::zeros(5));
        assert_eq!(s.best().energy, 0.0);
    }

    #[test]
    fn exhaustive_guard() {
        let q = QuboProblem::from_coefficients(vec![1.0; 25], [], 0.0).unwrap();
        assert!(matches!(
            solve_exhaustive(&q),
            Err(Error::TooManyVariables { n_vars: 25, .. })
        ));
    }

    #[test]
    fn exhaustive_ties_break_lexicographically() {
        // x0 + x1 - 2 x0 x1 ... minimum 0 at 00 and 11; 00 wins.
        let q = QuboProblem::from_coefficients(vec![1.0, 1.0], [((0, 1), -2.0)], 0.0).unwrap();
        let s = solve_exhaustive(&q).unwrap();
        assert_eq!(s.best().bits.to_string(), "00");
        assert_eq!(s.records.len(), 2);
        assert_eq!(s.records[1].energy, 1.0);
    }

    #[test]
    fn sa_single_variable_every_read() {
        let q = QuboProblem::from_coefficients(vec![-1.0], [], 0.0).unwrap();
        let s = solve_sa(
            &q,
            &SaParams {
                num_reads: 16,
                sweeps: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.best().bits.to_string(), "1");
        assert_eq!(s.best().occurrences, 16);
    }

    #[test]
    fn sa_is_deterministic_and_read_isolated() {
        let q = QuboProblem::from_coefficients(
            vec![0.3, -0.2, 0.1, -0.4, 0.25],
            [
                ((0, 1), 0.5),
                ((1, 2), -0.7),
                ((2, 3), 0.9),
                ((0, 4), -0.3),
                ((3, 4), 0.2),
            ],
            0.0,
        )
        .unwrap();
        let p = SaParams {
            num_reads: 8,
            sweeps: 50,
            seed: 9,
            ..Default::default()
        };
        let a = solve_sa(&q, &p).unwrap();
        let b = solve_sa(&q, &p).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.total_occurrences(), 8);

        // Read r of a longer run equals read r of a shorter run.
        let adj = adjacency(&q);
        let (lo, hi) = p.resolve_betas(&q).unwrap();
        let sched = geometric_schedule(lo, hi, p.sweeps);
        let first = anneal_read(&q, &adj, &sched, derive_seed(9, 3));
        let more = SaParams {
            num_reads: 12,
            ..p.clone()
        };
        let c = solve_sa(&q, &more).unwrap();
        assert!(c.records.iter().any(|r| r.bits == first));
        assert!(a.records.iter().any(|r| r.bits == first));
    }

    #[test]
    fn beta_range_examples() {
        let q = QuboProblem::from_coefficients(vec![-1.0], [], 0.0).unwrap();
        let (lo, hi) = default_beta_range(&q).unwrap();
        assert!(lo < hi);
        assert!(((-lo * 1.0).exp() - 0.5).abs() < 1e-15);

        let q = QuboProblem::from_coefficients(
            vec![1.0, -2.0, 0.5],
            [((0, 1), 3.0), ((1, 2), -0.25)],
            0.0,
        )
        .unwrap();
        let q10 = QuboProblem::from_coefficients(
            vec![10.0, -20.0, 5.0],
            [((0, 1), 30.0), ((1, 2), -2.5)],
            0.0,
        )
        .unwrap();
        let (a, b) = default_beta_range(&q).unwrap();
        let (a10, b10) = default_beta_range(&q10).unwrap();
        assert!((a10 - 0.1 * a).abs() < 1e-15 && (b10 - 0.1 * b).abs() < 1e-15);
        // dE_max = |-2| + 3 + 0.25
        assert!(((-a * 5.25).exp() - 0.5).abs() < 1e-12);
        // dE_min = 0.5 + 0.25
        assert!(((-b * 0.75).exp() - 0.01).abs() < 1e-12);

        let zero = QuboProblem::from_coefficients(vec![0.0; 3], [], 0.0).unwrap();
        assert!(default_beta_range(&zero).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = geometric_schedule(0.1, 10.0, 5);
        assert_eq!(s.len(), 5);
        assert!((s[0] - 0.1).abs() < 1e-15 && s[4] == 10.0);
        assert!((s[2] - 1.0).abs() < 1e-12);
        assert_eq!(geometric_schedule(0.1, 10.0, 1), vec![10.0]);
    }

    #[test]
    fn param_validation() {
        assert!(SaParams {
            num_reads: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SaParams {
            sweeps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SaParams {
            beta_min: Some(2.0),
            beta_max: Some(1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SaParams {
            beta_min: Some(-1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn backend_dispatch() {
        let cfg = |name: &str| SolverConfig {
            backend: name.into(),
            ..Default::default()
        };
        assert_eq!(backend(&cfg("exhaustive"), 0).unwrap().name(), "exhaustive");
        assert_eq!(backend(&cfg("sa"), 0).unwrap().name(), "sa");
        let remote = backend(&cfg("dwave"), 0).unwrap();
        assert!(matches!(
            remote.solve(&single_asset()),
            Err(Error::BackendNotBundled(_))
        ));
        assert!(matches!(
            backend(&cfg("nope"), 0),
            Err(Error::UnknownBackend(_))
        ));
    }
}
