//! Flat key/value run configuration.
//!
//! Files hold one `key = value` per line (`#` starts a comment). The same
//! keys are accepted as command-line overrides, and every report echoes the
//! full resolved set so a run can be replayed from its report.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::Value;

use crate::aur::{AurConfig, QcsConfig};
use crate::error::{Error, Result};

/// Every key that affects results, in echo order. `out` and `threads` are
/// also accepted but never echoed, since report contents do not depend on them.
pub const KEYS: &[&str] = &[
    "history",
    "targets",
    "dataset",
    "seed",
    "pdg.seed",
    "pdg.horizon",
    "qubo.alpha",
    "qubo.beta",
    "qubo.gamma",
    "qubo.levels",
    "qubo.budget",
    "solver",
    "sa.num_reads",
    "sa.sweeps",
    "sa.beta_min",
    "sa.beta_max",
    "sa.seed",
    "aur.rounds",
    "aur.min_count",
    "annualization",
    "feasibility_tol",
];

pub const MAX_LEVELS: usize = 8;
pub const MAX_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub history: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Master seed; `pdg.seed` and `sa.seed` default to it.
    pub seed: u64,
    pub pdg_seed: Option<u64>,
    /// Future daily returns to generate; defaults to the number of historical returns.
    pub horizon: Option<usize>,
    /// Master seed for solver streams (reduction rounds and final solve).
    pub sa_seed: Option<u64>,
    pub qcs: QcsConfig,
    pub aur: AurConfig,
    /// Worker threads; 0 lets the runtime decide. Results do not depend on it.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            history: None,
            targets: None,
            dataset: None,
            out: PathBuf::from("."),
            seed: 0,
            pdg_seed: None,
            horizon: None,
            sa_seed: None,
            qcs: QcsConfig::default(),
            aur: AurConfig::default(),
            threads: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key} = {value:?}")))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn pdg_seed(&self) -> u64 {
        self.pdg_seed.unwrap_or(self.seed)
    }

    pub fn solver_seed(&self) -> u64 {
        self.sa_seed.unwrap_or(self.seed)
    }

    /// Sets one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "history" => self.history = path(value),
            "targets" => self.targets = path(value),
            "dataset" => self.dataset = path(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "pdg.seed" => self.pdg_seed = optional(key, value)?,
            "pdg.horizon" => self.horizon = optional(key, value)?,
            "qubo.alpha" => self.qcs.multipliers.alpha = parse(key, value)?,
            "qubo.beta" => self.qcs.multipliers.beta = parse(key, value)?,
            "qubo.gamma" => self.qcs.multipliers.gamma = parse(key, value)?,
            "qubo.levels" => self.qcs.levels = parse(key, value)?,
            "qubo.budget" => self.qcs.budget = parse(key, value)?,
            "solver" => self.qcs.solver.backend = value.to_owned(),
            "sa.num_reads" => self.qcs.solver.sa.num_reads = parse(key, value)?,
            "sa.sweeps" => self.qcs.solver.sa.sweeps = parse(key, value)?,
            "sa.beta_min" => self.qcs.solver.sa.beta_min = optional(key, value)?,
            "sa.beta_max" => self.qcs.solver.sa.beta_max = optional(key, value)?,
            "sa.seed" => self.sa_seed = optional(key, value)?,
            "aur.rounds" => self.aur.rounds = parse(key, value)?,
            "aur.min_count" => self.aur.min_count = parse(key, value)?,
            "annualization" => self.qcs.annualization = parse(key, value)?,
            "feasibility_tol" => self.qcs.feasibility_tol = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a JSON object of keys to string values. A full report is also
    /// accepted, in which case its `config` echo is used.
    pub fn apply_json(&mut self, value: &Value) -> Result<()> {
        let map = match value.get("config") {
            Some(inner) => inner,
            None => value,
        }
        .as_object()
        .ok_or_else(|| Error::InvalidParameter("JSON configuration must be an object".into()))?;
        for (k, v) in map {
            let text = match v {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            };
            self.set(k, &text)?;
        }
        Ok(())
    }

    /// Parses a configuration file: JSON if it starts with `{`, key/value lines otherwise.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<()> {
        if text.trim_start().starts_with('{') {
            let value: Value = serde_json::from_str(text)
                .map_err(|e| Error::InvalidParameter(format!("invalid JSON configuration: {e}")))?;
            self.apply_json(&value)
        } else {
            self.apply_text(text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.qcs;
        if !(1..=MAX_LEVELS).contains(&q.levels) {
            return Err(Error::InvalidParameter(format!(
                "qubo.levels must be in [1, {MAX_LEVELS}], got {}",
                q.levels
            )));
        }
        if !(1..=MAX_ROUNDS).contains(&self.aur.rounds) {
            return Err(Error::InvalidParameter(format!(
                "aur.rounds must be in [1, {MAX_ROUNDS}], got {}",
                self.aur.rounds
            )));
        }
        if !(q.budget > 0.0 && q.budget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "qubo.budget must be positive, got {}",
                q.budget
            )));
        }
        if q.annualization == 0 {
            return Err(Error::InvalidParameter(
                "annualization must be positive".into(),
            ));
        }
        if !(q.feasibility_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "feasibility_tol must be non-negative".into(),
            ));
        }
        q.multipliers.validate()?;
        q.solver.sa.validate()?;
        self.aur.validate()?;
        Ok(())
    }

    /// Every key with its resolved value; feeding this back through
    /// [`RunConfig::set`] reproduces `self` (with seeds made explicit).
    pub fn echo(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "auto".into());
        let q = &self.qcs;
        let entries: [(&str, String); 21] = [
            ("history", path(&self.history)),
            ("targets", path(&self.targets)),
            ("dataset", path(&self.dataset)),
            ("seed", self.seed.to_string()),
            ("pdg.seed", self.pdg_seed().to_string()),
            (
                "pdg.horizon",
                self.horizon
                    .map(|h| h.to_string())
                    .unwrap_or_else(|| "auto".into()),
            ),
            ("qubo.alpha", q.multipliers.alpha.to_string()),
            ("qubo.beta", q.multipliers.beta.to_string()),
            ("qubo.gamma", q.multipliers.gamma.to_string()),
            ("qubo.levels", q.levels.to_string()),
            ("qubo.budget", q.budget.to_string()),
            ("solver", q.solver.backend.clone()),
            ("sa.num_reads", q.solver.sa.num_reads.to_string()),
            ("sa.sweeps", q.solver.sa.sweeps.to_string()),
            ("sa.beta_min", opt(q.solver.sa.beta_min)),
            ("sa.beta_max", opt(q.solver.sa.beta_max)),
            ("sa.seed", self.solver_seed().to_string()),
            ("aur.rounds", self.aur.rounds.to_string()),
            ("aur.min_count", self.aur.min_count.to_string()),
            ("annualization", q.annualization.to_string()),
            ("feasibility_tol", q.feasibility_tol.to_string()),
        ];
        debug_assert!(entries.iter().map(|(k, _)| *k).eq(KEYS.iter().copied()));
        entries
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect()
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = runtime default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| {
            Error::InvalidParameter(format!("cannot start {threads} worker threads: {e}"))
        })?;
    Ok(pool.install(f))
}
