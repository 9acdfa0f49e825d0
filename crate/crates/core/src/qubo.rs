//! Binary quadratic model of the budgeted mean-variance problem.
//!
//! Each asset `i` gets `p` bits; bit `d` stands for the budget fraction
//! `2^-d`, so the normalized weight is `w_i = sum_d 2^-d x_{i,d}`. The minimized
//! energy is
//!
//! ```text
//! E(x) = -alpha * sum_i er_i w_i
//!        + beta * sum_{i,j} cov_ij w_i w_j
//!        + gamma * (sum_i w_i - 1)^2
//! ```
//!
//! expanded exactly into diagonal (linear) and strictly upper-triangular
//! (pair) coefficients plus a constant offset. The budget is normalized to 1
//! inside the model and only reappears when weights are decoded.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::CovarianceMatrix;

/// Assignment of the binary variables, compared lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bitstring(Vec<bool>);

impl Bitstring {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Bit `v` of the string is bit `n - 1 - v` of `code`, so integer order
    /// equals lexicographic order.
    pub fn from_code(code: u64, n: usize) -> Self {
        Self((0..n).map(|v| (code >> (n - 1 - v)) & 1 == 1).collect())
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl From<Vec<bool>> for Bitstring {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::data(format!("invalid bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl Serialize for Bitstring {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps variable `v = i * levels + d` to asset `i`, proportion level `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitLayout {
    pub n_assets: usize,
    pub levels: usize,
}

impl BitLayout {
    pub fn new(n_assets: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter(
                "at least one proportion level is required".into(),
            ));
        }
        if n_assets == 0 {
            return Err(Error::InvalidParameter(
                "at least one asset is required".into(),
            ));
        }
        Ok(Self { n_assets, levels })
    }

    pub fn n_vars(&self) -> usize {
        self.n_assets * self.levels
    }

    pub fn index(&self, asset: usize, level: usize) -> usize {
        asset * self.levels + level
    }

    pub fn asset_of(&self, v: usize) -> usize {
        v / self.levels
    }

    pub fn level_of(&self, v: usize) -> usize {
        v % self.levels
    }

    /// Budget fraction carried by level `d`: `2^-d`.
    pub fn level_value(d: usize) -> f64 {
        0.5_f64.powi(d as i32)
    }

    /// Largest weight one asset can receive, as a budget fraction: `2 - 2^(1-p)`.
    pub fn max_fraction(&self) -> f64 {
        2.0 - 0.5_f64.powi(self.levels as i32 - 1)
    }

    /// Weights as budget fractions, one per asset.
    pub fn fractions(&self, x: &Bitstring) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok((0..self.n_assets)
            .map(|i| {
                (0..self.levels)
                    .filter(|&d| x.0[self.index(i, d)])
                    .map(Self::level_value)
                    .sum()
            })
            .collect())
    }

    fn check_len(&self, x: &Bitstring) -> Result<()> {
        if x.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "bitstring length",
                expected: self.n_vars(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Term weights: `alpha` on return, `beta` on risk, `gamma` on the budget penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 10.0,
        }
    }
}

impl Multipliers {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    linear: Vec<f64>,
    quadratic: BTreeMap<(usize, usize), f64>,
    offset: f64,
    layout: BitLayout,
    multipliers: Multipliers,
    budget: f64,
}

impl QuboProblem {
    /// Raw model without a portfolio behind it. Pairs may be given in any
    /// orientation; `(v, v)` entries fold into the linear term and repeated
    /// pairs accumulate. The layout reads every variable as its own
    /// single-level asset.
    pub fn from_coefficients(
        linear: Vec<f64>,
        pairs: impl IntoIterator<Item = ((usize, usize), f64)>,
        offset: f64,
    ) -> Result<Self> {
        let n = linear.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "QUBO needs at least one variable".into(),
            ));
        }
        let layout = BitLayout::new(n, 1)?;
        let multipliers = Multipliers {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        Self::assemble(linear, pairs, offset, layout, multipliers, 1.0)
    }

    fn assemble(
        mut linear: Vec<f64>,
        pairs: impl IntoIterator<Item = ((usize, usize), f64)>,
        offset: f64,
        layout: BitLayout,
        multipliers: Multipliers,
        budget: f64,
    ) -> Result<Self> {
        let n = linear.len();
        if layout.n_vars() != n {
            return Err(Error::DimensionMismatch {
                what: "layout variables",
                expected: n,
                actual: layout.n_vars(),
            });
        }
        let mut quadratic = BTreeMap::new();
        for ((a, b), c) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidParameter(format!(
                    "pair ({a}, {b}) outside {n} variables"
                )));
            }
            if a == b {
                linear[a] += c;
            } else {
                *quadratic.entry((a.min(b), a.max(b))).or_insert(0.0) += c;
            }
        }
        let finite = linear
            .iter()
            .chain(quadratic.values())
            .all(|c| c.is_finite())
            && offset.is_finite();
        if !finite {
            return Err(Error::InvalidParameter(
                "QUBO coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            linear,
            quadratic,
            offset,
            layout,
            multipliers,
            budget,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// Pair coefficients keyed by `(v, u)` with `v < u`.
    pub fn quadratic(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.quadratic
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn layout(&self) -> BitLayout {
        self.layout
    }

    pub fn multipliers(&self) -> Multipliers {
        self.multipliers
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// True when every coefficient and the offset are zero.
    pub fn is_zero(&self) -> bool {
        self.linear
            .iter()
            .chain(self.quadratic.values())
            .all(|c| *c == 0.0)
    }

    pub fn energy(&self, x: &Bitstring) -> Result<f64> {
        if x.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "bitstring length",
                expected: self.n_vars(),
                actual: x.len(),
            });
        }
        Ok(self.energy_of(x.bits()))
    }

    pub(crate) fn energy_of(&self, x: &[bool]) -> f64 {
        let mut e = self.offset;
        for (v, c) in self.linear.iter().enumerate() {
            if x[v] {
                e += c;
            }
        }
        for (&(v, u), c) in &self.quadratic {
            if x[v] && x[u] {
                e += c;
            }
        }
        e
    }

    /// Writes the text dump: one header line, then `v u coeff` per
    /// coefficient (`v == u` for linear terms, every variable listed).
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let m = self.multipliers;
        writeln!(
            out,
            "# q4fp-qubo n_vars={} offset={} alpha={} beta={} gamma={} bd={} n_assets={} levels={}",
            self.n_vars(),
            self.offset,
            m.alpha,
            m.beta,
            m.gamma,
            self.budget,
            self.layout.n_assets,
            self.layout.levels
        )?;
        for (v, c) in self.linear.iter().enumerate() {
            writeln!(out, "{v} {v} {c}")?;
        }
        for (&(v, u), c) in &self.quadratic {
            writeln!(out, "{v} {u} {c}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::data("empty QUBO dump"))?;
        let header = header?;
        let fields = header
            .strip_prefix("# q4fp-qubo")
            .ok_or_else(|| Error::data_at("missing `# q4fp-qubo` header", Some(1), None))?;
        let mut kv = BTreeMap::new();
        for item in fields.split_whitespace() {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::data_at(format!("malformed header field {item:?}"), Some(1), None)
            })?;
            kv.insert(k, v);
        }
        fn get<T: FromStr>(kv: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
            kv.get(key)
                .ok_or_else(|| Error::data_at(format!("header lacks {key}"), Some(1), None))?
                .parse()
                .map_err(|_| Error::data_at(format!("bad header value for {key}"), Some(1), None))
        }
        let n_vars: usize = get(&kv, "n_vars")?;
        let layout = BitLayout::new(get(&kv, "n_assets")?, get(&kv, "levels")?)?;
        let multipliers = Multipliers {
            alpha: get(&kv, "alpha")?,
            beta: get(&kv, "beta")?,
            gamma: get(&kv, "gamma")?,
        };
        let offset: f64 = get(&kv, "offset")?;
        let budget: f64 = get(&kv, "bd")?;

        let mut linear = vec![0.0; n_vars];
        let mut pairs = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let row = Some(idx as u64 + 1);
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let [v, u, c] = parts[..] else {
                return Err(Error::data_at("expected `v u coeff`", row, None));
            };
            let bad = || Error::data_at(format!("unparseable line {t:?}"), row, None);
            let v: usize = v.parse().map_err(|_| bad())?;
            let u: usize = u.parse().map_err(|_| bad())?;
            let c: f64 = c.parse().map_err(|_| bad())?;
            if v > u || u >= n_vars {
                return Err(Error::data_at(
                    format!("index pair ({v}, {u}) out of order or range"),
                    row,
                    None,
                ));
            }
            if v == u {
                linear[v] = c;
            } else {
                pairs.push(((v, u), c));
            }
        }
        Self::assemble(linear, pairs, offset, layout, multipliers, budget)
    }
}

/// Builds the portfolio model.
///
/// `er` holds one expected return per asset, `cov` the return covariance,
/// `budget` the currency amount to invest (used only for decoding).
pub fn build_qubo(
    er: &[f64],
    cov: &CovarianceMatrix,
    layout: BitLayout,
    multipliers: Multipliers,
    budget: f64,
) -> Result<QuboProblem> {
    let n = layout.n_assets;
    if er.len() != n {
        return Err(Error::DimensionMismatch {
            what: "expected returns",
            expected: n,
            actual: er.len(),
        });
    }
    if cov.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "covariance",
            expected: n,
            actual: cov.dim(),
        });
    }
    multipliers.validate()?;
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "budget must be positive, got {budget}"
        )));
    }
    if er.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParameter(
            "expected returns must be finite".into(),
        ));
    }

    let Multipliers { alpha, beta, gamma } = multipliers;
    let nv = layout.n_vars();
    let scale: Vec<f64> = (0..nv)
        .map(|v| BitLayout::level_value(layout.level_of(v)))
        .collect();

    // x_v^2 = x_v folds the diagonal of both quadratic forms into the linear term.
    let linear: Vec<f64> = (0..nv)
        .map(|v| {
            let i = layout.asset_of(v);
            let c = scale[v];
            -alpha * er[i] * c + beta * cov.get(i, i) * c * c + gamma * (c * c - 2.0 * c)
        })
        .collect();

    let mut pairs = Vec::with_capacity(nv * (nv - 1) / 2);
    for v in 0..nv {
        for u in v + 1..nv {
            let (i, j) = (layout.asset_of(v), layout.asset_of(u));
            let coeff = 2.0 * scale[v] * scale[u] * (beta * cov.get(i, j) + gamma);
            if coeff != 0.0 {
                pairs.push(((v, u), coeff));
            }
        }
    }

    QuboProblem::assemble(linear, pairs, gamma, layout, multipliers, budget)
}

/// Contributions of the three terms for one assignment, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    /// `-alpha * sum_i er_i w_i`
    pub return_term: f64,
    /// `beta * w^T cov w`
    pub risk_term: f64,
    /// `gamma * (sum_i w_i - 1)^2`
    pub penalty_term: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.return_term + self.risk_term + self.penalty_term
    }
}

/// Evaluates the three terms from the decoded weights rather than the
/// expanded coefficients.
pub fn energy_terms(
    er: &[f64],
    cov: &CovarianceMatrix,
    layout: BitLayout,
    multipliers: Multipliers,
    x: &Bitstring,
) -> Result<EnergyTerms> {
    let w = layout.fractions(x)?;
    let n = layout.n_assets;
    if er.len() != n || cov.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "energy terms inputs",
            expected: n,
            actual: er.len().max(cov.dim()),
        });
    }
    let ret: f64 = er.iter().zip(&w).map(|(r, wi)| r * wi).sum();
    let mut risk = 0.0;
    for i in 0..n {
        for j in 0..n {
            risk += cov.get(i, j) * w[i] * w[j];
        }
    }
    let excess = w.iter().sum::<f64>() - 1.0;
    Ok(EnergyTerms {
        return_term: -multipliers.alpha * ret,
        risk_term: multipliers.beta * risk,
        penalty_term: multipliers.gamma * excess * excess,
    })
}

/// Invested amount per asset, in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(tickers: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if tickers.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "weights vs tickers",
                expected: tickers.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight {w} must be non-negative"
            )));
        }
        Ok(Self { tickers, weights })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `w_i = budget * sum_d 2^-d x_{i,d}`.
pub fn decode_weights(x: &Bitstring, layout: BitLayout, budget: f64) -> Result<Vec<f64>> {
    Ok(layout
        .fractions(x)?
        .into_iter()
        .map(|f| f * budget)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cov(n: usize, flat: &[f64]) -> CovarianceMatrix {
        CovarianceMatrix::new(
            (0..n).map(|i| format!("A{i}")).collect(),
            DMatrix::from_row_slice(n, n, flat),
        )
        .unwrap()
    }

    fn bits(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn single_asset_two_states() {
        let q = build_qubo(
            &[0.1],
            &cov(1, &[0.04]),
            BitLayout::new(1, 1).unwrap(),
            Multipliers {
                alpha: 1.0,
                beta: 1.0,
                gamma: 1.0,
            },
            1.0,
        )
        .unwrap();
        assert_eq!(q.energy(&bits("0")).unwrap(), 1.0);
        assert!((q.energy(&bits("1")).unwrap() - (-0.06)).abs() < 1e-12);
    }

    #[test]
    fn offset_and_single_bits() {
        let layout = BitLayout::new(2, 2).unwrap();
        let q = build_qubo(
            &[0.1, 0.2],
            &cov(2, &[0.01, 0.002, 0.002, 0.03]),
            layout,
            Multipliers::default(),
            50.0,
        )
        .unwrap();
        assert_eq!(q.offset(), 10.0);
        assert_eq!(q.energy(&Bitstring::zeros(4)).unwrap(), q.offset());
        for v in 0..4 {
            let mut b = vec![false; 4];
            b[v] = true;
            assert_eq!(q.energy(&b.into()).unwrap(), q.offset() + q.linear()[v]);
        }
        assert!(q.quadratic().keys().all(|(v, u)| v < u));
        assert!(q.energy(&Bitstring::zeros(3)).is_err());
    }

    #[test]
    fn penalty_only_minimum_is_budget_exact() {
        let layout = BitLayout::new(2, 2).unwrap();
        let m = Multipliers {
            alpha: 0.0,
            beta: 0.0,
            gamma: 3.0,
        };
        let q = build_qubo(
            &[0.3, -0.1],
            &cov(2, &[0.02, 0.01, 0.01, 0.05]),
            layout,
            m,
            1.0,
        )
        .unwrap();
        for code in 0..16 {
            let x = Bitstring::from_code(code, 4);
            let sum: f64 = layout.fractions(&x).unwrap().iter().sum();
            let e = q.energy(&x).unwrap();
            if sum == 1.0 {
                assert_eq!(e, 0.0, "{x}");
            } else {
                assert!(e > 0.0, "{x}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let layout = BitLayout::new(2, 1).unwrap();
        let c = cov(2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(build_qubo(&[0.1], &c, layout, Multipliers::default(), 1.0).is_err());
        let neg = Multipliers {
            alpha: -1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        assert!(build_qubo(&[0.1, 0.2], &c, layout, neg, 1.0).is_err());
        assert!(build_qubo(&[0.1, 0.2], &c, layout, Multipliers::default(), 0.0).is_err());
        assert!(BitLayout::new(2, 0).is_err());
    }

    #[test]
    fn decode_examples() {
        let layout = BitLayout::new(2, 2).unwrap();
        assert_eq!(
            decode_weights(&bits("1001"), layout, 100.0).unwrap(),
            vec![100.0, 50.0]
        );
        assert_eq!(
            decode_weights(&bits("0000"), layout, 100.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            decode_weights(&bits("1111"), layout, 100.0).unwrap(),
            vec![150.0, 150.0]
        );
        assert!(decode_weights(&bits("111"), layout, 100.0).is_err());
        for p in 1..6 {
            let l = BitLayout::new(1, p).unwrap();
            assert_eq!(
                l.fractions(&Bitstring::ones(p)).unwrap()[0],
                l.max_fraction()
            );
        }
    }

    #[test]
    fn bitstring_order_and_text() {
        assert!(bits("0011") < bits("0100"));
        assert_eq!(Bitstring::from_code(0b0110, 4), bits("0110"));
        assert_eq!(bits("1010").to_string(), "1010");
        assert!("10a".parse::<Bitstring>().is_err());
        let json = serde_json::to_string(&bits("101")).unwrap();
        assert_eq!(json, "\"101\"");
        assert_eq!(
            serde_json::from_str::<Bitstring>(&json).unwrap(),
            bits("101")
        );
    }

    #[test]
    fn raw_coefficients_fold_and_accumulate() {
        let q = QuboProblem::from_coefficients(
            vec![1.0, 0.0],
            [((1, 0), 2.0), ((0, 1), 0.5), ((1, 1), -3.0)],
            0.25,
        )
        .unwrap();
        assert_eq!(q.linear(), &[1.0, -3.0]);
        assert_eq!(q.quadratic().get(&(0, 1)), Some(&2.5));
        assert_eq!(q.energy(&bits("11")).unwrap(), 0.25 + 1.0 - 3.0 + 2.5);
        assert!(QuboProblem::from_coefficients(vec![0.0], [((0, 3), 1.0)], 0.0).is_err());
        assert!(QuboProblem::from_coefficients(vec![], [], 0.0).is_err());
    }

    #[test]
    fn dump_rejects_garbage() {
        assert!(QuboProblem::read_dump("".as_bytes()).is_err());
        assert!(QuboProblem::read_dump("hello\n".as_bytes()).is_err());
        let hdr = "# q4fp-qubo n_vars=2 offset=0 alpha=0 beta=0 gamma=0 bd=1 n_assets=2 levels=1\n";
        assert!(QuboProblem::read_dump(format!("{hdr}1 0 3\n").as_bytes()).is_err());
        assert!(QuboProblem::read_dump(format!("{hdr}0 1\n").as_bytes()).is_err());
        let ok = QuboProblem::read_dump(format!("{hdr}0 1 3\n1 1 -1\n").as_bytes()).unwrap();
        assert_eq!(ok.linear(), &[0.0, -1.0]);
    }
}
