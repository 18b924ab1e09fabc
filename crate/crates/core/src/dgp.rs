//! Synthetic demand-generating processes with exact conditional quantiles,
//! plus the record and dataset types shared by every learner.
//!
//! Five processes are provided. With features `x ~ N(0, Ω)` (`Ω_ii = 1`,
//! `Ω_ij = 0.5`), coefficients `β ~ N(0, 2 I₅)` and `g(x) = Σx / √15`:
//!
//! | kind | demand before clipping                       | noise                 |
//! |------|----------------------------------------------|-----------------------|
//! | a    | `100 − 20p + xᵀβ + ε`                        | `ε ~ N(0, 5)`         |
//! | b    | `100 − 20p + 4 sin(2x₁) + 3x₂x₃ + ε`         | `ε ~ N(0, 5)`         |
//! | c    | `130 (4p − 6)^(−1.3) ε + xᵀβ`                | `log ε ~ N(0, 0.5)`   |
//! | d    | `40 (4 − p)^(sin(3 g(x)) + 1.01) + ε`        | `ε ~ N(0, 4)`         |
//! | e    | `40 + 10 score(text) − 10p + ε`              | `ε ~ N(0, 10)`        |
//!
//! The second argument of `N(·, ·)` is a variance. Realized demand is clipped
//! to `[0, 200]`, so conditional quantiles are clipped the same way.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decisions::{profit, CostParams, DemandSampler};
use crate::error::{Error, Result};
use crate::numerics::{sample_mvn, sort_floats, std_normal_quantile, Covariance, RngStream};

pub const DEMAND_MIN: f64 = 0.0;
pub const DEMAND_MAX: f64 = 200.0;
pub const FEATURE_DIM: usize = 5;
/// Number of prices in the discrete price sets.
pub const DISCRETE_PRICES: usize = 21;

/// Default Monte Carlo size for oracle expected profits.
pub const DEFAULT_ORACLE_MC: usize = 200_000;

/// Word dictionary of the textual process: three words per score level.
pub const WORD_SCORES: [(&str, u8); 15] = [
    ("terrible", 1),
    ("awful", 1),
    ("broken", 1),
    ("poor", 2),
    ("disappointing", 2),
    ("flimsy", 2),
    ("okay", 3),
    ("average", 3),
    ("decent", 3),
    ("good", 4),
    ("recommended", 4),
    ("reliable", 4),
    ("excellent", 5),
    ("outstanding", 5),
    ("perfect", 5),
];

/// Longest generated description, in words.
pub const MAX_DESCRIPTION_WORDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    A,
    B,
    C,
    D,
    E,
}

impl DgpKind {
    pub const ALL: [DgpKind; 5] = [DgpKind::A, DgpKind::B, DgpKind::C, DgpKind::D, DgpKind::E];

    pub fn as_str(self) -> &'static str {
        match self {
            DgpKind::A => "a",
            DgpKind::B => "b",
            DgpKind::C => "c",
            DgpKind::D => "d",
            DgpKind::E => "e",
        }
    }

    pub fn price_bounds(self) -> (f64, f64) {
        match self {
            DgpKind::D => (1.0, 4.0),
            _ => (2.0, 4.0),
        }
    }

    /// Standard deviation of the noise term (log-scale for kind c).
    pub fn default_noise_scale(self) -> f64 {
        match self {
            DgpKind::A | DgpKind::B => 5f64.sqrt(),
            DgpKind::C => 0.5f64.sqrt(),
            DgpKind::D => 2.0,
            DgpKind::E => 10f64.sqrt(),
        }
    }

    pub fn is_text(self) -> bool {
        self == DgpKind::E
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(DgpKind::A),
            "b" => Ok(DgpKind::B),
            "c" => Ok(DgpKind::C),
            "d" => Ok(DgpKind::D),
            "e" => Ok(DgpKind::E),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceMode {
    Discrete,
    Continuous,
}

impl PriceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PriceMode::Discrete => "discrete",
            PriceMode::Continuous => "continuous",
        }
    }
}

impl fmt::Display for PriceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "discrete" => Ok(PriceMode::Discrete),
            "continuous" => Ok(PriceMode::Continuous),
            other => Err(Error::Config(format!("unknown price mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSet {
    Discrete(Vec<f64>),
    Interval { lo: f64, hi: f64 },
}

impl PriceSet {
    pub fn for_kind(kind: DgpKind, mode: PriceMode) -> Self {
        let (lo, hi) = kind.price_bounds();
        match mode {
            PriceMode::Discrete => {
                let step = (hi - lo) / (DISCRETE_PRICES - 1) as f64;
                let mut prices: Vec<f64> =
                    (0..DISCRETE_PRICES).map(|j| lo + step * j as f64).collect();
                prices[DISCRETE_PRICES - 1] = hi;
                PriceSet::Discrete(prices)
            }
            PriceMode::Continuous => PriceSet::Interval { lo, hi },
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            PriceSet::Discrete(ps) => (
                ps.iter().copied().fold(f64::INFINITY, f64::min),
                ps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            PriceSet::Interval { lo, hi } => (*lo, *hi),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            PriceSet::Discrete(ps) => ps[rng.index(ps.len())],
            PriceSet::Interval { lo, hi } => rng.uniform_range(*lo, *hi),
        }
    }

    pub fn discrete_prices(&self) -> Option<&[f64]> {
        match self {
            PriceSet::Discrete(ps) => Some(ps),
            PriceSet::Interval { .. } => None,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        const TOL: f64 = 1e-9;
        match self {
            PriceSet::Discrete(ps) => ps.iter().any(|&q| (q - p).abs() <= TOL),
            PriceSet::Interval { lo, hi } => p >= lo - TOL && p <= hi + TOL,
        }
    }
}

/// Observed features of one sales period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl Features {
    /// Numeric feature vector; text features contribute none.
    pub fn numeric(&self) -> &[f64] {
        match self {
            Features::Numeric(v) => v,
            Features::Text(_) => &[],
        }
    }

    pub fn words(&self) -> Option<&[String]> {
        match self {
            Features::Text(w) => Some(w),
            Features::Numeric(_) => None,
        }
    }
}

/// Splits a description on commas and whitespace into lowercase words.
pub fn parse_description(text: &str) -> Vec<String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandRecord {
    pub x: Features,
    pub p: f64,
    pub d: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DemandRecord>,
}

impl Dataset {
    pub fn new(records: Vec<DemandRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_text(&self) -> bool {
        matches!(
            self.records.first(),
            Some(DemandRecord {
                x: Features::Text(_),
                ..
            })
        )
    }

    /// Width of the numeric feature vector (zero for text data).
    pub fn feature_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.numeric().len())
    }

    /// Errors unless every record has the same feature schema.
    pub fn check_schema(&self) -> Result<()> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::Empty("dataset has no records".into()))?;
        let text = matches!(first.x, Features::Text(_));
        let k = first.x.numeric().len();
        for (i, r) in self.records.iter().enumerate() {
            let same = match &r.x {
                Features::Text(_) => text,
                Features::Numeric(v) => !text && v.len() == k,
            };
            if !same {
                return Err(Error::Schema(format!(
                    "record {i} has a different feature schema"
                )));
            }
            if !(r.p.is_finite() && r.d.is_finite()) {
                return Err(Error::Schema(format!(
                    "record {i} has a non-finite price or demand"
                )));
            }
        }
        Ok(())
    }

    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset::new(self.records[..n.min(self.len())].to_vec())
    }

    pub fn demands(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d).collect()
    }

    /// CSV with header `x1,...,xk,p,d`, or `text,p,d` for text data.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.is_text() {
            w.write_record(["text", "p", "d"])?;
        } else {
            let mut header: Vec<String> =
                (1..=self.feature_dim()).map(|i| format!("x{i}")).collect();
            header.push("p".into());
            header.push("d".into());
            w.write_record(&header)?;
        }
        for r in &self.records {
            let mut row: Vec<String> = match &r.x {
                Features::Text(words) => vec![words.join(", ")],
                Features::Numeric(v) => v.iter().map(|x| x.to_string()).collect(),
            };
            row.push(r.p.to_string());
            row.push(r.d.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let n = header.len();
        if n < 2 || header[n - 2] != "p" || header[n - 1] != "d" {
            return Err(Error::Schema("dataset header must end with `p,d`".into()));
        }
        let text = n == 3 && header[0] == "text";
        if !text {
            for (i, h) in header[..n - 2].iter().enumerate() {
                if *h != format!("x{}", i + 1) {
                    return Err(Error::Schema(format!("unexpected dataset column `{h}`")));
                }
            }
        }
        let parse = |s: &str, line: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("line {line}: `{s}` is not a number")))
        };
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() != n {
                return Err(Error::Schema(format!("line {line}: expected {n} fields")));
            }
            let x = if text {
                Features::Text(parse_description(&row[0]))
            } else {
                Features::Numeric(
                    (0..n - 2)
                        .map(|j| parse(&row[j], line))
                        .collect::<Result<_>>()?,
                )
            };
            records.push(DemandRecord {
                x,
                p: parse(&row[n - 2], line)?,
                d: parse(&row[n - 1], line)?,
            });
        }
        Ok(Dataset::new(records))
    }
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// A fully specified demand process: exact sampler and conditional quantiles.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleModel {
    kind: DgpKind,
    beta: Vec<f64>,
    noise_scale: f64,
    price_set: PriceSet,
    covariance: Covariance,
    word_scores: BTreeMap<String, u8>,
}

impl OracleModel {
    /// Draws `β ~ N(0, 2 I₅)` from a substream of `rng`.
    pub fn new(kind: DgpKind, mode: PriceMode, rng: &RngStream) -> Self {
        let mut beta_rng = rng.derive("beta");
        let beta = (0..FEATURE_DIM)
            .map(|_| 2f64.sqrt() * beta_rng.standard_normal())
            .collect();
        Self {
            kind,
            beta,
            noise_scale: kind.default_noise_scale(),
            price_set: PriceSet::for_kind(kind, mode),
            covariance: Covariance::equicorrelated(FEATURE_DIM, 1.0, 0.5)
                .expect("Ω is positive definite"),
            word_scores: WORD_SCORES
                .iter()
                .map(|&(w, s)| (w.to_string(), s))
                .collect(),
        }
    }

    pub fn make(kind: &str, mode: PriceMode, seed: u64) -> Result<Self> {
        Ok(Self::new(kind.parse()?, mode, &RngStream::new(seed)))
    }

    pub fn with_beta(mut self, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != FEATURE_DIM {
            return Err(Error::Shape {
                expected: FEATURE_DIM,
                actual: beta.len(),
            });
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn with_noise_scale(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "noise scale must be positive, got {sigma}"
            )));
        }
        self.noise_scale = sigma;
        Ok(self)
    }

    pub fn kind(&self) -> DgpKind {
        self.kind
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn price_set(&self) -> &PriceSet {
        &self.price_set
    }

    pub fn word_scores(&self) -> &BTreeMap<String, u8> {
        &self.word_scores
    }

    /// Mean score of the known words; 3 for a description with none.
    pub fn text_score(&self, words: &[String]) -> f64 {
        let scores: Vec<f64> = words
            .iter()
            .filter_map(|w| self.word_scores.get(w.as_str()).map(|&s| f64::from(s)))
            .collect();
        if scores.is_empty() {
            3.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }

    pub fn sample_features(&self, rng: &mut RngStream) -> Features {
        match self.kind {
            DgpKind::E => {
                let len = rng.index(MAX_DESCRIPTION_WORDS + 1);
                Features::Text(
                    (0..len)
                        .map(|_| WORD_SCORES[rng.index(WORD_SCORES.len())].0.to_string())
                        .collect(),
                )
            }
            _ => Features::Numeric(
                sample_mvn(&[0.0; FEATURE_DIM], &self.covariance, rng)
                    .expect("feature dimension is fixed"),
            ),
        }
    }

    fn check_price(&self, p: f64) -> Result<()> {
        let (lo, hi) = self.price_set.bounds();
        if !(p >= lo - 1e-9 && p <= hi + 1e-9) {
            return Err(Error::PriceOutOfRange { price: p, lo, hi });
        }
        Ok(())
    }

    fn check_features(&self, x: &Features) -> Result<()> {
        match (self.kind, x) {
            (DgpKind::E, Features::Text(_)) => Ok(()),
            (DgpKind::E, Features::Numeric(_)) => {
                Err(Error::Schema("process e expects text features".into()))
            }
            (_, Features::Numeric(v)) if v.len() == FEATURE_DIM => Ok(()),
            (_, Features::Numeric(v)) => Err(Error::Shape {
                expected: FEATURE_DIM,
                actual: v.len(),
            }),
            (_, Features::Text(_)) => {
                Err(Error::Schema("numeric process given text features".into()))
            }
        }
    }

    fn linear(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// Demand before clipping, with standard-normal noise variate `z`.
    fn raw_demand(&self, x: &Features, p: f64, z: f64) -> f64 {
        let sigma = self.noise_scale;
        match self.kind {
            DgpKind::A => 100.0 - 20.0 * p + self.linear(x.numeric()) + sigma * z,
            DgpKind::B => {
                let v = x.numeric();
                100.0 - 20.0 * p + 4.0 * (2.0 * v[0]).sin() + 3.0 * v[1] * v[2] + sigma * z
            }
            DgpKind::C => {
                130.0 * (4.0 * p - 6.0).powf(-1.3) * (sigma * z).exp() + self.linear(x.numeric())
            }
            DgpKind::D => {
                let g = x.numeric().iter().sum::<f64>() / 15f64.sqrt();
                40.0 * (4.0 - p).max(0.0).powf((3.0 * g).sin() + 1.01) + sigma * z
            }
            DgpKind::E => {
                let score = self.text_score(x.words().unwrap_or(&[]));
                40.0 + 10.0 * score - 10.0 * p + sigma * z
            }
        }
    }

    /// Clipped demand for a given standard-normal variate. Monotone in `z`.
    pub fn demand_from_noise(&self, x: &Features, p: f64, z: f64) -> f64 {
        self.raw_demand(x, p, z).clamp(DEMAND_MIN, DEMAND_MAX)
    }

    pub fn sample_demand(&self, x: &Features, p: f64, rng: &mut RngStream) -> Result<f64> {
        self.check_price(p)?;
        self.check_features(x)?;
        Ok(self.demand_from_noise(x, p, rng.standard_normal()))
    }

    /// Exact conditional `u`-quantile of clipped demand.
    pub fn oracle_quantile(&self, x: &Features, p: f64, u: f64) -> Result<f64> {
        self.check_price(p)?;
        self.check_features(x)?;
        let z = std_normal_quantile(u)?;
        Ok(self.demand_from_noise(x, p, z))
    }

    /// Monte Carlo conditional mean of clipped demand.
    pub fn mean_demand(
        &self,
        x: &Features,
        p: f64,
        mc_n: usize,
        rng: &RngStream,
    ) -> Result<Estimate> {
        self.check_price(p)?;
        self.check_features(x)?;
        let mut r = rng.derive("oracle-mean");
        let draws: Vec<f64> = (0..mc_n.max(1))
            .map(|_| self.demand_from_noise(x, p, r.standard_normal()))
            .collect();
        Ok(Estimate::from_samples(&draws))
    }

    /// Monte Carlo `E[Π(D, p, q) | x, p]` from `mc_n` draws of a dedicated
    /// substream of `rng`. Repeated calls with the same `rng` reuse the same
    /// noise variates, so comparisons across `p` and `q` are paired.
    pub fn expected_profit(
        &self,
        x: &Features,
        p: f64,
        q: f64,
        costs: &CostParams,
        mc_n: usize,
        rng: &RngStream,
    ) -> Result<Estimate> {
        self.check_price(p)?;
        self.check_features(x)?;
        if q < 0.0 {
            return Err(Error::Domain(format!(
                "order quantity must be nonnegative, got {q}"
            )));
        }
        let mut r = rng.derive("oracle-profit");
        let values: Vec<f64> = (0..mc_n.max(1))
            .map(|_| {
                profit(
                    self.demand_from_noise(x, p, r.standard_normal()),
                    p,
                    q,
                    costs,
                )
            })
            .collect();
        Ok(Estimate::from_samples(&values))
    }

    pub fn generate_record(&self, rng: &mut RngStream) -> DemandRecord {
        let x = self.sample_features(rng);
        let p = self.price_set.sample(rng);
        let d = self.demand_from_noise(&x, p, rng.standard_normal());
        DemandRecord { x, p, d }
    }

    /// `n` records drawn sequentially, so a shorter corpus from the same
    /// stream is a prefix of a longer one.
    pub fn generate_dataset(&self, n: usize, rng: &mut RngStream) -> Dataset {
        Dataset::new((0..n).map(|_| self.generate_record(rng)).collect())
    }
}

impl DemandSampler for OracleModel {
    fn sample_at_prices(
        &self,
        x: &Features,
        prices: &[f64],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_features(x)?;
        for &p in prices {
            self.check_price(p)?;
        }
        let mut z = vec![0.0; m];
        rng.fill_standard_normal(&mut z);
        Ok(prices
            .iter()
            .map(|&p| {
                let mut s: Vec<f64> = z.iter().map(|&v| self.demand_from_noise(x, p, v)).collect();
                sort_floats(&mut s);
                s
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros() -> Features {
        Features::Numeric(vec![0.0; FEATURE_DIM])
    }

    #[test]
    fn oracle_is_reproducible() {
        let a = OracleModel::make("a", PriceMode::Discrete, 42).unwrap();
        let b = OracleModel::make("a", PriceMode::Discrete, 42).unwrap();
        assert_eq!(a.beta(), b.beta());
        let c = OracleModel::make("a", PriceMode::Discrete, 43).unwrap();
        assert_ne!(a.beta(), c.beta());
        assert!(matches!(
            OracleModel::make("z", PriceMode::Discrete, 1),
            Err(Error::UnknownKind(_))
        ));
    }

    #[test]
    fn g_has_unit_variance_under_omega() {
        // Var(1ᵀx / √15) = 1ᵀ Ω 1 / 15 with row sums 1 + 4·0.5 = 3.
        let m = OracleModel::make("d", PriceMode::Discrete, 1).unwrap();
        let total: f64 = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .map(|(i, j)| m.covariance.get(i, j))
            .sum();
        assert!((total / 15.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_scores() {
        let m = OracleModel::make("e", PriceMode::Discrete, 1).unwrap();
        let covered: std::collections::BTreeSet<u8> = m.word_scores().values().copied().collect();
        assert_eq!(covered.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert_eq!(m.text_score(&[]), 3.0);
        assert_eq!(
            m.text_score(&parse_description("excellent, recommended")),
            4.5
        );
        let mut rng = RngStream::new(2);
        for _ in 0..100 {
            match m.sample_features(&mut rng) {
                Features::Text(w) => assert!(w.len() <= MAX_DESCRIPTION_WORDS),
                Features::Numeric(_) => panic!("text process produced numbers"),
            }
        }
    }

    #[test]
    fn numeric_features_have_dimension_five() {
        let mut rng = RngStream::new(3);
        for kind in ["a", "b", "c", "d"] {
            let m = OracleModel::make(kind, PriceMode::Continuous, 1).unwrap();
            assert_eq!(m.sample_features(&mut rng).numeric().len(), FEATURE_DIM);
        }
    }

    #[test]
    fn deterministic_part_and_clipping() {
        let m = OracleModel::make("a", PriceMode::Discrete, 1).unwrap();
        assert_eq!(m.demand_from_noise(&zeros(), 3.0, 0.0), 40.0);
        let m = m.with_beta(vec![-50.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let x = Features::Numeric(vec![1.9, 0.0, 0.0, 0.0, 0.0]);
        // 100 − 80 − 95 = −75 before clipping
        assert_eq!(m.demand_from_noise(&x, 4.0, 0.0), 0.0);
        assert!(matches!(
            m.sample_demand(&zeros(), 4.5, &mut RngStream::new(1)),
            Err(Error::PriceOutOfRange { .. })
        ));
    }

    #[test]
    fn lognormal_median_kind_c() {
        let m = OracleModel::make("c", PriceMode::Discrete, 1)
            .unwrap()
            .with_beta(vec![0.0; 5])
            .unwrap();
        let median = 130.0 * 2f64.powf(-1.3);
        assert!((median - 52.79).abs() < 0.01);
        assert!((m.oracle_quantile(&zeros(), 2.0, 0.5).unwrap() - median).abs() < 1e-9);
        let mut rng = RngStream::new(4);
        let mut draws: Vec<f64> = (0..1_000_000)
            .map(|_| m.sample_demand(&zeros(), 2.0, &mut rng).unwrap())
            .collect();
        sort_floats(&mut draws);
        assert!(
            (draws[500_000] - median).abs() < 0.2,
            "MC median {}",
            draws[500_000]
        );
    }

    #[test]
    fn quantile_closed_form_kind_a() {
        let m = OracleModel::make("a", PriceMode::Discrete, 1)
            .unwrap()
            .with_beta(vec![0.0; 5])
            .unwrap();
        let q = m.oracle_quantile(&zeros(), 3.0, 0.8).unwrap();
        assert!((q - (40.0 + 0.841621 * 5f64.sqrt())).abs() < 1e-5);
        assert!((q - 41.882).abs() < 1e-3);
        assert_eq!(m.oracle_quantile(&zeros(), 3.0, 0.5).unwrap(), 40.0);
        assert!(m.oracle_quantile(&zeros(), 3.0, 1.0).is_err());

        let mut rng = RngStream::new(5);
        let mut draws: Vec<f64> = (0..1_000_000)
            .map(|_| m.sample_demand(&zeros(), 3.0, &mut rng).unwrap())
            .collect();
        sort_floats(&mut draws);
        assert!((draws[800_000] - q).abs() < 0.02);
    }

    #[test]
    fn quantile_clips_at_upper_bound() {
        let m = OracleModel::make("a", PriceMode::Discrete, 1)
            .unwrap()
            .with_beta(vec![100.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let x = Features::Numeric(vec![2.1, 0.0, 0.0, 0.0, 0.0]);
        // raw median 40 + 210 = 250
        assert_eq!(m.oracle_quantile(&x, 3.0, 0.5).unwrap(), DEMAND_MAX);
    }

    #[test]
    fn expected_profit_edge_cases() {
        let costs = CostParams::default();
        let m = OracleModel::make("a", PriceMode::Discrete, 1).unwrap();
        let rng = RngStream::new(6);
        let zero = m
            .expected_profit(&zeros(), 3.0, 0.0, &costs, 1000, &rng)
            .unwrap();
        assert_eq!(zero.mean, 0.0);

        let sharp = m
            .with_beta(vec![0.0; 5])
            .unwrap()
            .with_noise_scale(1e-9)
            .unwrap();
        let est = sharp
            .expected_profit(&zeros(), 3.0, 40.0, &costs, 1000, &rng)
            .unwrap();
        assert!((est.mean - 80.0).abs() < 1e-6);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let m = OracleModel::make("b", PriceMode::Discrete, 3).unwrap();
        let data = m.generate_dataset(20, &mut RngStream::new(1));
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,p,d\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), data);

        let m = OracleModel::make("e", PriceMode::Discrete, 3).unwrap();
        let data = m.generate_dataset(20, &mut RngStream::new(1));
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("text,p,d\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), data);
    }

    #[test]
    fn read_csv_rejects_bad_header() {
        assert!(Dataset::read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,p,d\n1,abc,3\n".as_bytes()).is_err());
    }

    #[test]
    fn generated_corpus_respects_bounds_and_prefixes() {
        for kind in DgpKind::ALL {
            for mode in [PriceMode::Discrete, PriceMode::Continuous] {
                let m = OracleModel::new(kind, mode, &RngStream::new(9));
                let long = m.generate_dataset(500, &mut RngStream::new(10));
                let short = m.generate_dataset(50, &mut RngStream::new(10));
                assert_eq!(long.prefix(50), short);
                for r in &long.records {
                    assert!((DEMAND_MIN..=DEMAND_MAX).contains(&r.d));
                    assert!(m.price_set().contains(r.p));
                }
            }
        }
    }
}
