//! Newsvendor profit arithmetic and the sample-based decision rules: the
//! order-statistic inventory decision and the grid search over prices.

use serde::{Deserialize, Serialize};

use crate::dgp::Features;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Unit purchase cost `c` and salvage value `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub c: f64,
    pub s: f64,
}

impl CostParams {
    pub fn new(c: f64, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s <= c && c.is_finite()) {
            return Err(Error::Domain(format!(
                "costs need 0 <= s <= c, got c = {c}, s = {s}"
            )));
        }
        Ok(Self { c, s })
    }
}

impl Default for CostParams {
    fn default() -> Self {
        Self { c: 1.0, s: 0.5 }
    }
}

/// Realized profit `p·min(q, d) + s·(q − d)⁺ − c·q`.
pub fn profit(d: f64, p: f64, q: f64, costs: &CostParams) -> f64 {
    (p - costs.c) * d - (costs.c - costs.s) * (q - d).max(0.0) - (p - costs.c) * (d - q).max(0.0)
}

/// Critical ratio `(p − c) / (p − s)`.
pub fn rho(p: f64, costs: &CostParams) -> Result<f64> {
    if !(p > costs.c) {
        return Err(Error::Domain(format!(
            "critical ratio needs price above cost, got p = {p}, c = {}",
            costs.c
        )));
    }
    Ok((p - costs.c) / (p - costs.s))
}

/// Mean profit over a demand sample.
pub fn estimate_profit(samples: &[f64], p: f64, q: f64, costs: &CostParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty(
            "profit estimate needs at least one demand sample".into(),
        ));
    }
    Ok(samples.iter().map(|&d| profit(d, p, q, costs)).sum::<f64>() / samples.len() as f64)
}

/// Zero-based index of the `⌈m·level⌉`-th order statistic, clamped to the
/// sample.
pub fn order_statistic_index(m: usize, level: f64) -> usize {
    debug_assert!(m > 0);
    // Guard against ceil(8.000000000000002) = 9 from rounding in m·level.
    let raw = m as f64 * level;
    let rank = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (rank.max(1.0) as usize).min(m) - 1
}

/// Empirical `level`-quantile of ascending samples.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("quantile of an empty sample".into()));
    }
    Ok(sorted[order_statistic_index(sorted.len(), level)])
}

/// Order quantity maximizing the sample-average profit at price `p`: the
/// `⌈M·ρ(p)⌉`-th smallest sample.
pub fn inventory_decision(sorted: &[f64], p: f64, costs: &CostParams) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty(
            "inventory decision needs at least one demand sample".into(),
        ));
    }
    empirical_quantile(sorted, rho(p, costs)?)
}

/// Source of conditional demand samples: a trained generator or an exact
/// oracle sampler.
pub trait DemandSampler {
    /// `m` ascending samples for every price in `prices`.
    fn sample_at_prices(
        &self,
        x: &Features,
        prices: &[f64],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>>;

    fn sample(&self, x: &Features, p: f64, m: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(self.sample_at_prices(x, &[p], m, rng)?.remove(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub price: f64,
    pub quantity: f64,
    pub profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDecision {
    pub price: f64,
    pub quantity: f64,
    pub profit: f64,
    pub profile: Vec<PricePoint>,
}

impl JointDecision {
    /// Picks the profile point with the highest estimated profit, breaking
    /// exact ties toward the lower price.
    pub fn from_profile(profile: Vec<PricePoint>) -> Result<Self> {
        let best = profile
            .iter()
            .copied()
            .reduce(|best, pt| {
                if pt.profit > best.profit || (pt.profit == best.profit && pt.price < best.price) {
                    pt
                } else {
                    best
                }
            })
            .ok_or_else(|| Error::Empty("joint decision needs a nonempty price grid".into()))?;
        Ok(Self {
            price: best.price,
            quantity: best.quantity,
            profit: best.profit,
            profile,
        })
    }
}

/// Joint price and quantity: for each grid price, the order-statistic
/// quantity and its sample-average profit; then the best price.
pub fn joint_decision<S: DemandSampler + ?Sized>(
    sampler: &S,
    x: &Features,
    grid: &[f64],
    m: usize,
    costs: &CostParams,
    rng: &mut RngStream,
) -> Result<JointDecision> {
    if grid.is_empty() {
        return Err(Error::Empty(
            "joint decision needs a nonempty price grid".into(),
        ));
    }
    if m == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    for &p in grid {
        rho(p, costs)?;
    }
    let samples = sampler.sample_at_prices(x, grid, m, rng)?;
    let profile = grid
        .iter()
        .zip(&samples)
        .map(|(&p, s)| {
            let q = inventory_decision(s, p, costs)?;
            Ok(PricePoint {
                price: p,
                quantity: q,
                profit: estimate_profit(s, p, q, costs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    JointDecision::from_profile(profile)
}

/// How to discretize a price set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Discrete(Vec<f64>),
    Uniform {
        lo: f64,
        hi: f64,
        points: usize,
    },
    /// Size chosen from the tolerance `eps` and the profit bound `bound`
    /// and Lipschitz constant `lipschitz` of the demand model.
    Tolerance {
        lo: f64,
        hi: f64,
        eps: f64,
        bound: f64,
        lipschitz: f64,
    },
}

/// Grid size guaranteeing a profit loss of at most `eps` from discretizing.
pub fn grid_size_for_tolerance(
    p_max: f64,
    eps: f64,
    bound: f64,
    lipschitz: f64,
    costs: &CostParams,
) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "grid tolerance must be positive, got {eps}"
        )));
    }
    if !(bound > 0.0 && lipschitz > 0.0) {
        return Err(Error::Domain("grid constants must be positive".into()));
    }
    let raw = p_max * (2.0 * bound + (2.0 * p_max - costs.c - costs.s) * lipschitz) / eps;
    Ok(((raw - 1e-9 * raw).ceil() as usize).max(1))
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 || !(lo <= hi) {
        return Err(Error::Empty(format!(
            "price grid [{lo}, {hi}] with {points} points"
        )));
    }
    if points == 1 || lo == hi {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|j| {
            if j == points - 1 {
                hi
            } else {
                lo + step * j as f64
            }
        })
        .collect())
}

pub fn build_price_grid(spec: &GridSpec, costs: &CostParams) -> Result<Vec<f64>> {
    match spec {
        GridSpec::Discrete(prices) => {
            if prices.is_empty() {
                return Err(Error::Empty("discrete price set".into()));
            }
            Ok(prices.clone())
        }
        GridSpec::Uniform { lo, hi, points } => uniform_grid(*lo, *hi, *points),
        GridSpec::Tolerance {
            lo,
            hi,
            eps,
            bound,
            lipschitz,
        } => {
            let j = grid_size_for_tolerance(*hi, *eps, *bound, *lipschitz, costs)?;
            uniform_grid(*lo, *hi, j)
        }
    }
}
