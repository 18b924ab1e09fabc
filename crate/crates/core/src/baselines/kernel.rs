use crate::decisions::{profit, rho, CostParams, JointDecision, PricePoint};
use crate::dgp::{Dataset, Features};
use crate::error::{Error, Result};
use crate::numerics::sample_std;

/// Log-weights below this are treated as exact zeros.
const MIN_LOG_WEIGHT: f64 = -700.0;

/// Gaussian product kernel bandwidths for features and price.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelWeights {
    pub feature_bandwidth: Vec<f64>,
    pub price_bandwidth: f64,
}

fn silverman(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let sd = sample_std(values).filter(|s| *s > 1e-12).unwrap_or(1.0);
    1.06 * sd * n.powf(-0.2)
}

impl KernelWeights {
    pub fn new(feature_bandwidth: Vec<f64>, price_bandwidth: f64) -> Result<Self> {
        if feature_bandwidth
            .iter()
            .chain([&price_bandwidth])
            .any(|&h| !(h > 0.0 && h.is_finite()))
        {
            return Err(Error::Domain("kernel bandwidths must be positive".into()));
        }
        Ok(Self {
            feature_bandwidth,
            price_bandwidth,
        })
    }

    /// `1.06 σ̂ n^(−1/5)` per dimension.
    pub fn silverman(data: &Dataset) -> Result<Self> {
        data.check_schema()?;
        let k = data.feature_dim();
        let features = (0..k)
            .map(|j| {
                silverman(
                    &data
                        .records
                        .iter()
                        .map(|r| r.x.numeric()[j])
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let prices: Vec<f64> = data.records.iter().map(|r| r.p).collect();
        Self::new(features, silverman(&prices))
    }

    pub fn log_weight(&self, x: &[f64], p: f64, xi: &[f64], pi: f64) -> f64 {
        let mut acc = 0.0;
        for ((a, b), h) in x.iter().zip(xi).zip(&self.feature_bandwidth) {
            let z = (a - b) / h;
            acc += z * z;
        }
        let z = (p - pi) / self.price_bandwidth;
        -0.5 * (acc + z * z)
    }
}

/// Training records sorted by demand, ready for kernel-weighted decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct KoModel {
    weights: KernelWeights,
    k: usize,
    x: Vec<f64>,
    p: Vec<f64>,
    d: Vec<f64>,
}

/// Smallest ascending value whose cumulative weight reaches `level` of the
/// total weight.
pub fn weighted_quantile(sorted: &[f64], weights: &[f64], level: f64) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if sorted.is_empty() || !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let target = level * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for (v, w) in sorted.iter().zip(weights) {
        acc += w;
        if acc >= target && *w > 0.0 {
            return Ok(*v);
        }
    }
    Ok(*sorted
        .iter()
        .zip(weights)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .expect("positive total")
        .0)
}

impl KoModel {
    pub fn fit(data: &Dataset, weights: KernelWeights) -> Result<Self> {
        data.check_schema()?;
        let k = data.feature_dim();
        if weights.feature_bandwidth.len() != k {
            return Err(Error::Shape {
                expected: k,
                actual: weights.feature_bandwidth.len(),
            });
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let recs = &data.records;
        order.sort_by(|&a, &b| recs[a].d.total_cmp(&recs[b].d));
        Ok(Self {
            weights,
            k,
            x: order
                .iter()
                .flat_map(|&i| recs[i].x.numeric().iter().copied())
                .collect(),
            p: order.iter().map(|&i| recs[i].p).collect(),
            d: order.iter().map(|&i| recs[i].d).collect(),
        })
    }

    pub fn silverman(data: &Dataset) -> Result<Self> {
        Self::fit(data, KernelWeights::silverman(data)?)
    }

    pub fn kernel(&self) -> &KernelWeights {
        &self.weights
    }

    /// Weights aligned with the demand-sorted records, scaled so the largest
    /// is one.
    pub fn weights_at(&self, x: &Features, p: f64) -> Result<Vec<f64>> {
        let xv = x.numeric();
        if xv.len() != self.k {
            return Err(Error::Shape {
                expected: self.k,
                actual: xv.len(),
            });
        }
        let logs: Vec<f64> = (0..self.d.len())
            .map(|i| {
                self.weights
                    .log_weight(xv, p, &self.x[i * self.k..(i + 1) * self.k], self.p[i])
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= MIN_LOG_WEIGHT) {
            return Err(Error::ZeroWeights);
        }
        Ok(logs.iter().map(|l| (l - max).exp()).collect())
    }

    /// Maximizer over `q ∈ {d_i}` of `Σ w_i Π(d_i, p_i, q) / Σ w_i`: the
    /// smallest demand whose cumulative `w_i (p_i − s)` reaches
    /// `Σ w_i (p_i − c)`.
    pub fn decide(&self, x: &Features, p: f64, costs: &CostParams) -> Result<f64> {
        let w = self.weights_at(x, p)?;
        let target: f64 = w
            .iter()
            .zip(&self.p)
            .map(|(w, pi)| w * (pi - costs.c).max(0.0))
            .sum();
        let target = target * (1.0 - 1e-12);
        let mut acc = 0.0;
        for i in 0..self.d.len() {
            acc += w[i] * (self.p[i] - costs.s);
            if acc >= target && w[i] > 0.0 {
                return Ok(self.d[i]);
            }
        }
        Ok(self.d[self.d.len() - 1])
    }

    /// Weighted `ρ(p)`-quantile and weighted profit at each grid price, with
    /// the grid price substituted into the profit of every record.
    pub fn joint(&self, x: &Features, grid: &[f64], costs: &CostParams) -> Result<JointDecision> {
        let mut profile = Vec::with_capacity(grid.len());
        for &p in grid {
            let level = rho(p, costs)?;
            let w = match self.weights_at(x, p) {
                Ok(w) => w,
                Err(Error::ZeroWeights) => continue,
                Err(e) => return Err(e),
            };
            let q = weighted_quantile(&self.d, &w, level)?;
            let total: f64 = w.iter().sum();
            let value: f64 = w
                .iter()
                .zip(&self.d)
                .map(|(w, &d)| w * profit(d, p, q, costs))
                .sum();
            profile.push(PricePoint {
                price: p,
                quantity: q,
                profit: value / total,
            });
        }
        if profile.is_empty() {
            return Err(Error::ZeroWeights);
        }
        JointDecision::from_profile(profile)
    }
}

pub fn ko_decide(
    data: &Dataset,
    x: &Features,
    p: f64,
    costs: &CostParams,
    weights: &KernelWeights,
) -> Result<f64> {
    KoModel::fit(data, weights.clone())?.decide(x, p, costs)
}

pub fn prescriptive_joint(
    data: &Dataset,
    x: &Features,
    grid: &[f64],
    costs: &CostParams,
    weights: &KernelWeights,
) -> Result<JointDecision> {
    if grid.is_empty() {
        return Err(Error::Empty(
            "joint decision needs a nonempty price grid".into(),
        ));
    }
    KoModel::fit(data, weights.clone())?.joint(x, grid, costs)
}
