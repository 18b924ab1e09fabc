use serde::{Deserialize, Serialize};

use crate::decisions::{
    empirical_quantile, estimate_profit, rho, CostParams, JointDecision, PricePoint,
};
use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::numerics::sort_floats;

/// Which historical records inform the decision at price `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaaMode {
    /// Records observed at exactly `p`.
    ExactPrice,
    /// Records with `|p_i − p| ≤ w`.
    Window(f64),
    /// Every record, whatever its price.
    Pooled,
}

/// Feature-blind empirical quantile policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SaaModel {
    mode: SaaMode,
    /// `(price, demand)` sorted by price.
    records: Vec<(f64, f64)>,
}

const PRICE_MATCH_TOL: f64 = 1e-9;

impl SaaModel {
    pub fn fit(data: &Dataset, mode: SaaMode) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("SAA needs at least one record".into()));
        }
        if let SaaMode::Window(w) = mode {
            if !(w >= 0.0) {
                return Err(Error::Domain(format!(
                    "SAA window must be nonnegative, got {w}"
                )));
            }
        }
        let mut records: Vec<(f64, f64)> = data.records.iter().map(|r| (r.p, r.d)).collect();
        records.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self { mode, records })
    }

    pub fn mode(&self) -> SaaMode {
        self.mode
    }

    /// Ascending demands used at price `p`.
    pub fn demands_at(&self, p: f64) -> Result<Vec<f64>> {
        let width = match self.mode {
            SaaMode::ExactPrice => PRICE_MATCH_TOL,
            SaaMode::Window(w) => w + PRICE_MATCH_TOL,
            SaaMode::Pooled => f64::INFINITY,
        };
        let mut d: Vec<f64> = self
            .records
            .iter()
            .filter(|(pi, _)| (pi - p).abs() <= width)
            .map(|&(_, d)| d)
            .collect();
        if d.is_empty() {
            return Err(Error::NoRecordsAtPrice(p));
        }
        sort_floats(&mut d);
        Ok(d)
    }

    pub fn decide(&self, p: f64, costs: &CostParams) -> Result<f64> {
        empirical_quantile(&self.demands_at(p)?, rho(p, costs)?)
    }
}

/// Joint decision from the pooled demand sample, evaluating every price
/// against the same demands as if price had no effect on demand.
pub fn saa_joint(data: &Dataset, grid: &[f64], costs: &CostParams) -> Result<JointDecision> {
    if data.is_empty() {
        return Err(Error::Empty(
            "SAA joint pricing needs at least one record".into(),
        ));
    }
    let mut pooled = data.demands();
    sort_floats(&mut pooled);
    let profile = grid
        .iter()
        .map(|&p| {
            let q = empirical_quantile(&pooled, rho(p, costs)?)?;
            Ok(PricePoint {
                price: p,
                quantity: q,
                profit: estimate_profit(&pooled, p, q, costs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    JointDecision::from_profile(profile)
}
