use crate::decisions::{empirical_quantile, profit, rho, CostParams, JointDecision, PricePoint};
use crate::dgp::{Dataset, Features};
use crate::error::{Error, Result};
use crate::numerics::{least_squares, ridge_least_squares, sort_floats};

const RIDGE_FALLBACK: f64 = 1e-9;

/// Linear demand fit `α p + βᵀx + γ` plus its empirical residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct RbeModel {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Ascending.
    pub residuals: Vec<f64>,
}

/// Ordinary least squares of demand on `(p, x, 1)`.
pub fn rbe_fit(data: &Dataset) -> Result<RbeModel> {
    data.check_schema()?;
    let k = data.feature_dim();
    let cols = k + 2;
    if data.len() < cols {
        return Err(Error::Singular);
    }
    let mut design = Vec::with_capacity(data.len() * cols);
    for r in &data.records {
        design.push(r.p);
        design.extend_from_slice(r.x.numeric());
        design.push(1.0);
    }
    let demands = data.demands();
    // Collinear designs (one-hot columns beside the intercept, constant
    // columns) fall back to a vanishing ridge.
    let coef = match least_squares(&design, data.len(), cols, &demands) {
        Err(Error::Singular) => {
            ridge_least_squares(&design, data.len(), cols, &demands, RIDGE_FALLBACK)?
        }
        other => other?,
    };
    let mut model = RbeModel {
        alpha: coef[0],
        beta: coef[1..=k].to_vec(),
        intercept: coef[k + 1],
        residuals: Vec::new(),
    };
    let mut residuals: Vec<f64> = data
        .records
        .iter()
        .map(|r| r.d - model.linear(&r.x, r.p))
        .collect();
    sort_floats(&mut residuals);
    model.residuals = residuals;
    Ok(model)
}

impl RbeModel {
    pub fn linear(&self, x: &Features, p: f64) -> f64 {
        self.alpha * p
            + x.numeric()
                .iter()
                .zip(&self.beta)
                .map(|(a, b)| a * b)
                .sum::<f64>()
            + self.intercept
    }

    pub fn decide(&self, x: &Features, p: f64, costs: &CostParams) -> Result<f64> {
        let shift = empirical_quantile(&self.residuals, rho(p, costs)?)?;
        Ok((self.linear(x, p) + shift).max(0.0))
    }

    /// Grid search using the fitted demand distribution `max(0, linear + ε̂_i)`.
    pub fn joint(&self, x: &Features, grid: &[f64], costs: &CostParams) -> Result<JointDecision> {
        let profile = grid
            .iter()
            .map(|&p| {
                let q = self.decide(x, p, costs)?;
                let base = self.linear(x, p);
                let total: f64 = self
                    .residuals
                    .iter()
                    .map(|e| profit((base + e).max(0.0), p, q, costs))
                    .sum();
                Ok(PricePoint {
                    price: p,
                    quantity: q,
                    profit: total / self.residuals.len() as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        JointDecision::from_profile(profile)
    }
}
