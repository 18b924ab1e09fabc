use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::decisions::{rho, CostParams};
use crate::dgp::{Dataset, Features};
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState, Mlp};
use crate::numerics::RngStream;

/// Quantile levels of the default model bank.
pub const DEFAULT_TAU_BANK: [f64; 7] = [0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErmForm {
    Linear,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate of the neural form; decays linearly to 1% of
    /// itself.
    pub lr: f64,
    /// Initial learning rate of the linear form, same schedule.
    pub linear_lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            linear_lr: 1e-2,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

/// `τ (d − f)⁺ + (1 − τ)(f − d)⁺`.
pub fn pinball_loss(tau: f64, d: f64, f: f64) -> f64 {
    if d >= f {
        tau * (d - f)
    } else {
        (1.0 - tau) * (f - d)
    }
}

/// Direct regression of the `τ`-quantile on `(x, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PinballModel {
    pub form: ErmForm,
    pub tau: f64,
    net: Mlp,
    shift: Vec<f64>,
    scale: Vec<f64>,
    target_shift: f64,
    target_scale: f64,
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let width = rows[0].len();
    (0..width)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

fn inputs(x: &Features, p: f64) -> Vec<f64> {
    let mut v = x.numeric().to_vec();
    v.push(p);
    v
}

/// Fits one pinball-loss model by minibatch Adam.
pub fn erm_fit(data: &Dataset, tau: f64, form: ErmForm, cfg: &ErmConfig) -> Result<PinballModel> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!(
            "quantile level must lie in (0, 1), got {tau}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("ERM needs at least one record".into()));
    }
    let lr = match form {
        ErmForm::Linear => cfg.linear_lr,
        ErmForm::Neural => cfg.lr,
    };
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(lr > 0.0) {
        return Err(Error::Config(
            "ERM epochs, batch size and lr must be positive".into(),
        ));
    }
    data.check_schema()?;
    let raw: Vec<Vec<f64>> = data.records.iter().map(|r| inputs(&r.x, r.p)).collect();
    let (shift, scale) = column_stats(&raw);
    let demands = data.demands();
    let (target_shift, target_scale) =
        column_stats(&demands.iter().map(|&d| vec![d]).collect::<Vec<_>>());
    let (target_shift, target_scale) = (target_shift[0], target_scale[0]);
    let width = shift.len();
    let std_inputs: Vec<f64> = raw
        .iter()
        .flat_map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - shift[j]) / scale[j])
                .collect::<Vec<_>>()
        })
        .collect();
    let targets: Vec<f64> = demands
        .iter()
        .map(|d| (d - target_shift) / target_scale)
        .collect();

    let root = RngStream::new(cfg.seed).derive(&format!("erm/{form:?}/{tau}"));
    let hidden: &[usize] = match form {
        ErmForm::Linear => &[],
        ErmForm::Neural => &cfg.hidden,
    };
    let mut net = Mlp::init(width, hidden, 1, &mut root.derive("init"));
    let mut adam = AdamState::for_params(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        &net.param_slices(),
    );
    let mut order_rng = root.derive("order");
    let n = data.len();
    for epoch in 0..cfg.epochs {
        let t = if cfg.epochs > 1 {
            epoch as f64 / (cfg.epochs - 1) as f64
        } else {
            0.0
        };
        adam.config.lr = lr * (1.0 - 0.99 * t);
        for batch in order_rng.permutation(n).chunks(cfg.batch_size) {
            let mut input = Array2::<f64>::zeros((batch.len(), width));
            for (bi, &i) in batch.iter().enumerate() {
                input
                    .row_mut(bi)
                    .as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&std_inputs[i * width..(i + 1) * width]);
            }
            let (out, tape) = net.forward_batch(input.view())?;
            let bsize = batch.len() as f64;
            let mut grad = Array2::<f64>::zeros((batch.len(), 1));
            let mut loss = 0.0;
            for (bi, &i) in batch.iter().enumerate() {
                let f = out[[bi, 0]];
                loss += pinball_loss(tau, targets[i], f);
                grad[[bi, 0]] = if targets[i] >= f { -tau } else { 1.0 - tau } / bsize;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "pinball loss at epoch {epoch}"
                )));
            }
            let (g, _) = net.backward_batch(&tape, grad.view())?;
            adam.step(&mut net.param_slices_mut(), &g.slices())?;
        }
    }
    Ok(PinballModel {
        form,
        tau,
        net,
        shift,
        scale,
        target_shift,
        target_scale,
    })
}

impl PinballModel {
    pub fn predict(&self, x: &Features, p: f64) -> Result<f64> {
        let raw = inputs(x, p);
        if raw.len() != self.shift.len() {
            return Err(Error::Shape {
                expected: self.shift.len(),
                actual: raw.len(),
            });
        }
        let input: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.shift[j]) / self.scale[j])
            .collect();
        let (out, _) = self.net.forward(&input)?;
        Ok(out[0] * self.target_scale + self.target_shift)
    }

    /// Mean pinball loss on `data`, in demand units.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for r in &data.records {
            total += pinball_loss(self.tau, r.d, self.predict(&r.x, r.p)?);
        }
        Ok(total / data.len() as f64)
    }
}

/// Models at several quantile levels; each decision uses the level nearest
/// the critical ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct ErmBank {
    pub models: Vec<PinballModel>,
}

impl ErmBank {
    pub fn fit(data: &Dataset, taus: &[f64], form: ErmForm, cfg: &ErmConfig) -> Result<Self> {
        let models = taus
            .iter()
            .map(|&t| erm_fit(data, t, form, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }

    pub fn nearest(&self, level: f64) -> Result<&PinballModel> {
        self.models
            .iter()
            .min_by(|a, b| (a.tau - level).abs().total_cmp(&(b.tau - level).abs()))
            .ok_or_else(|| Error::Empty("ERM model bank is empty".into()))
    }

    pub fn decide(&self, x: &Features, p: f64, costs: &CostParams) -> Result<f64> {
        Ok(self.nearest(rho(p, costs)?)?.predict(x, p)?.max(0.0))
    }
}
