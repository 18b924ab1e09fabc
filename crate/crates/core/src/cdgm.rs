//! Conditional generative demand model.
//!
//! A generator `G(x, p, η)` maps conditions and Gaussian noise `η ~ N(0, I_r)`
//! to a demand draw. It is trained either by minimizing the energy score of
//! its samples or adversarially against a discriminator. Once trained, the
//! generator alone produces demand samples; the training data is no longer
//! needed.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::decisions::DemandSampler;
use crate::dgp::{Dataset, Features, DEMAND_MAX, DEMAND_MIN};
use crate::error::{Error, Result};
use crate::neural::{Activation, AdamConfig, AdamState, Dense, EmbeddingTable, Mlp};
use crate::numerics::{sort_floats, RngStream};

pub const MODEL_FORMAT: &str = "genvendor-generator";
pub const MODEL_VERSION: u64 = 1;

/// Rows per forward pass when sampling.
const SAMPLE_CHUNK_ROWS: usize = 16_384;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStrategy {
    Adversarial,
    EnergyScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: TrainStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last epoch as a fraction of `lr` (linear decay).
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled weight decay on generator weight matrices, scaled by the
    /// current learning rate.
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub samples_per_condition: usize,
    /// Share of records held out to pick the best epoch; 0 trains on all
    /// records and keeps the final weights.
    pub validation_fraction: f64,
    /// Noise draws per held-out record when scoring an epoch.
    pub validation_samples: usize,
    /// Stop after this many epochs without a held-out improvement; 0 never
    /// stops early.
    pub patience: usize,
    /// Feed word embeddings of text features to the network.
    pub use_text: bool,
    pub embedding_dim: usize,
    pub clip: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: TrainStrategy::EnergyScore,
            epochs: 150,
            batch_size: 128,
            lr: 3e-3,
            final_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 2.0,
            hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            noise_dim: 5,
            samples_per_condition: 10,
            validation_fraction: 0.0,
            validation_samples: 50,
            patience: 60,
            use_text: true,
            embedding_dim: 8,
            clip: (DEMAND_MIN, DEMAND_MAX),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the adversarial trainer.
    pub fn adversarial() -> Self {
        Self {
            strategy: TrainStrategy::Adversarial,
            lr: 2e-4,
            beta1: 0.5,
            weight_decay: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("samples_per_condition", self.samples_per_condition),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.strategy == TrainStrategy::EnergyScore && self.samples_per_condition < 2 {
            return Err(Error::Config(
                "samples_per_condition must be at least 2".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(
                "validation_fraction must lie in [0, 0.5)".into(),
            ));
        }
        if self.validation_fraction > 0.0 && self.validation_samples < 2 {
            return Err(Error::Config(
                "validation_samples must be at least 2".into(),
            ));
        }
        if self.hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.clip.0 < self.clip.1) {
            return Err(Error::Config("clip bounds must satisfy lo < hi".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * (1.0 - t * (1.0 - self.final_lr_fraction))
    }
}

/// Affine maps to and from the standardized training scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub price_mean: f64,
    pub price_scale: f64,
    pub demand_mean: f64,
    pub demand_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        data.check_schema()?;
        let k = data.feature_dim();
        let (feature_mean, feature_scale) = (0..k)
            .map(|j| mean_and_scale(data.records.iter().map(move |r| r.x.numeric()[j])))
            .unzip();
        let (price_mean, price_scale) = mean_and_scale(data.records.iter().map(|r| r.p));
        let (demand_mean, demand_scale) = mean_and_scale(data.records.iter().map(|r| r.d));
        Ok(Self {
            feature_mean,
            feature_scale,
            price_mean,
            price_scale,
            demand_mean,
            demand_scale,
        })
    }

    fn check(&self) -> Result<()> {
        if self.feature_mean.len() != self.feature_scale.len() {
            return Err(Error::Payload("standardizer feature lengths differ".into()));
        }
        let scales = self
            .feature_scale
            .iter()
            .chain([&self.price_scale, &self.demand_scale]);
        if scales.into_iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Payload(
                "standardizer scales must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trained conditional generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    net: Mlp,
    noise_dim: usize,
    standardizer: Standardizer,
    embedding: Option<EmbeddingTable>,
    clip: (f64, f64),
    config: TrainConfig,
}

/// Per-epoch mean training loss and held-out energy score.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub validation: Vec<f64>,
    /// Epoch whose weights were kept, when a held-out split was used.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    /// Mean loss over the first and last `fraction` of epochs.
    pub fn head_tail_means(&self, fraction: f64) -> (f64, f64) {
        let n = self.losses.len();
        let w = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (avg(&self.losses[..w]), avg(&self.losses[n - w..]))
    }
}

impl Generator {
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn clip(&self) -> (f64, f64) {
        self.clip
    }

    pub fn uses_text(&self) -> bool {
        self.embedding.is_some()
    }

    fn feature_dim(&self) -> usize {
        self.standardizer.feature_mean.len()
    }

    fn condition_dim(&self) -> usize {
        self.feature_dim() + self.embedding.as_ref().map_or(0, EmbeddingTable::dim) + 1
    }

    fn check_features(&self, x: &Features) -> Result<()> {
        let k = x.numeric().len();
        if k != self.feature_dim() {
            return Err(Error::Shape {
                expected: self.feature_dim(),
                actual: k,
            });
        }
        Ok(())
    }

    /// Standardized condition columns `[x, embedding, p]`.
    fn write_condition(&self, x: &Features, p: f64, out: &mut [f64]) {
        let s = &self.standardizer;
        let k = self.feature_dim();
        for (j, v) in x.numeric().iter().enumerate() {
            out[j] = (v - s.feature_mean[j]) / s.feature_scale[j];
        }
        let mut at = k;
        if let Some(table) = &self.embedding {
            table.embed_into(x.words().unwrap_or(&[]), &mut out[k..k + table.dim()]);
            at += table.dim();
        }
        out[at] = (p - s.price_mean) / s.price_scale;
    }

    fn destandardize(&self, v: f64) -> f64 {
        (v * self.standardizer.demand_scale + self.standardizer.demand_mean)
            .clamp(self.clip.0, self.clip.1)
    }

    /// Sorted samples for each condition. Every condition gets its own `m`
    /// noise vectors, drawn in condition order.
    pub fn sample_conditions(
        &self,
        conditions: &[(&Features, f64)],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        if m == 0 {
            return Err(Error::Domain("sample count must be at least 1".into()));
        }
        let noise: Vec<Vec<f64>> = conditions
            .iter()
            .map(|_| {
                let mut z = vec![0.0; m * self.noise_dim];
                rng.fill_standard_normal(&mut z);
                z
            })
            .collect();
        let idx: Vec<usize> = (0..conditions.len()).collect();
        self.sample_with_noise(conditions, &idx, &noise, m)
    }

    /// Maps condition `i` through the noise block `noise[noise_of[i]]`.
    fn sample_with_noise(
        &self,
        conditions: &[(&Features, f64)],
        noise_of: &[usize],
        noise: &[Vec<f64>],
        m: usize,
    ) -> Result<Vec<Vec<f64>>> {
        for (x, _) in conditions {
            self.check_features(x)?;
        }
        let cdim = self.condition_dim();
        let width = cdim + self.noise_dim;
        let per_chunk = (SAMPLE_CHUNK_ROWS / m).max(1);
        let mut out = Vec::with_capacity(conditions.len());
        let mut cond = vec![0.0; cdim];
        for (chunk_idx, chunk) in conditions.chunks(per_chunk).enumerate() {
            let rows = chunk.len() * m;
            let mut input = Array2::<f64>::zeros((rows, width));
            for (ci, (x, p)) in chunk.iter().enumerate() {
                self.write_condition(x, *p, &mut cond);
                let z = &noise[noise_of[chunk_idx * per_chunk + ci]];
                for j in 0..m {
                    let mut row = input.row_mut(ci * m + j);
                    let row = row.as_slice_mut().expect("standard layout");
                    row[..cdim].copy_from_slice(&cond);
                    row[cdim..].copy_from_slice(&z[j * self.noise_dim..(j + 1) * self.noise_dim]);
                }
            }
            let pred = self.net.predict_batch(input.view())?;
            let pred = pred.as_slice().expect("standard layout");
            for ci in 0..chunk.len() {
                let mut s: Vec<f64> = pred[ci * m..(ci + 1) * m]
                    .iter()
                    .map(|&v| self.destandardize(v))
                    .collect();
                sort_floats(&mut s);
                out.push(s);
            }
        }
        Ok(out)
    }

    /// `m` sorted demand samples at `(x, p)`, clipped to the training range.
    pub fn generate(
        &self,
        x: &Features,
        p: f64,
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        Ok(self
            .sample_conditions(&[(x, p)], m, rng)?
            .pop()
            .expect("one condition"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from_generator(self))?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_json()?.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| Error::Payload(format!("not a model file: {e}")))?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(MODEL_FORMAT) => {}
            _ => return Err(Error::Payload(format!("missing `format: {MODEL_FORMAT}`"))),
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Payload("missing integer `version`".into()))?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::Payload(e.to_string()))?;
        file.into_generator()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl DemandSampler for Generator {
    /// One block of `m` noise vectors is shared by every price.
    fn sample_at_prices(
        &self,
        x: &Features,
        prices: &[f64],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        if m == 0 {
            return Err(Error::Domain("sample count must be at least 1".into()));
        }
        let mut z = vec![0.0; m * self.noise_dim];
        rng.fill_standard_normal(&mut z);
        let conditions: Vec<(&Features, f64)> = prices.iter().map(|&p| (x, p)).collect();
        self.sample_with_noise(&conditions, &vec![0; prices.len()], &[z], m)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    vocab: std::collections::BTreeMap<String, usize>,
    rows: usize,
    cols: usize,
    vectors: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u64,
    config: TrainConfig,
    noise_dim: usize,
    clip: (f64, f64),
    standardizer: Standardizer,
    layers: Vec<LayerFile>,
    embedding: Option<EmbeddingFile>,
}

impl ModelFile {
    fn from_generator(g: &Generator) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: g.config.clone(),
            noise_dim: g.noise_dim,
            clip: g.clip,
            standardizer: g.standardizer.clone(),
            layers: g
                .net
                .layers()
                .iter()
                .map(|l| LayerFile {
                    rows: l.output_dim(),
                    cols: l.input_dim(),
                    activation: l.activation,
                    weights: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            embedding: g.embedding.as_ref().map(|t| EmbeddingFile {
                vocab: t.vocab().clone(),
                rows: t.vectors().nrows(),
                cols: t.vectors().ncols(),
                vectors: t.vectors().iter().copied().collect(),
            }),
        }
    }

    fn into_generator(self) -> Result<Generator> {
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                    .map_err(|e| Error::Payload(format!("layer weights: {e}")))?;
                if l.bias.len() != l.rows {
                    return Err(Error::Payload("layer bias length differs from rows".into()));
                }
                Ok(Dense {
                    weight,
                    bias: l.bias.into(),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Mlp::new(layers).map_err(|e| Error::Payload(e.to_string()))?;
        let embedding = match self.embedding {
            Some(e) => {
                let vectors = Array2::from_shape_vec((e.rows, e.cols), e.vectors)
                    .map_err(|err| Error::Payload(format!("embedding: {err}")))?;
                Some(
                    EmbeddingTable::from_parts(e.vocab, vectors)
                        .map_err(|err| Error::Payload(err.to_string()))?,
                )
            }
            None => None,
        };
        self.standardizer.check()?;
        let g = Generator {
            net,
            noise_dim: self.noise_dim,
            standardizer: self.standardizer,
            embedding,
            clip: self.clip,
            config: self.config,
        };
        if g.noise_dim == 0
            || g.net.input_dim() != g.condition_dim() + g.noise_dim
            || g.net.output_dim() != 1
        {
            return Err(Error::Payload(
                "network shape does not match the condition layout".into(),
            ));
        }
        Ok(g)
    }
}

/// Training-set conditions, precomputed on the standardized scale.
struct Conditions {
    /// `n × (k + 1)`: standardized features then price.
    numeric: Vec<f64>,
    words: Vec<Vec<String>>,
    target: Vec<f64>,
    k: usize,
}

impl Conditions {
    fn new(data: &Dataset, s: &Standardizer) -> Self {
        let k = data.feature_dim();
        let mut numeric = Vec::with_capacity(data.len() * (k + 1));
        for r in &data.records {
            for (j, v) in r.x.numeric().iter().enumerate() {
                numeric.push((v - s.feature_mean[j]) / s.feature_scale[j]);
            }
            numeric.push((r.p - s.price_mean) / s.price_scale);
        }
        Self {
            numeric,
            words: data
                .records
                .iter()
                .map(|r| r.x.words().unwrap_or(&[]).to_vec())
                .collect(),
            target: data
                .records
                .iter()
                .map(|r| (r.d - s.demand_mean) / s.demand_scale)
                .collect(),
            k,
        }
    }

    /// Writes `[x, embedding, p]` for record `i`.
    fn write(&self, i: usize, embedding: Option<&EmbeddingTable>, out: &mut [f64]) {
        let k = self.k;
        let src = &self.numeric[i * (k + 1)..(i + 1) * (k + 1)];
        out[..k].copy_from_slice(&src[..k]);
        let mut at = k;
        if let Some(t) = embedding {
            t.embed_into(&self.words[i], &mut out[k..k + t.dim()]);
            at += t.dim();
        }
        out[at] = src[k];
    }
}

fn check_loss(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(format!(
            "loss {loss} at epoch {epoch}, batch {batch}"
        )))
    }
}

/// Energy score of one record's samples and its gradient with respect to
/// each sample:
/// `(1/m) Σ_j |ŷ_j − y| − 1/(2m(m−1)) Σ_{j≠k} |ŷ_j − ŷ_k|`.
pub fn energy_score(samples: &[f64], y: f64, grad: &mut [f64]) -> f64 {
    let m = samples.len();
    let mf = m as f64;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    // Σ_{j<k} |ŷ_(k) − ŷ_(j)| over sorted values, and Σ_{k≠j} sign(ŷ_j − ŷ_k) = 2·rank − (m − 1).
    let mut pair_sum = 0.0;
    for (rank, &j) in order.iter().enumerate() {
        pair_sum += samples[j] * (2.0 * rank as f64 - (mf - 1.0));
    }
    let spread = pair_sum / (mf * (mf - 1.0));
    let mut fit = 0.0;
    for (rank, &j) in order.iter().enumerate() {
        let diff = samples[j] - y;
        fit += diff.abs();
        let sign_sum = 2.0 * rank as f64 - (mf - 1.0);
        grad[j] = diff.signum() / mf - sign_sum / (mf * (mf - 1.0));
    }
    fit / mf - spread
}

fn numerically_stable_softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    cond: Conditions,
    net: Mlp,
    embedding: Option<EmbeddingTable>,
    adam: AdamState,
    cdim: usize,
    noise_dim: usize,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    /// Fixed noise for the held-out records, reused every epoch.
    val_noise: Vec<f64>,
    validation: Vec<f64>,
    best: Option<(usize, f64, Mlp, Option<EmbeddingTable>)>,
}

impl Trainer<'_> {
    fn epoch_order(&self, order_rng: &mut RngStream) -> Vec<usize> {
        order_rng
            .permutation(self.train_idx.len())
            .into_iter()
            .map(|j| self.train_idx[j])
            .collect()
    }

    fn should_stop(&self, epoch: usize) -> bool {
        match &self.best {
            Some((best, ..)) if self.cfg.patience > 0 => epoch - best >= self.cfg.patience,
            _ => false,
        }
    }

    /// Scores the held-out records and remembers the best weights so far.
    fn checkpoint(&mut self, epoch: usize) -> Result<()> {
        if self.val_idx.is_empty() {
            return Ok(());
        }
        let v = self.cfg.validation_samples;
        let width = self.cdim + self.noise_dim;
        let mut input = Array2::<f64>::zeros((self.val_idx.len() * v, width));
        let mut cond = vec![0.0; self.cdim];
        for (bi, &i) in self.val_idx.iter().enumerate() {
            self.cond.write(i, self.embedding.as_ref(), &mut cond);
            for j in 0..v {
                let r = bi * v + j;
                let mut row = input.row_mut(r);
                let row = row.as_slice_mut().expect("standard layout");
                row[..self.cdim].copy_from_slice(&cond);
                row[self.cdim..]
                    .copy_from_slice(&self.val_noise[r * self.noise_dim..(r + 1) * self.noise_dim]);
            }
        }
        let out = self.net.predict_batch(input.view())?;
        let out = out.as_slice().expect("standard layout");
        let mut scratch = vec![0.0; v];
        let score = self
            .val_idx
            .iter()
            .enumerate()
            .map(|(bi, &i)| {
                energy_score(
                    &out[bi * v..(bi + 1) * v],
                    self.cond.target[i],
                    &mut scratch,
                )
            })
            .sum::<f64>()
            / self.val_idx.len() as f64;
        check_loss(score, epoch, usize::MAX)?;
        self.validation.push(score);
        if self.best.as_ref().is_none_or(|b| score < b.1) {
            self.best = Some((epoch, score, self.net.clone(), self.embedding.clone()));
        }
        Ok(())
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.net.param_slices_mut();
        if let Some(t) = self.embedding.as_mut() {
            p.push(t.vectors_mut().as_slice_mut().expect("standard layout"));
        }
        p
    }

    /// Generator input rows for `batch`, `reps` rows per record.
    fn inputs(&self, batch: &[usize], reps: usize, noise: &mut RngStream) -> Array2<f64> {
        let width = self.cdim + self.noise_dim;
        let mut input = Array2::<f64>::zeros((batch.len() * reps, width));
        let mut cond = vec![0.0; self.cdim];
        for (bi, &i) in batch.iter().enumerate() {
            self.cond.write(i, self.embedding.as_ref(), &mut cond);
            for j in 0..reps {
                let mut row = input.row_mut(bi * reps + j);
                let row = row.as_slice_mut().expect("standard layout");
                row[..self.cdim].copy_from_slice(&cond);
                noise.fill_standard_normal(&mut row[self.cdim..]);
            }
        }
        input
    }

    /// Backpropagates `out_grad` into the generator and its embedding and
    /// takes one optimizer step.
    fn generator_step(
        &mut self,
        batch: &[usize],
        reps: usize,
        tape: &crate::neural::Tape,
        out_grad: ArrayView2<f64>,
    ) -> Result<()> {
        let (grad, input_grad) = self.net.backward_batch(tape, out_grad)?;
        let mut grads: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        if let Some(table) = &self.embedding {
            let k = self.cond.k;
            let e = table.dim();
            let mut eg = Array2::<f64>::zeros(table.vectors().raw_dim());
            let mut upstream = vec![0.0; e];
            for (bi, &i) in batch.iter().enumerate() {
                upstream.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..reps {
                    let row = input_grad.row(bi * reps + j);
                    for (u, g) in upstream.iter_mut().zip(row.iter().skip(k).take(e)) {
                        *u += g;
                    }
                }
                table.accumulate_grad(&self.cond.words[i], &upstream, &mut eg);
            }
            grads.push(eg.into_raw_vec_and_offset().0);
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut adam =
            std::mem::replace(&mut self.adam, AdamState::new(AdamConfig::default(), &[]));
        let result = adam.step(&mut self.params_mut(), &grad_refs);
        let shrink = 1.0 - adam.config.lr * self.cfg.weight_decay;
        self.adam = adam;
        result?;
        if shrink < 1.0 {
            // Weight matrices sit at even positions, biases at odd ones.
            for w in self.net.param_slices_mut().into_iter().step_by(2) {
                w.iter_mut().for_each(|v| *v *= shrink);
            }
        }
        Ok(())
    }
}

/// Trains a generator; see [`train_with_report`].
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<Generator> {
    train_with_report(data, cfg).map(|(g, _)| g)
}

/// Trains a generator and returns it with the per-epoch loss history.
/// The result is a deterministic function of `(data, cfg)`.
pub fn train_with_report(data: &Dataset, cfg: &TrainConfig) -> Result<(Generator, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset has no records".into()));
    }
    let standardizer = Standardizer::fit(data)?;
    let root = RngStream::new(cfg.seed).derive("cdgm");
    let mut init = root.derive("init");

    let embedding = if cfg.use_text && data.is_text() {
        let words: BTreeSet<&str> = data
            .records
            .iter()
            .flat_map(|r| r.x.words().unwrap_or(&[]).iter().map(String::as_str))
            .collect();
        Some(EmbeddingTable::new(words, cfg.embedding_dim, &mut init))
    } else {
        None
    };
    let cond = Conditions::new(data, &standardizer);
    let cdim = cond.k + embedding.as_ref().map_or(0, EmbeddingTable::dim) + 1;
    let net = Mlp::init(cdim + cfg.noise_dim, &cfg.hidden, 1, &mut init);

    let mut shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    if let Some(t) = &embedding {
        shapes.push(t.vectors().len());
    }
    let n_val = (data.len() as f64 * cfg.validation_fraction).floor() as usize;
    let mut split = root.derive("split").permutation(data.len());
    let mut val_idx = if n_val < data.len() {
        split.split_off(data.len() - n_val)
    } else {
        Vec::new()
    };
    val_idx.sort_unstable();
    split.sort_unstable();
    let mut val_noise = vec![0.0; val_idx.len() * cfg.validation_samples * cfg.noise_dim];
    root.derive("validation-noise")
        .fill_standard_normal(&mut val_noise);
    let mut trainer = Trainer {
        cfg,
        cond,
        net,
        embedding,
        adam: AdamState::new(cfg.adam(), &shapes),
        cdim,
        noise_dim: cfg.noise_dim,
        train_idx: split,
        val_idx,
        val_noise,
        validation: Vec::new(),
        best: None,
    };

    let mut order_rng = root.derive("order");
    let mut noise_rng = root.derive("noise");
    let losses = match cfg.strategy {
        TrainStrategy::EnergyScore => train_energy(&mut trainer, &mut order_rng, &mut noise_rng)?,
        TrainStrategy::Adversarial => {
            let mut disc_init = root.derive("discriminator");
            train_adversarial(&mut trainer, &mut order_rng, &mut noise_rng, &mut disc_init)?
        }
    };

    let best_epoch = trainer.best.as_ref().map(|b| b.0);
    if let Some((_, _, net, embedding)) = trainer.best.take() {
        trainer.net = net;
        trainer.embedding = embedding;
    }
    let validation = std::mem::take(&mut trainer.validation);
    let generator = Generator {
        net: trainer.net,
        noise_dim: cfg.noise_dim,
        standardizer,
        embedding: trainer.embedding,
        clip: cfg.clip,
        config: cfg.clone(),
    };
    Ok((
        generator,
        TrainReport {
            losses,
            validation,
            best_epoch,
        },
    ))
}

fn train_energy(
    t: &mut Trainer,
    order_rng: &mut RngStream,
    noise_rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let m = t.cfg.samples_per_condition;
    let mut losses = Vec::with_capacity(t.cfg.epochs);
    let mut grad_buf = vec![0.0; m];
    for epoch in 0..t.cfg.epochs {
        t.adam.config.lr = t.cfg.lr_at(epoch);
        let perm = t.epoch_order(order_rng);
        let mut total = 0.0;
        for (b, batch) in perm.chunks(t.cfg.batch_size).enumerate() {
            let input = t.inputs(batch, m, noise_rng);
            let (out, tape) = t.net.forward_batch(input.view())?;
            let out = out.as_slice().expect("standard layout");
            let mut out_grad = Array2::<f64>::zeros((batch.len() * m, 1));
            let og = out_grad.as_slice_mut().expect("standard layout");
            let bsize = batch.len() as f64;
            let mut loss = 0.0;
            for (bi, &i) in batch.iter().enumerate() {
                let rows = bi * m..(bi + 1) * m;
                loss += energy_score(&out[rows.clone()], t.cond.target[i], &mut grad_buf);
                for (g, v) in og[rows].iter_mut().zip(&grad_buf) {
                    *g = v / bsize;
                }
            }
            check_loss(loss, epoch, b)?;
            t.generator_step(batch, m, &tape, out_grad.view())?;
            total += loss;
        }
        losses.push(total / perm.len() as f64);
        t.checkpoint(epoch)?;
        if t.should_stop(epoch) {
            break;
        }
    }
    Ok(losses)
}

fn train_adversarial(
    t: &mut Trainer,
    order_rng: &mut RngStream,
    noise_rng: &mut RngStream,
    disc_init: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut disc = Mlp::init(t.cdim + 1, &t.cfg.discriminator_hidden, 1, disc_init);
    let mut disc_adam = AdamState::for_params(t.cfg.adam(), &disc.param_slices());
    let mut losses = Vec::with_capacity(t.cfg.epochs);
    for epoch in 0..t.cfg.epochs {
        let lr = t.cfg.lr_at(epoch);
        t.adam.config.lr = lr;
        disc_adam.config.lr = lr;
        let perm = t.epoch_order(order_rng);
        let mut total = 0.0;
        for (b, batch) in perm.chunks(t.cfg.batch_size).enumerate() {
            let bsize = batch.len() as f64;

            // Discriminator: real rows then fake rows.
            let input = t.inputs(batch, 1, noise_rng);
            let fake = t.net.predict_batch(input.view())?;
            let mut disc_in = Array2::<f64>::zeros((2 * batch.len(), t.cdim + 1));
            for (bi, &i) in batch.iter().enumerate() {
                for (row, value) in [(bi, t.cond.target[i]), (batch.len() + bi, fake[[bi, 0]])] {
                    let mut r = disc_in.row_mut(row);
                    let r = r.as_slice_mut().expect("standard layout");
                    r[..t.cdim].copy_from_slice(
                        &input.row(bi).as_slice().expect("standard layout")[..t.cdim],
                    );
                    r[t.cdim] = value;
                }
            }
            let (logits, tape) = disc.forward_batch(disc_in.view())?;
            let mut dgrad = Array2::<f64>::zeros(logits.raw_dim());
            let mut d_loss = 0.0;
            for bi in 0..batch.len() {
                let (lr_, lf) = (logits[[bi, 0]], logits[[batch.len() + bi, 0]]);
                d_loss += numerically_stable_softplus(-lr_) + numerically_stable_softplus(lf);
                dgrad[[bi, 0]] = -sigmoid(-lr_) / bsize;
                dgrad[[batch.len() + bi, 0]] = sigmoid(lf) / bsize;
            }
            check_loss(d_loss, epoch, b)?;
            let (dg, _) = disc.backward_batch(&tape, dgrad.view())?;
            disc_adam.step(&mut disc.param_slices_mut(), &dg.slices())?;

            // Generator: non-saturating loss −log D(fake).
            let input = t.inputs(batch, 1, noise_rng);
            let (fake, gtape) = t.net.forward_batch(input.view())?;
            let mut disc_in = Array2::<f64>::zeros((batch.len(), t.cdim + 1));
            for bi in 0..batch.len() {
                let mut r = disc_in.row_mut(bi);
                let r = r.as_slice_mut().expect("standard layout");
                r[..t.cdim]
                    .copy_from_slice(&input.row(bi).as_slice().expect("standard layout")[..t.cdim]);
                r[t.cdim] = fake[[bi, 0]];
            }
            let (logits, tape) = disc.forward_batch(disc_in.view())?;
            let mut lgrad = Array2::<f64>::zeros(logits.raw_dim());
            let mut g_loss = 0.0;
            for bi in 0..batch.len() {
                let l = logits[[bi, 0]];
                g_loss += numerically_stable_softplus(-l);
                lgrad[[bi, 0]] = -sigmoid(-l) / bsize;
            }
            check_loss(g_loss, epoch, b)?;
            let (_, input_grad) = disc.backward_batch(&tape, lgrad.view())?;
            let out_grad = input_grad
                .slice(ndarray::s![.., t.cdim..t.cdim + 1])
                .to_owned();
            t.generator_step(batch, 1, &gtape, out_grad.view())?;
            total += g_loss;
        }
        losses.push(total / perm.len() as f64);
        t.checkpoint(epoch)?;
        if t.should_stop(epoch) {
            break;
        }
    }
    Ok(losses)
}
