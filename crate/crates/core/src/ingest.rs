//! Meal-delivery demand CSV ingestion and the real-data inventory protocol.
//!
//! Input columns (any order): `id, week, center_id, meal_id, checkout_price,
//! base_price, emailer_for_promotion, homepage_featured, num_orders`.
//! Each selected meal becomes one dataset with demand `num_orders`, price
//! `checkout_price`, and features: one-hot center, the center's demand one
//! and two weeks earlier, both promotion flags and the base price.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    erm_fit, ErmConfig, ErmForm, KoModel, PinballModel, RbeModel, SaaMode, SaaModel,
};
use crate::cdgm::{train, Generator, TrainConfig};
use crate::decisions::{inventory_decision, profit, rho, CostParams};
use crate::dgp::{Dataset, DemandRecord, Features};
use crate::error::{Error, Result};
use crate::harness::{format_sig6, Method, CODE_VERSION};
use crate::numerics::{mean, sample_std, RngStream};

pub const REQUIRED_COLUMNS: [&str; 9] = [
    "id",
    "week",
    "center_id",
    "meal_id",
    "checkout_price",
    "base_price",
    "emailer_for_promotion",
    "homepage_featured",
    "num_orders",
];

pub const DEFAULT_SPLIT_WEEK: u32 = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealRecord {
    pub id: u64,
    pub week: u32,
    pub center_id: u64,
    pub meal_id: u64,
    pub checkout_price: f64,
    pub base_price: f64,
    pub emailer_for_promotion: bool,
    pub homepage_featured: bool,
    pub num_orders: f64,
}

/// A row that failed to parse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedCsv {
    pub records: Vec<MealRecord>,
    pub skipped: Vec<SkippedRow>,
}

fn parse_flag(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("flag `{other}` is not 0 or 1")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, column: &str) -> std::result::Result<T, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("{column} `{}` is not a valid number", s.trim()))
}

fn parse_row(row: &csv::StringRecord, idx: &[usize; 9]) -> std::result::Result<MealRecord, String> {
    let field = |j: usize| {
        row.get(idx[j])
            .ok_or_else(|| format!("missing field `{}`", REQUIRED_COLUMNS[j]))
    };
    let rec = MealRecord {
        id: parse_num(field(0)?, "id")?,
        week: parse_num(field(1)?, "week")?,
        center_id: parse_num(field(2)?, "center_id")?,
        meal_id: parse_num(field(3)?, "meal_id")?,
        checkout_price: parse_num(field(4)?, "checkout_price")?,
        base_price: parse_num(field(5)?, "base_price")?,
        emailer_for_promotion: parse_flag(field(6)?)?,
        homepage_featured: parse_flag(field(7)?)?,
        num_orders: parse_num(field(8)?, "num_orders")?,
    };
    if rec.week < 1 {
        return Err("week must be at least 1".into());
    }
    if !(rec.checkout_price > 0.0
        && rec.base_price > 0.0
        && rec.checkout_price.is_finite()
        && rec.base_price.is_finite())
    {
        return Err("prices must be positive".into());
    }
    if !(rec.num_orders >= 0.0 && rec.num_orders.is_finite()) {
        return Err("num_orders must be nonnegative".into());
    }
    Ok(rec)
}

/// Parses records, skipping malformed rows with their line numbers.
pub fn read_csv<R: Read>(reader: R) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut idx = [0usize; 9];
    for (j, col) in REQUIRED_COLUMNS.iter().enumerate() {
        idx[j] = header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Schema(format!("missing required column `{col}`")))?;
    }
    let mut out = LoadedCsv::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        match row {
            Ok(row) => match parse_row(&row, &idx) {
                Ok(rec) => out.records.push(rec),
                Err(reason) => out.skipped.push(SkippedRow { line, reason }),
            },
            Err(e) => out.skipped.push(SkippedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<LoadedCsv> {
    read_csv(std::fs::File::open(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub meal_id: u64,
    /// Weeks up to and including this one train; later weeks test.
    pub split_week: u32,
    pub include_base_price: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            meal_id: 0,
            split_week: DEFAULT_SPLIT_WEEK,
            include_base_price: true,
        }
    }
}

/// Train and test datasets of one meal.
#[derive(Clone, Debug, PartialEq)]
pub struct MealData {
    pub meal_id: u64,
    pub columns: Vec<String>,
    pub centers: Vec<u64>,
    pub train: Dataset,
    pub test: Dataset,
    pub train_weeks: Vec<u32>,
    pub test_weeks: Vec<u32>,
}

impl MealData {
    /// SHA-256 over the little-endian bytes of every feature, price and
    /// demand, train rows first.
    pub fn feature_hash(&self) -> String {
        let mut h = Sha256::new();
        for col in &self.columns {
            h.update(col.as_bytes());
            h.update([0u8]);
        }
        for r in self.train.records.iter().chain(&self.test.records) {
            for v in r.x.numeric().iter().chain([&r.p, &r.d]) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds the per-meal feature matrix. Rows missing either lag are dropped.
pub fn build_dataset(records: &[MealRecord], spec: &FeatureSpec) -> Result<MealData> {
    let mut rows: Vec<&MealRecord> = records
        .iter()
        .filter(|r| r.meal_id == spec.meal_id)
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty(format!(
            "meal {} has no records",
            spec.meal_id
        )));
    }
    rows.sort_by_key(|r| (r.week, r.center_id, r.id));
    let centers: Vec<u64> = rows
        .iter()
        .map(|r| r.center_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let demand: BTreeMap<(u64, u32), f64> = rows
        .iter()
        .map(|r| ((r.center_id, r.week), r.num_orders))
        .collect();

    let mut columns: Vec<String> = centers.iter().map(|c| format!("center_{c}")).collect();
    columns
        .extend(["lag1", "lag2", "emailer_for_promotion", "homepage_featured"].map(String::from));
    if spec.include_base_price {
        columns.push("base_price".into());
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let (mut train_weeks, mut test_weeks) = (BTreeSet::new(), BTreeSet::new());
    for r in rows {
        let lags = r
            .week
            .checked_sub(1)
            .zip(r.week.checked_sub(2))
            .and_then(|(w1, w2)| {
                Some((
                    *demand.get(&(r.center_id, w1))?,
                    *demand.get(&(r.center_id, w2))?,
                ))
            });
        let Some((lag1, lag2)) = lags else { continue };
        let mut x: Vec<f64> = centers
            .iter()
            .map(|&c| if c == r.center_id { 1.0 } else { 0.0 })
            .collect();
        x.extend([
            lag1,
            lag2,
            f64::from(u8::from(r.emailer_for_promotion)),
            f64::from(u8::from(r.homepage_featured)),
        ]);
        if spec.include_base_price {
            x.push(r.base_price);
        }
        let rec = DemandRecord {
            x: Features::Numeric(x),
            p: r.checkout_price,
            d: r.num_orders,
        };
        if r.week <= spec.split_week {
            train.push(rec);
            train_weeks.insert(r.week);
        } else {
            test.push(rec);
            test_weeks.insert(r.week);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty(format!(
            "meal {}: split at week {} leaves an empty side ({} train, {} test rows)",
            spec.meal_id,
            spec.split_week,
            train.len(),
            test.len()
        )));
    }
    Ok(MealData {
        meal_id: spec.meal_id,
        columns,
        centers,
        train: Dataset::new(train),
        test: Dataset::new(test),
        train_weeks: train_weeks.into_iter().collect(),
        test_weeks: test_weeks.into_iter().collect(),
    })
}

/// Salvage values `{0, 50, 100}` crossed with unit costs `{150, …, 300}`.
pub fn cost_grid() -> Vec<CostParams> {
    let mut out = Vec::with_capacity(12);
    for c in [150.0, 200.0, 250.0, 300.0] {
        for s in [0.0, 50.0, 100.0] {
            out.push(CostParams { c, s });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealDataConfig {
    pub meals: Vec<u64>,
    pub split_week: u32,
    pub methods: Vec<Method>,
    pub costs: Vec<CostParams>,
    pub m: usize,
    pub seed: u64,
    pub cdgm: TrainConfig,
    pub erm: ErmConfig,
}

impl Default for RealDataConfig {
    fn default() -> Self {
        Self {
            meals: Vec::new(),
            split_week: DEFAULT_SPLIT_WEEK,
            methods: vec![
                Method::Saa,
                Method::Rbe,
                Method::ErmLr,
                Method::ErmNn,
                Method::Ko,
                Method::Cdgm,
            ],
            costs: cost_grid(),
            m: 1000,
            seed: 0,
            cdgm: TrainConfig::default(),
            erm: ErmConfig::default(),
        }
    }
}

/// Mean test profit of one method at one cost setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataRow {
    pub meal_id: u64,
    pub c: f64,
    pub s: f64,
    pub method: Method,
    pub mean_profit: f64,
    /// Standard deviation of per-record profit.
    pub std: Option<f64>,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealDataReport {
    pub version: String,
    pub config: RealDataConfig,
    pub rows: Vec<RealDataRow>,
    pub skipped_rows: usize,
}

impl RealDataReport {
    /// Same columns as the simulation reports: the meal fills `dgp`, the
    /// cost setting fills `mode`, and `reps` holds the test-record count.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!(
            "# version: {}\n# config: {}\n# skipped_rows: {}\n{}\n",
            self.version,
            serde_json::to_string(&self.config)?,
            self.skipped_rows,
            crate::harness::CSV_HEADER
        );
        for r in &self.rows {
            out.push_str(&format!(
                "meal_{},c={}_s={},{},avg_profit,all,{},{},{}\n",
                r.meal_id,
                format_sig6(r.c),
                format_sig6(r.s),
                r.method,
                format_sig6(r.mean_profit),
                r.std.map(format_sig6).unwrap_or_default(),
                r.n_test
            ));
        }
        Ok(out)
    }
}

enum RealFitted {
    Saa(SaaModel),
    Rbe(RbeModel),
    Ko(KoModel),
    Generator(Box<Generator>),
    /// Refit per cost setting at the critical ratio of the mean price.
    Erm(ErmForm),
}

fn erm_for_costs(
    data: &Dataset,
    form: ErmForm,
    costs: &CostParams,
    cfg: &ErmConfig,
) -> Result<Option<PinballModel>> {
    let p_bar = mean(&data.records.iter().map(|r| r.p).collect::<Vec<_>>());
    match rho(p_bar, costs) {
        Ok(level) => Ok(Some(erm_fit(data, level, form, cfg)?)),
        // No positive margin at the mean price: the rule stocks nothing.
        Err(_) => Ok(None),
    }
}

/// Trains each method on one meal's training weeks and reports mean test
/// profit for every cost setting.
pub fn run_meal(meal: &MealData, cfg: &RealDataConfig) -> Result<Vec<RealDataRow>> {
    let root = RngStream::new(cfg.seed).derive(&format!("meal/{}", meal.meal_id));
    let max_d = meal.train.records.iter().map(|r| r.d).fold(0.0, f64::max);
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let seed = root.derive("fit").derive(method.as_str()).next_u64();
        let fitted = match method {
            Method::Saa | Method::SaaPooled => {
                RealFitted::Saa(SaaModel::fit(&meal.train, SaaMode::Pooled)?)
            }
            Method::Rbe => RealFitted::Rbe(crate::baselines::rbe_fit(&meal.train)?),
            Method::Ko => RealFitted::Ko(KoModel::silverman(&meal.train)?),
            Method::ErmLr => RealFitted::Erm(ErmForm::Linear),
            Method::ErmNn => RealFitted::Erm(ErmForm::Neural),
            Method::Cdgm => {
                let tc = TrainConfig {
                    seed,
                    clip: (0.0, 2.0 * max_d.max(1.0)),
                    ..cfg.cdgm.clone()
                };
                RealFitted::Generator(Box::new(train(&meal.train, &tc)?))
            }
            other => {
                return Err(Error::Config(format!(
                    "method `{other}` is not available for real data"
                )))
            }
        };
        let samples = match &fitted {
            RealFitted::Generator(g) => {
                let conditions: Vec<(&Features, f64)> =
                    meal.test.records.iter().map(|r| (&r.x, r.p)).collect();
                Some(g.sample_conditions(
                    &conditions,
                    cfg.m,
                    &mut root.derive("decide").derive(method.as_str()),
                )?)
            }
            _ => None,
        };
        for costs in &cfg.costs {
            let erm = match &fitted {
                RealFitted::Erm(form) => erm_for_costs(
                    &meal.train,
                    *form,
                    costs,
                    &ErmConfig {
                        seed,
                        ..cfg.erm.clone()
                    },
                )?,
                _ => None,
            };
            let profits = meal
                .test
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let q = if r.p <= costs.c {
                        0.0
                    } else {
                        match &fitted {
                            RealFitted::Saa(m) => m.decide(r.p, costs)?,
                            RealFitted::Rbe(m) => m.decide(&r.x, r.p, costs)?,
                            RealFitted::Ko(m) => m.decide(&r.x, r.p, costs)?,
                            RealFitted::Generator(_) => inventory_decision(
                                &samples.as_ref().expect("sampled above")[i],
                                r.p,
                                costs,
                            )?,
                            RealFitted::Erm(_) => match &erm {
                                Some(model) => model.predict(&r.x, r.p)?.max(0.0),
                                None => 0.0,
                            },
                        }
                    };
                    Ok(profit(r.d, r.p, q, costs))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(RealDataRow {
                meal_id: meal.meal_id,
                c: costs.c,
                s: costs.s,
                method,
                mean_profit: mean(&profits),
                std: sample_std(&profits),
                n_test: profits.len(),
            });
        }
    }
    Ok(rows)
}

pub fn run_real_data(loaded: &LoadedCsv, cfg: &RealDataConfig) -> Result<RealDataReport> {
    if cfg.meals.is_empty() {
        return Err(Error::Config("at least one meal id is required".into()));
    }
    if cfg.costs.is_empty() || cfg.methods.is_empty() || cfg.m == 0 {
        return Err(Error::Config(
            "costs, methods and m must be nonempty".into(),
        ));
    }
    for c in &cfg.costs {
        CostParams::new(c.c, c.s).map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut rows = Vec::new();
    for &meal_id in &cfg.meals {
        let meal = build_dataset(
            &loaded.records,
            &FeatureSpec {
                meal_id,
                split_week: cfg.split_week,
                ..FeatureSpec::default()
            },
        )?;
        rows.extend(run_meal(&meal, cfg)?);
    }
    Ok(RealDataReport {
        version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        rows,
        skipped_rows: loaded.skipped.len(),
    })
}
