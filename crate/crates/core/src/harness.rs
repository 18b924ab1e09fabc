//! Replicated experiments on the synthetic processes and their reports.
//!
//! Every replication owns a substream `rep/{r}` of the master seed. From it
//! come the process coefficients, the training corpus, each method's
//! training seed, the test conditions and the realized test demands, so a
//! rerun with the same configuration reproduces every number, and test data
//! is generated from streams no training call ever reads.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    saa_joint, ErmBank, ErmConfig, ErmForm, KoModel, RbeModel, SaaMode, SaaModel, DEFAULT_TAU_BANK,
};
use crate::cdgm::{train, Generator, TrainConfig};
use crate::decisions::{
    joint_decision, profit, rho, uniform_grid, CostParams, JointDecision, PricePoint,
};
use crate::dgp::{Dataset, DgpKind, Features, OracleModel, PriceMode, PriceSet};
use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std, RngStream};

pub const CODE_VERSION: &str = concat!("genvendor ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Saa,
    /// SAA on every record regardless of price.
    SaaPooled,
    Rbe,
    ErmLr,
    ErmNn,
    Ko,
    Cdgm,
    CdgmText,
    SaaJoint,
    Prescriptive,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Oracle,
        Method::Saa,
        Method::SaaPooled,
        Method::Rbe,
        Method::ErmLr,
        Method::ErmNn,
        Method::Ko,
        Method::Cdgm,
        Method::CdgmText,
        Method::SaaJoint,
        Method::Prescriptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Saa => "saa",
            Method::SaaPooled => "saa_pooled",
            Method::Rbe => "rbe",
            Method::ErmLr => "erm_lr",
            Method::ErmNn => "erm_nn",
            Method::Ko => "ko",
            Method::Cdgm => "cdgm",
            Method::CdgmText => "cdgm_text",
            Method::SaaJoint => "saa_joint",
            Method::Prescriptive => "prescriptive",
        }
    }

    pub fn supports_inventory(self) -> bool {
        !matches!(self, Method::SaaJoint | Method::Prescriptive)
    }

    pub fn supports_joint(self) -> bool {
        matches!(
            self,
            Method::Oracle
                | Method::Rbe
                | Method::Cdgm
                | Method::CdgmText
                | Method::SaaJoint
                | Method::Prescriptive
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Inventory,
    Joint,
}

impl ExperimentKind {
    pub fn metric(self) -> &'static str {
        match self {
            ExperimentKind::Inventory => "profit_gap",
            ExperimentKind::Joint => "avg_profit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpKind,
    pub mode: PriceMode,
    /// Training records per replication.
    pub n: usize,
    /// Inventory: test conditions per price (discrete) or in total
    /// (continuous). Joint: test feature vectors.
    pub n_test: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub costs: CostParams,
    /// Generated samples per decision.
    pub m: usize,
    /// Price grid size for joint decisions in continuous mode.
    pub grid_points: usize,
    /// Monte Carlo draws behind the oracle joint policy.
    pub oracle_mc: usize,
    /// Half-width of the continuous-price SAA window.
    pub saa_window: f64,
    pub seed: u64,
    pub cdgm: TrainConfig,
    pub erm: ErmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpKind::A,
            mode: PriceMode::Discrete,
            n: 2000,
            n_test: 200,
            replications: 10,
            methods: vec![
                Method::Oracle,
                Method::Saa,
                Method::Rbe,
                Method::Ko,
                Method::Cdgm,
            ],
            costs: CostParams::default(),
            m: 1000,
            grid_points: 21,
            oracle_mc: 2000,
            saa_window: 0.1,
            seed: 0,
            cdgm: TrainConfig::default(),
            erm: ErmConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("n_test", self.n_test),
            ("replications", self.replications),
            ("m", self.m),
            ("grid_points", self.grid_points),
            ("oracle_mc", self.oracle_mc),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".into()));
        }
        CostParams::new(self.costs.c, self.costs.s).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.saa_window >= 0.0) {
            return Err(Error::Config("saa_window must be nonnegative".into()));
        }
        self.cdgm.validate()
    }

    fn check_methods(&self, kind: ExperimentKind) -> Result<()> {
        for m in &self.methods {
            let ok = match kind {
                ExperimentKind::Inventory => m.supports_inventory(),
                ExperimentKind::Joint => m.supports_joint(),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "method `{m}` does not apply to {} experiments",
                    match kind {
                        ExperimentKind::Inventory => "inventory",
                        ExperimentKind::Joint => "joint",
                    }
                )));
            }
        }
        Ok(())
    }

    pub fn price_set(&self) -> PriceSet {
        PriceSet::for_kind(self.dgp, self.mode)
    }

    /// Candidate prices for joint decisions; prices at or below cost are
    /// dropped since they cannot earn a positive margin.
    pub fn joint_grid(&self) -> Result<Vec<f64>> {
        let grid = match self.price_set() {
            PriceSet::Discrete(ps) => ps,
            PriceSet::Interval { lo, hi } => uniform_grid(lo, hi, self.grid_points)?,
        };
        let grid: Vec<f64> = grid.into_iter().filter(|&p| p > self.costs.c).collect();
        if grid.is_empty() {
            return Err(Error::Config("no grid price exceeds the unit cost".into()));
        }
        Ok(grid)
    }
}

/// One aggregate cell of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    /// `None` for the price-averaged (or price-free) aggregate.
    pub price: Option<f64>,
    pub mean: f64,
    /// Absent with fewer than two replications.
    pub std: Option<f64>,
    pub reps: usize,
}

/// Per-replication values behind one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub method: Method,
    pub price: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub experiment: ExperimentKind,
    pub metric: String,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub raw: Vec<RawSeries>,
}

impl ExperimentReport {
    fn from_raw(kind: ExperimentKind, config: &ExperimentConfig, raw: Vec<RawSeries>) -> Self {
        let rows = raw
            .iter()
            .map(|s| ReportRow {
                method: s.method,
                price: s.price,
                mean: mean(&s.values),
                std: sample_std(&s.values),
                reps: s.values.len(),
            })
            .collect();
        Self {
            version: CODE_VERSION.to_string(),
            experiment: kind,
            metric: kind.metric().to_string(),
            config: config.clone(),
            rows,
            raw,
        }
    }

    /// The price-free aggregate for `method`.
    pub fn summary(&self, method: Method) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.price.is_none())
    }

    pub fn summary_mean(&self, method: Method) -> Option<f64> {
        self.summary(method).map(|r| r.mean)
    }

    pub fn raw_values(&self, method: Method, price: Option<f64>) -> Option<&[f64]> {
        self.raw
            .iter()
            .find(|s| s.method == method && s.price == price)
            .map(|s| s.values.as_slice())
    }
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const CSV_HEADER: &str = "dgp,mode,method,metric,price,mean,std,reps";

/// CSV report: two `#` comment lines (code version, effective config as
/// JSON) followed by one row per aggregate.
pub fn report_csv(report: &ExperimentReport) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# version: {}\n", report.version));
    out.push_str(&format!(
        "# config: {}\n",
        serde_json::to_string(&report.config)?
    ));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            report.config.dgp,
            report.config.mode,
            r.method,
            report.metric,
            r.price.map(format_sig6).unwrap_or_else(|| "all".into()),
            format_sig6(r.mean),
            r.std.map(format_sig6).unwrap_or_default(),
            r.reps
        ));
    }
    Ok(out)
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn write_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => report_csv(report)?,
        ReportFormat::Json => report_json(report)?,
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// A parsed CSV report row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub dgp: String,
    pub mode: String,
    pub method: String,
    pub metric: String,
    pub price: Option<f64>,
    pub mean: f64,
    pub std: Option<f64>,
    pub reps: usize,
}

pub fn read_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Schema(format!(
            "unexpected report header `{}`",
            header.join(",")
        )));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Schema(format!("`{s}` is not a number")))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(CsvRow {
            dgp: rec[0].to_string(),
            mode: rec[1].to_string(),
            method: rec[2].to_string(),
            metric: rec[3].to_string(),
            price: if &rec[4] == "all" {
                None
            } else {
                Some(num(&rec[4])?)
            },
            mean: num(&rec[5])?,
            std: if rec[6].is_empty() {
                None
            } else {
                Some(num(&rec[6])?)
            },
            reps: rec[7]
                .parse()
                .map_err(|_| Error::Schema("reps must be an integer".into()))?,
        });
    }
    Ok(rows)
}

/// Trained form of a method for one replication.
enum Fitted {
    Oracle,
    Saa(SaaModel),
    Rbe(RbeModel),
    Erm(ErmBank),
    Ko(KoModel),
    Generator(Box<Generator>),
    SaaJoint,
}

fn method_seed(rep: &RngStream, method: Method) -> u64 {
    rep.derive("fit").derive(method.as_str()).next_u64()
}

fn fit_method(
    method: Method,
    data: &Dataset,
    cfg: &ExperimentConfig,
    rep: &RngStream,
) -> Result<Fitted> {
    Ok(match method {
        Method::Oracle => Fitted::Oracle,
        Method::Saa => {
            let mode = match cfg.mode {
                PriceMode::Discrete => SaaMode::ExactPrice,
                PriceMode::Continuous => SaaMode::Window(cfg.saa_window),
            };
            Fitted::Saa(SaaModel::fit(data, mode)?)
        }
        Method::SaaPooled => Fitted::Saa(SaaModel::fit(data, SaaMode::Pooled)?),
        Method::Rbe => Fitted::Rbe(crate::baselines::rbe_fit(data)?),
        Method::ErmLr | Method::ErmNn => {
            let form = if method == Method::ErmLr {
                ErmForm::Linear
            } else {
                ErmForm::Neural
            };
            let erm = ErmConfig {
                seed: method_seed(rep, method),
                ..cfg.erm.clone()
            };
            Fitted::Erm(ErmBank::fit(data, &DEFAULT_TAU_BANK, form, &erm)?)
        }
        Method::Ko | Method::Prescriptive => Fitted::Ko(KoModel::silverman(data)?),
        Method::Cdgm | Method::CdgmText => {
            let tc = TrainConfig {
                seed: method_seed(rep, method),
                use_text: method == Method::CdgmText,
                ..cfg.cdgm.clone()
            };
            Fitted::Generator(Box::new(train(data, &tc)?))
        }
        Method::SaaJoint => Fitted::SaaJoint,
    })
}

/// A test condition with its realized demand and the oracle decision.
struct TestPoint {
    x: Features,
    p: f64,
    d: f64,
    q_star: f64,
}

/// Test conditions grouped by price (discrete) or in one group (continuous).
struct TestGroup {
    points: Vec<TestPoint>,
}

fn oracle_decision(oracle: &OracleModel, x: &Features, p: f64, costs: &CostParams) -> Result<f64> {
    if p <= costs.c {
        return Ok(0.0);
    }
    oracle.oracle_quantile(x, p, rho(p, costs)?)
}

fn inventory_tests(
    oracle: &OracleModel,
    cfg: &ExperimentConfig,
    rep: &RngStream,
) -> Result<Vec<TestGroup>> {
    let mut rng = rep.derive("test-inventory");
    let point = |p: f64, rng: &mut RngStream| -> Result<TestPoint> {
        let x = oracle.sample_features(rng);
        let d = oracle.sample_demand(&x, p, rng)?;
        let q_star = oracle_decision(oracle, &x, p, &cfg.costs)?;
        Ok(TestPoint { x, p, d, q_star })
    };
    match oracle.price_set() {
        PriceSet::Discrete(prices) => prices
            .iter()
            .map(|&p| {
                Ok(TestGroup {
                    points: (0..cfg.n_test)
                        .map(|_| point(p, &mut rng))
                        .collect::<Result<_>>()?,
                })
            })
            .collect(),
        set @ PriceSet::Interval { .. } => {
            let points = (0..cfg.n_test)
                .map(|_| {
                    let p = set.sample(&mut rng);
                    point(p, &mut rng)
                })
                .collect::<Result<_>>()?;
            Ok(vec![TestGroup { points }])
        }
    }
}

/// Order quantities of a fitted method for every point of a group.
fn inventory_quantities(
    fitted: &Fitted,
    group: &TestGroup,
    cfg: &ExperimentConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let costs = &cfg.costs;
    let live: Vec<&TestPoint> = group.points.iter().filter(|t| t.p > costs.c).collect();
    let mut decided = match fitted {
        Fitted::Oracle => live.iter().map(|t| t.q_star).collect(),
        Fitted::Saa(m) => live
            .iter()
            .map(|t| m.decide(t.p, costs))
            .collect::<Result<Vec<_>>>()?,
        Fitted::Rbe(m) => live
            .iter()
            .map(|t| m.decide(&t.x, t.p, costs))
            .collect::<Result<Vec<_>>>()?,
        Fitted::Erm(m) => live
            .iter()
            .map(|t| m.decide(&t.x, t.p, costs))
            .collect::<Result<Vec<_>>>()?,
        Fitted::Ko(m) => live
            .iter()
            .map(|t| m.decide(&t.x, t.p, costs))
            .collect::<Result<Vec<_>>>()?,
        Fitted::Generator(g) => {
            let conditions: Vec<(&Features, f64)> = live.iter().map(|t| (&t.x, t.p)).collect();
            let samples = g.sample_conditions(&conditions, cfg.m, rng)?;
            live.iter()
                .zip(&samples)
                .map(|(t, s)| crate::decisions::inventory_decision(s, t.p, costs))
                .collect::<Result<Vec<_>>>()?
        }
        Fitted::SaaJoint => {
            return Err(Error::Config("saa_joint is a joint-pricing method".into()))
        }
    }
    .into_iter();
    // Prices at or below cost earn nothing per unit: every method stocks zero.
    Ok(group
        .points
        .iter()
        .map(|t| {
            if t.p > costs.c {
                decided.next().expect("one per live point")
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean profit shortfall against the oracle decision on each group.
fn group_gaps(
    fitted: &Fitted,
    groups: &[TestGroup],
    cfg: &ExperimentConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    groups
        .iter()
        .map(|g| {
            let q = inventory_quantities(fitted, g, cfg, rng)?;
            let total: f64 = g
                .points
                .iter()
                .zip(&q)
                .map(|(t, &q)| {
                    profit(t.d, t.p, t.q_star, &cfg.costs) - profit(t.d, t.p, q, &cfg.costs)
                })
                .sum();
            Ok(total / g.points.len() as f64)
        })
        .collect()
}

/// Oracle joint policy: exact quantile at each grid price, expected profit
/// by Monte Carlo with the same noise draws at every price.
fn oracle_joint(
    oracle: &OracleModel,
    x: &Features,
    grid: &[f64],
    cfg: &ExperimentConfig,
    rng: &mut RngStream,
) -> Result<JointDecision> {
    let mut z = vec![0.0; cfg.oracle_mc];
    rng.fill_standard_normal(&mut z);
    let profile = grid
        .iter()
        .map(|&p| {
            let q = oracle_decision(oracle, x, p, &cfg.costs)?;
            let total: f64 = z
                .iter()
                .map(|&v| profit(oracle.demand_from_noise(x, p, v), p, q, &cfg.costs))
                .sum();
            Ok(PricePoint {
                price: p,
                quantity: q,
                profit: total / z.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    JointDecision::from_profile(profile)
}

fn joint_profit(
    fitted: &Fitted,
    data: &Dataset,
    oracle: &OracleModel,
    tests: &[(Features, f64)],
    grid: &[f64],
    cfg: &ExperimentConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let costs = &cfg.costs;
    let pooled = match fitted {
        Fitted::SaaJoint => Some(saa_joint(data, grid, costs)?),
        _ => None,
    };
    let mut total = 0.0;
    for (x, z) in tests {
        let decision = match fitted {
            Fitted::Oracle => oracle_joint(oracle, x, grid, cfg, rng)?,
            Fitted::Rbe(m) => m.joint(x, grid, costs)?,
            Fitted::Ko(m) => m.joint(x, grid, costs)?,
            Fitted::Generator(g) => joint_decision(g.as_ref(), x, grid, cfg.m, costs, rng)?,
            Fitted::SaaJoint => pooled.clone().expect("computed above"),
            Fitted::Saa(_) | Fitted::Erm(_) => {
                return Err(Error::Config("method has no joint pricing rule".into()));
            }
        };
        // Demand is realized at the chosen price with noise shared by all methods.
        let d = oracle.demand_from_noise(x, decision.price, *z);
        total += profit(d, decision.price, decision.quantity, costs);
    }
    Ok(total / tests.len() as f64)
}

/// Results of one replication: inventory gaps per method and group, and
/// joint profits per method.
struct RepResult {
    inventory: Vec<(Method, Vec<f64>)>,
    joint: Vec<(Method, f64)>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    r: usize,
    inventory: bool,
    joint: bool,
) -> Result<RepResult> {
    let rep = RngStream::new(cfg.seed).derive(&format!("rep/{r}"));
    let oracle = OracleModel::new(cfg.dgp, cfg.mode, &rep.derive("oracle"));
    let data = oracle.generate_dataset(cfg.n, &mut rep.derive("train"));

    let inv_groups = if inventory {
        inventory_tests(&oracle, cfg, &rep)?
    } else {
        Vec::new()
    };
    let joint_tests: Vec<(Features, f64)> = if joint {
        let mut rng = rep.derive("test-joint");
        (0..cfg.n_test)
            .map(|_| {
                let x = oracle.sample_features(&mut rng);
                (x, rng.standard_normal())
            })
            .collect()
    } else {
        Vec::new()
    };
    let grid = if joint { cfg.joint_grid()? } else { Vec::new() };

    let mut out = RepResult {
        inventory: Vec::new(),
        joint: Vec::new(),
    };
    for &method in &cfg.methods {
        let fitted = fit_method(method, &data, cfg, &rep)?;
        let decide = rep.derive("decide").derive(method.as_str());
        if inventory && method.supports_inventory() {
            let gaps = group_gaps(&fitted, &inv_groups, cfg, &mut decide.derive("inventory"))?;
            out.inventory.push((method, gaps));
        }
        if joint && method.supports_joint() {
            let value = joint_profit(
                &fitted,
                &data,
                &oracle,
                &joint_tests,
                &grid,
                cfg,
                &mut decide.derive("joint"),
            )?;
            out.joint.push((method, value));
        }
    }
    Ok(out)
}

fn inventory_report(cfg: &ExperimentConfig, reps: &[RepResult]) -> ExperimentReport {
    let prices: Vec<Option<f64>> = match cfg.price_set() {
        PriceSet::Discrete(ps) => ps.into_iter().map(Some).collect(),
        PriceSet::Interval { .. } => vec![None],
    };
    let mut raw = Vec::new();
    for (mi, &(method, _)) in reps[0].inventory.iter().enumerate() {
        if prices.len() > 1 {
            for (gi, &price) in prices.iter().enumerate() {
                raw.push(RawSeries {
                    method,
                    price,
                    values: reps.iter().map(|r| r.inventory[mi].1[gi]).collect(),
                });
            }
        }
        raw.push(RawSeries {
            method,
            price: None,
            values: reps.iter().map(|r| mean(&r.inventory[mi].1)).collect(),
        });
    }
    ExperimentReport::from_raw(ExperimentKind::Inventory, cfg, raw)
}

fn joint_report(cfg: &ExperimentConfig, reps: &[RepResult]) -> ExperimentReport {
    let raw = reps[0]
        .joint
        .iter()
        .enumerate()
        .map(|(mi, &(method, _))| RawSeries {
            method,
            price: None,
            values: reps.iter().map(|r| r.joint[mi].1).collect(),
        })
        .collect();
    ExperimentReport::from_raw(ExperimentKind::Joint, cfg, raw)
}

fn run_all(cfg: &ExperimentConfig, inventory: bool, joint: bool) -> Result<Vec<RepResult>> {
    cfg.validate()?;
    (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r, inventory, joint))
        .collect()
}

/// Profit shortfall against the oracle inventory rule, per price and
/// averaged over prices.
pub fn run_inventory_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.check_methods(ExperimentKind::Inventory)?;
    Ok(inventory_report(cfg, &run_all(cfg, true, false)?))
}

/// Mean realized profit of each method's joint price and quantity.
pub fn run_joint_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.check_methods(ExperimentKind::Joint)?;
    Ok(joint_report(cfg, &run_all(cfg, false, true)?))
}

/// Both protocols from one set of trained models. Each report equals the
/// one its standalone runner would produce for the applicable methods.
pub fn run_both_experiments(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, ExperimentReport)> {
    let reps = run_all(cfg, true, true)?;
    let inv_cfg = ExperimentConfig {
        methods: cfg
            .methods
            .iter()
            .copied()
            .filter(|m| m.supports_inventory())
            .collect(),
        ..cfg.clone()
    };
    let joint_cfg = ExperimentConfig {
        methods: cfg
            .methods
            .iter()
            .copied()
            .filter(|m| m.supports_joint())
            .collect(),
        ..cfg.clone()
    };
    Ok((
        inventory_report(&inv_cfg, &reps),
        joint_report(&joint_cfg, &reps),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub n_list: Vec<usize>,
    /// `gaps[r][j]`: price-averaged generator gap of replication `r` at
    /// training size `n_list[j]`.
    pub gaps: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    pub fn mean_gaps(&self) -> Vec<f64> {
        (0..self.n_list.len())
            .map(|j| mean(&self.gaps.iter().map(|g| g[j]).collect::<Vec<_>>()))
            .collect()
    }

    /// Replications whose gap at the largest size is strictly below the gap
    /// at the smallest size.
    pub fn improved_replications(&self) -> usize {
        self.gaps
            .iter()
            .filter(|g| g.len() > 1 && g[g.len() - 1] < g[0])
            .count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!(
            "# version: {}\n# config: {}\n",
            self.version,
            serde_json::to_string(&self.config)?
        );
        out.push_str("dgp,mode,method,metric,n,mean,std,reps\n");
        for (j, n) in self.n_list.iter().enumerate() {
            let vals: Vec<f64> = self.gaps.iter().map(|g| g[j]).collect();
            out.push_str(&format!(
                "{},{},cdgm,profit_gap,{n},{},{},{}\n",
                self.config.dgp,
                self.config.mode,
                format_sig6(mean(&vals)),
                sample_std(&vals).map(format_sig6).unwrap_or_default(),
                vals.len()
            ));
        }
        Ok(out)
    }
}

/// Generator gap at increasing training sizes. The corpora are nested
/// prefixes of one corpus per replication and share one test set.
pub fn convergence_probe(cfg: &ExperimentConfig, n_list: &[usize]) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if n_list.is_empty() || n_list.contains(&0) || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "n list must be positive and strictly ascending".into(),
        ));
    }
    let n_max = *n_list.last().expect("nonempty");
    let gaps = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let rep = RngStream::new(cfg.seed).derive(&format!("rep/{r}"));
            let oracle = OracleModel::new(cfg.dgp, cfg.mode, &rep.derive("oracle"));
            let corpus = oracle.generate_dataset(n_max, &mut rep.derive("train"));
            let groups = inventory_tests(&oracle, cfg, &rep)?;
            n_list
                .iter()
                .map(|&n| {
                    let fitted = fit_method(Method::Cdgm, &corpus.prefix(n), cfg, &rep)?;
                    let mut rng = rep.derive("decide").derive(&format!("cdgm/n{n}"));
                    Ok(mean(&group_gaps(&fitted, &groups, cfg, &mut rng)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        n_list: n_list.to_vec(),
        gaps,
    })
}

/// Aggregates keyed by method name, for quick inspection.
pub fn summary_table(report: &ExperimentReport) -> BTreeMap<String, (f64, Option<f64>)> {
    report
        .rows
        .iter()
        .filter(|r| r.price.is_none())
        .map(|r| (r.method.to_string(), (r.mean, r.std)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(76.65), "76.65");
        assert_eq!(format_sig6(-61.0712345), "-61.0712");
        assert_eq!(format_sig6(0.0001234567), "0.000123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(999999.5), "1e+06");
        assert_eq!(format_sig6(1.5e-7), "1.5e-07");
        assert_eq!(format_sig6(123456.0), "123456");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(matches!(
            "nope".parse::<Method>(),
            Err(Error::UnknownMethod(_))
        ));
        assert_eq!("ERM-NN".parse::<Method>().unwrap(), Method::ErmNn);
    }

    #[test]
    fn joint_grid_drops_prices_at_cost() {
        let cfg = ExperimentConfig {
            dgp: DgpKind::D,
            ..ExperimentConfig::default()
        };
        let grid = cfg.joint_grid().unwrap();
        assert_eq!(grid.len(), 20);
        assert!(grid.iter().all(|&p| p > 1.0));
    }

    #[test]
    fn config_validation_rejects_empty_methods() {
        let cfg = ExperimentConfig {
            methods: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            methods: vec![Method::Saa],
            ..ExperimentConfig::default()
        };
        assert!(cfg.check_methods(ExperimentKind::Joint).is_err());
    }
}
