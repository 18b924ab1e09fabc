//! `genvendor`: run simulations, train and query demand generators, and
//! evaluate policies on meal-delivery data.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genvendor::dgp::parse_description;
use genvendor::harness::{
    convergence_probe, report_csv, report_json, run_both_experiments, run_inventory_experiment,
    run_joint_experiment, ExperimentConfig, ExperimentReport, Method,
};
use genvendor::ingest::{load_csv, run_real_data, RealDataConfig};
use genvendor::{
    inventory_decision, joint_decision, CostParams, Dataset, DgpKind, Features, Generator,
    OracleModel, PriceMode, RngStream, TrainConfig,
};
use serde_json::json;

/// Exit codes follow the BSD `sysexits` convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Category {
    Usage,
    Config,
    Runtime,
    Io,
}

impl Category {
    fn code(self) -> u8 {
        match self {
            Category::Usage => 64,
            Category::Config => 65,
            Category::Runtime => 70,
            Category::Io => 74,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Runtime => "runtime",
            Category::Io => "io",
        })
    }
}

#[derive(Debug)]
struct CliError {
    category: Category,
    message: String,
}

impl CliError {
    fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Category::Io, format!("{}: {err}", path.display()))
    }
}

impl From<genvendor::Error> for CliError {
    fn from(err: genvendor::Error) -> Self {
        use genvendor::Error as E;
        let category = match &err {
            E::Io(_) => Category::Io,
            E::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => Category::Io,
            E::Config(_)
            | E::UnknownKind(_)
            | E::UnknownMethod(_)
            | E::Schema(_)
            | E::Payload(_)
            | E::Version { .. }
            | E::Domain(_)
            | E::Shape { .. }
            | E::PriceOutOfRange { .. }
            | E::Csv(_)
            | E::Json(_) => Category::Config,
            _ => Category::Runtime,
        };
        Self::new(category, err.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "genvendor",
    version,
    about = "Newsvendor pricing and inventory decisions from generative demand models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replicated inventory and joint-pricing experiments on a synthetic process.
    Simulate(SimulateArgs),
    /// Train a demand generator and save it.
    Train(TrainArgs),
    /// Query a saved generator for an order quantity or a price and quantity.
    Decide(DecideArgs),
    /// Evaluate policies per meal and cost setting on a meal-demand CSV.
    RealData(RealDataArgs),
    /// Generator profit gap as the training set grows.
    Convergence(ConvergenceArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "GENVENDOR_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Inventory,
    Joint,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Process kind: a, b, c, d or e.
    #[arg(long)]
    dgp: Option<String>,
    /// Price protocol: discrete or continuous.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Training records per replication.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "both")]
    experiment: Experiment,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Strictly ascending training sizes.
    #[arg(long, value_delimiter = ',', default_value = "200,500,1000,2000")]
    n_list: Vec<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV with header `x1,...,xk,p,d` or `text,p,d`.
    #[arg(long, conflicts_with = "dgp")]
    data: Option<PathBuf>,
    /// Train on a freshly simulated corpus of this kind instead.
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long, default_value = "discrete")]
    mode: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Model file name inside the output directory.
    #[arg(long, default_value = "generator.json")]
    model: String,
}

#[derive(Args, Debug)]
struct DecideArgs {
    /// Saved generator.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated numeric features.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "text"
    )]
    features: Option<Vec<f64>>,
    /// Product description for text models.
    #[arg(long)]
    text: Option<String>,
    /// Stock for this price.
    #[arg(long, conflicts_with = "grid")]
    price: Option<f64>,
    /// Choose a price from this comma-separated grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    cost: f64,
    #[arg(long, default_value_t = 0.5)]
    salvage: f64,
    /// Generated samples per price.
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RealDataArgs {
    #[command(flatten)]
    common: Common,
    /// Meal-demand CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Comma-separated meal ids.
    #[arg(long, value_delimiter = ',')]
    meals: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    names.iter().map(|s| Ok(s.parse::<Method>()?)).collect()
}

fn experiment_config(
    common: &Common,
    dgp: Option<&str>,
    mode: Option<&str>,
    reps: Option<usize>,
) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = config::load_or_default(common.config.as_deref())?;
    if let Some(d) = dgp {
        cfg.dgp = d.parse()?;
    }
    if let Some(m) = mode {
        cfg.mode = m.parse()?;
    }
    if let Some(r) = reps {
        cfg.replications = r;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, body: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_report(
    dir: &Path,
    report: &ExperimentReport,
    format: Format,
) -> CliResult<Option<PathBuf>> {
    if report.rows.is_empty() {
        return Ok(None);
    }
    let c = &report.config;
    let stem = format!("{}_{}_{}", c.dgp, c.mode, report.metric);
    let path = match format {
        Format::Csv => write_file(dir, &format!("{stem}.csv"), &report_csv(report)?)?,
        Format::Json => write_file(dir, &format!("{stem}.json"), &report_json(report)?)?,
    };
    Ok(Some(path))
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = experiment_config(
        &args.common,
        args.dgp.as_deref(),
        args.mode.as_deref(),
        args.reps,
    )?;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(n) = args.n_test {
        cfg.n_test = n;
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    let reports = match args.experiment {
        Experiment::Inventory => vec![run_inventory_experiment(&cfg)?],
        Experiment::Joint => vec![run_joint_experiment(&cfg)?],
        Experiment::Both => {
            let (inv, joint) = run_both_experiments(&cfg)?;
            vec![inv, joint]
        }
    };
    for report in &reports {
        if let Some(path) = write_report(&args.common.out, report, args.format)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn convergence(args: &ConvergenceArgs) -> CliResult<()> {
    let cfg = experiment_config(
        &args.common,
        args.dgp.as_deref(),
        args.mode.as_deref(),
        args.reps,
    )?;
    let report = convergence_probe(&cfg, &args.n_list)?;
    let name = format!("{}_{}_convergence.csv", cfg.dgp, cfg.mode);
    println!(
        "{}",
        write_file(&args.common.out, &name, &report.to_csv()?)?.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = config::load_or_default(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let data = match (&args.data, &args.dgp) {
        (Some(path), _) => {
            let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            Dataset::read_csv(file)?
        }
        (None, Some(kind)) => {
            let kind: DgpKind = kind.parse()?;
            let mode: PriceMode = args.mode.parse()?;
            let root = RngStream::new(cfg.seed);
            let oracle = OracleModel::new(kind, mode, &root.derive("oracle"));
            oracle.generate_dataset(args.n, &mut root.derive("train"))
        }
        (None, None) => {
            return Err(CliError::new(
                Category::Usage,
                "train needs --data or --dgp",
            ))
        }
    };
    let generator = genvendor::train(&data, &cfg)?;
    println!(
        "{}",
        write_file(&args.common.out, &args.model, &generator.to_json()?)?.display()
    );
    Ok(())
}

fn decide(args: &DecideArgs) -> CliResult<()> {
    let bytes = fs::read(&args.model).map_err(|e| CliError::io(&args.model, e))?;
    let generator = Generator::from_bytes(&bytes)?;
    let x = match (&args.features, &args.text) {
        (Some(v), _) => Features::Numeric(v.clone()),
        (None, Some(t)) => Features::Text(parse_description(t)),
        (None, None) => {
            return Err(CliError::new(
                Category::Usage,
                "decide needs --features or --text",
            ))
        }
    };
    let costs = CostParams::new(args.cost, args.salvage)?;
    let mut rng = RngStream::new(args.seed);
    let out = match (args.price, &args.grid) {
        (Some(p), _) => {
            let samples = generator.generate(&x, p, args.m, &mut rng)?;
            let q = if p <= costs.c {
                0.0
            } else {
                inventory_decision(&samples, p, &costs)?
            };
            json!({ "price": p, "quantity": q })
        }
        (None, Some(grid)) => {
            let jd = joint_decision(&generator, &x, grid, args.m, &costs, &mut rng)?;
            json!({ "price": jd.price, "quantity": jd.quantity, "expected_profit": jd.profit })
        }
        (None, None) => {
            return Err(CliError::new(
                Category::Usage,
                "decide needs --price or --grid",
            ))
        }
    };
    println!("{out}");
    Ok(())
}

fn real_data(args: &RealDataArgs) -> CliResult<()> {
    let mut cfg: RealDataConfig = config::load_or_default(args.common.config.as_deref())?;
    if let Some(meals) = &args.meals {
        cfg.meals = meals.clone();
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let loaded = load_csv(&args.csv)?;
    if !loaded.skipped.is_empty() {
        eprintln!("skipped {} malformed rows", loaded.skipped.len());
    }
    let report = run_real_data(&loaded, &cfg)?;
    println!(
        "{}",
        write_file(&args.common.out, "real_data.csv", &report.to_csv()?)?.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Decide(a) => decide(a),
        Command::RealData(a) => real_data(a),
        Command::Convergence(a) => convergence(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[{}]: {first}", Category::Usage);
            return ExitCode::from(Category::Usage.code());
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category, e.message);
            ExitCode::from(e.category.code())
        }
    }
}
