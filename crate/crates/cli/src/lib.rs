//! Command-line front end: score, select, cover, simulate, validate.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use taudis::config::{CoverAlgorithm, SelectionConfig, Strategy};
use taudis::manifest::SelectionManifest;
use taudis::maxcover::{self, CoverError, CoverProblem};
use taudis::model::{ingest_predictions, validate_predictions, IngestError, Pool, PoolState};
use taudis::report::{write_score_table, ScoreMetric};
use taudis::sim::{run_simulation, SimulationConfig, SimulationError, SyntheticPoolSpec};
use taudis::strategies::{self, StrategyError};
use thiserror::Error;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid input data.
    #[error("{0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::Config(_) => CliError::Config(e.to_string()),
            StrategyError::MissingPrediction(_) | StrategyError::MissingEmbedding(_) | StrategyError::Metric(_) => {
                CliError::Input(e.to_string())
            }
            StrategyError::Similarity(_) | StrategyError::Cover(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Strategy(inner) => inner.into(),
            SimulationError::PoolState(_) | SimulationError::Budget { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "taudis",
    version,
    about = "Active-learning batch selection for instance segmentation"
)]
pub struct Cli {
    /// Worker threads for parallel scoring and similarity builds.
    #[arg(long, global = true, env = "TAUDIS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-instance and per-image uncertainty scores as CSV.
    Score(ScoreArgs),
    /// Run one selection round and write its manifest.
    Select(SelectArgs),
    /// Solve a max k-cover problem, or dump the one a selection round builds.
    Cover(CoverArgs),
    /// Run a multi-round simulation on a synthetic pool.
    Simulate(SimulateArgs),
    /// Check a prediction file and list every violation.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Prediction file (JSON Lines, optionally gzipped).
    pub input: PathBuf,
    /// Metrics to include; defaults to all.
    #[arg(long = "metric", value_delimiter = ',')]
    pub metrics: Vec<ScoreMetric>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Flags that override fields of the config file.
#[derive(Debug, Args, Default, Clone)]
pub struct ConfigOverrides {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    fn apply(&self, obj: &mut Map<String, Value>) {
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                obj.insert(k.to_owned(), v);
            }
        };
        set("strategy", self.strategy.map(|s| Value::from(s.name())));
        set("budget", self.budget.map(Value::from));
        set("alpha", self.alpha.map(Value::from));
        set("beta", self.beta.map(Value::from));
        set("sigma", self.sigma.map(Value::from));
        set("seed", self.seed.map(Value::from));
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Prediction file for the unlabeled (and optionally labeled) images.
    pub input: PathBuf,
    /// SelectionConfig JSON. Flags override its fields.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Newline-delimited ids of already-labeled images.
    #[arg(short, long)]
    pub labeled: Option<PathBuf>,
    /// Round index recorded in the manifest.
    #[arg(long, default_value_t = 1)]
    pub round: usize,
    /// Leave wall-clock duration out of the manifest.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
pub struct CoverArgs {
    /// Cover problem JSON, or a prediction file with `--dump-problem`.
    pub input: PathBuf,
    /// Number of candidates to pick.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "lazy")]
    pub algo: CoverAlgorithm,
    #[arg(long, default_value_t = 4)]
    pub partitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Build the cover problem a TAUDIS round would solve on the given
    /// predictions and write it instead of solving.
    #[arg(long)]
    pub dump_problem: bool,
    /// With `--dump-problem`: SelectionConfig JSON.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// With `--dump-problem`: newline-delimited labeled image ids.
    #[arg(short, long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// SimulationConfig JSON.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// SyntheticPoolSpec JSON; defaults are used for missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated strategies; overrides the config list.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Metrics report as JSON (stdout when neither output is given).
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Metrics as a flat round,strategy,metric,value CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seeds both the synthetic pool and the selection.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub input: PathBuf,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(s)
}

fn load_pool(path: &Path) -> Result<Pool, CliError> {
    ingest_predictions(open(path)?).map_err(|e| match e {
        IngestError::Io(err) => CliError::Input(format!("{}: {err}", path.display())),
        IngestError::Invalid(v) => CliError::Input(format!("{}: {v}", path.display())),
    })
}

fn load_labeled(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    let Some(path) = path else { return Ok(Vec::new()) };
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn load_json_object(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else { return Ok(Map::new()) };
    match serde_json::from_str(&read_to_string(path)?) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(CliError::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Config file merged with flag overrides, then validated.
fn resolve_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<SelectionConfig, CliError> {
    let mut obj = load_json_object(path)?;
    overrides.apply(&mut obj);
    let config: SelectionConfig =
        serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let result = match path {
        Some(p) => std::fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    result.map_err(|e| CliError::Internal(format!("write failed: {e}")))
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // Ignore the error raised when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Score(args) => score(args),
        Command::Select(args) => select(args),
        Command::Cover(args) => cover(args),
        Command::Simulate(args) => simulate(args),
        Command::Validate(args) => validate(args),
    }
}

fn score(args: ScoreArgs) -> Result<(), CliError> {
    let pool = load_pool(&args.input)?;
    let metrics = if args.metrics.is_empty() {
        ScoreMetric::ALL.to_vec()
    } else {
        args.metrics
    };
    let sink: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    write_score_table(&pool, &metrics, sink).map_err(|e| CliError::Internal(format!("write failed: {e}")))
}

fn select(args: SelectArgs) -> Result<(), CliError> {
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    let pool = load_pool(&args.input)?;
    let labeled = load_labeled(args.labeled.as_deref())?;
    let state = PoolState::from_pool(&pool, labeled);

    let start = Instant::now();
    let output = strategies::select(&pool, &state, &config)?;
    let elapsed = start.elapsed().as_millis() as u64;
    for w in &output.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = SelectionManifest::new(&config, args.round, output, (!args.no_timing).then_some(elapsed));
    write_output(args.output.as_deref(), manifest.to_json().as_bytes())
}

fn cover_error(e: CoverError) -> CliError {
    match e {
        CoverError::Json(_) | CoverError::DuplicateCandidate(_) => CliError::Input(e.to_string()),
        CoverError::Partitions(_) => CliError::Config(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

fn cover(args: CoverArgs) -> Result<(), CliError> {
    if args.dump_problem {
        let overrides = ConfigOverrides {
            strategy: Some(Strategy::Taudis),
            budget: args.budget,
            alpha: args.alpha,
            beta: args.beta,
            sigma: args.sigma,
            seed: None,
        };
        let config = resolve_config(args.config.as_deref(), &overrides)?;
        let pool = load_pool(&args.input)?;
        let state = PoolState::from_pool(&pool, load_labeled(args.labeled.as_deref())?);
        let images = strategies::unlabeled_images(&pool, &state)?;
        let (_, problem) = strategies::taudis_cover_problem(&images, &config)?;
        return write_output(args.output.as_deref(), &json_bytes(&problem.to_json_value())?);
    }

    let k = args
        .k
        .filter(|&k| k >= 1)
        .ok_or_else(|| CliError::Config("--k must be a positive integer".into()))?;
    let problem = CoverProblem::from_json_str(&read_to_string(&args.input)?).map_err(cover_error)?;
    let solution = match args.algo {
        CoverAlgorithm::Greedy => maxcover::greedy_max_cover(&problem, k),
        CoverAlgorithm::Lazy => maxcover::lazy_greedy_max_cover(&problem, k),
        CoverAlgorithm::Partitioned => {
            maxcover::partitioned_max_cover(&problem, k, args.partitions, args.seed).map_err(cover_error)?
        }
        CoverAlgorithm::Brute => maxcover::brute_force_max_cover(&problem, k).map_err(cover_error)?,
    };
    write_output(args.output.as_deref(), &json_bytes(&solution)?)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut obj = load_json_object(args.config.as_deref())?;
    let selection = obj.entry("selection").or_insert_with(|| Value::Object(Map::new()));
    let Value::Object(sel) = selection else {
        return Err(CliError::Config("selection must be a JSON object".into()));
    };
    // The per-run strategy is filled in by the harness.
    sel.entry("strategy").or_insert_with(|| Value::from("taudis"));
    ConfigOverrides {
        strategy: None,
        budget: args.budget,
        alpha: args.alpha,
        beta: args.beta,
        sigma: args.sigma,
        seed: args.seed,
    }
    .apply(sel);
    if !args.strategies.is_empty() {
        obj.insert(
            "strategies".into(),
            serde_json::to_value(&args.strategies).expect("strategy names"),
        );
    }
    obj.entry("strategies")
        .or_insert_with(|| serde_json::to_value(Strategy::ALL).expect("strategy names"));
    if let Some(r) = args.rounds {
        obj.insert("rounds".into(), Value::from(r));
    }
    let config: SimulationConfig =
        serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Config(e.to_string()))?;

    let mut spec_obj = load_json_object(args.spec.as_deref())?;
    if let Some(seed) = args.seed {
        spec_obj.insert("seed".into(), Value::from(seed));
    }
    let spec: SyntheticPoolSpec =
        serde_json::from_value(Value::Object(spec_obj)).map_err(|e| CliError::Config(e.to_string()))?;

    let report = run_simulation(&spec, &config)?;
    let json = json_bytes(&report)?;
    if let Some(p) = &args.csv {
        write_output(Some(p), report.to_csv().as_bytes())?;
    }
    if args.json.is_some() || args.csv.is_none() {
        write_output(args.json.as_deref(), &json)?;
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let violations = validate_predictions(open(&args.input)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    let mut out = String::new();
    for v in &violations {
        out.push_str(&format!("{}: {v}\n", args.input.display()));
    }
    let n = violations.len();
    out.push_str(&format!("{n} violation{}\n", if n == 1 { "" } else { "s" }));
    write_output(None, out.as_bytes())?;
    if n == 0 {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{n} violation{} found",
            if n == 1 { "" } else { "s" }
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config_fields() {
        let mut obj: Map<String, Value> = serde_json::from_str(r#"{"strategy":"wse","budget":4,"sigma":0.5}"#).unwrap();
        ConfigOverrides {
            budget: Some(9),
            seed: Some(3),
            ..Default::default()
        }
        .apply(&mut obj);
        let cfg: SelectionConfig = serde_json::from_value(Value::Object(obj)).unwrap();
        assert_eq!((cfg.budget, cfg.seed, cfg.sigma, cfg.strategy), (9, 3, 0.5, Strategy::Wse));
    }

    #[test]
    fn config_without_budget_is_a_config_error() {
        let overrides = ConfigOverrides {
            strategy: Some(Strategy::Random),
            ..Default::default()
        };
        let err = resolve_config(None, &overrides).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn strategy_errors_map_to_exit_codes() {
        let code = |e: StrategyError| CliError::from(e).exit_code();
        assert_eq!(code(StrategyError::MissingEmbedding("x".into())), EXIT_INPUT);
        assert_eq!(code(StrategyError::Config(taudis::config::ConfigError::ZeroBudget)), EXIT_CONFIG);
        assert_eq!(code(StrategyError::Cover(CoverError::Partitions(1))), EXIT_INTERNAL);
    }

    #[test]
    fn cli_parses_comma_separated_lists() {
        let cli = Cli::try_parse_from(["taudis", "simulate", "--strategies", "taudis,wse", "--seed", "4"]).unwrap();
        let Command::Simulate(args) = cli.command else { panic!("wrong command") };
        assert_eq!(args.strategies, [Strategy::Taudis, Strategy::Wse]);
        let err = Cli::try_parse_from(["taudis", "select", "p.jsonl", "--strategy", "vaal"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }
}
