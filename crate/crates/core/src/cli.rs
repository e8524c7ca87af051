//! Command-line front end.
//!
//! Every command is first resolved into a [`RunConfig`] holding all effective
//! settings, then executed into an in-memory list of output files. Each
//! output embeds (JSON) or sits next to (`<file>.meta.json`) an [`Artifact`]
//! carrying that config, so `replay` can re-run it and compare bytes.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numeric or
//! training error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::TauGrid;
use crate::metrics::{report, ForecastReport};
use crate::model::{ModelKind, PenaltyConfig};
use crate::network::Activation;
use crate::optim::Optimizer;
use crate::paneldata::{
    describe, emit_to_writer, generate_synthetic, ingest, DatasetSummary, GroundTruth, IngestOptions, NoiseLaw,
    Nonlinearity, PanelDataset, PanelSchema, Scenario, SyntheticConfig,
};
use crate::parallel::Execution;
use crate::pipeline::{search, train, PipelineConfig, TrainedModel};
use crate::selection::{SearchGrid, SearchRow};
use crate::trainer::{AnnealSchedule, TrainConfig};

/// Version of the artifact layout; bumped on incompatible changes.
pub const SCHEMA_VERSION: u32 = 1;

const META_SUFFIX: &str = ".meta.json";

// ---------------------------------------------------------------------------
// Run configuration and artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRun {
    pub input: String,
    pub schema: PanelSchema,
    pub delimiter: char,
    pub output: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub generator: SyntheticConfig,
    pub seed: u64,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub input: String,
    pub schema: PanelSchema,
    pub pipeline: PipelineConfig,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchRun {
    pub input: String,
    pub schema: PanelSchema,
    pub pipeline: PipelineConfig,
    pub grid: SearchGrid,
    pub output: String,
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRun {
    pub model: String,
    pub input: String,
    pub schema: PanelSchema,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRun {
    pub predictions: String,
    pub actuals: String,
    pub schema: PanelSchema,
    /// Prediction column to score; the first one when absent.
    pub column: Option<String>,
    pub output: String,
    pub series: String,
    pub table: String,
}

/// Fully resolved settings of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Ingest(IngestRun),
    Synth(SynthRun),
    Train(TrainRun),
    GridSearch(GridSearchRun),
    Predict(PredictRun),
    Evaluate(EvaluateRun),
}

impl RunConfig {
    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Synth(r) => Some(r.seed),
            RunConfig::Train(r) => Some(r.pipeline.train.seed),
            RunConfig::GridSearch(r) => Some(r.pipeline.train.seed),
            _ => None,
        }
    }
}

/// Envelope written with every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub producer: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub result: T,
}

impl<T> Artifact<T> {
    fn new(config: &RunConfig, result: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            producer: format!("psqrnn {}", env!("CARGO_PKG_VERSION")),
            seed: config.seed(),
            config: config.clone(),
            result,
        }
    }
}

/// Sidecar content for dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: PanelSchema,
    pub n_individuals: usize,
    pub n_periods: usize,
    pub truth: Option<GroundTruth>,
}

/// Sidecar content for prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub scenario: Scenario,
    pub columns: Vec<String>,
    /// Targets lie beyond the observed panel, so no actuals exist.
    pub future: bool,
}

/// Sidecar content for grid-search tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMeta {
    pub selected_hidden_sizes: Vec<usize>,
    pub selected_penalties: PenaltyConfig,
}

/// One file produced by a command.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

pub fn meta_path(path: &str) -> String {
    format!("{path}{META_SUFFIX}")
}

fn json_file<T: Serialize>(path: &str, value: &T) -> Result<OutputFile> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(OutputFile { path: PathBuf::from(path), bytes })
}

fn read_json<T: DeserializeOwned>(path: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{path}: {e}")))
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_file(path: &str, header: &[String], rows: Vec<Vec<String>>) -> Result<OutputFile> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    Ok(OutputFile { path: PathBuf::from(path), bytes })
}

// ---------------------------------------------------------------------------
// Execution

fn load_dataset(path: &str, schema: &PanelSchema) -> Result<PanelDataset> {
    ingest(path, &IngestOptions::new(schema.clone()))
}

fn dataset_files(
    config: &RunConfig,
    dataset: &PanelDataset,
    output: &str,
    truth: Option<GroundTruth>,
) -> Result<Vec<OutputFile>> {
    let mut bytes = Vec::new();
    emit_to_writer(dataset, &mut bytes, b',')?;
    let meta = DatasetMeta {
        schema: dataset.schema().clone(),
        n_individuals: dataset.n_individuals(),
        n_periods: dataset.n_periods(),
        truth,
    };
    Ok(vec![
        OutputFile { path: PathBuf::from(output), bytes },
        json_file(&meta_path(output), &Artifact::new(config, meta))?,
    ])
}

fn prediction_column(label: &str) -> String {
    if label == "composite" {
        "predicted".into()
    } else {
        format!("predicted_{label}")
    }
}

/// Runs a resolved configuration and returns its outputs without writing them.
pub fn execute(config: &RunConfig) -> Result<Vec<OutputFile>> {
    match config {
        RunConfig::Ingest(run) => {
            let delimiter = u8::try_from(run.delimiter)
                .map_err(|_| Error::Config(format!("delimiter '{}' is not a single byte", run.delimiter)))?;
            let options = IngestOptions { schema: run.schema.clone(), delimiter };
            let dataset = ingest(&run.input, &options)?;
            let summary: DatasetSummary = describe(&dataset);
            let mut files = dataset_files(config, &dataset, &run.output, None)?;
            files.push(json_file(&run.summary, &Artifact::new(config, summary))?);
            Ok(files)
        }
        RunConfig::Synth(run) => {
            let panel = generate_synthetic(&run.generator, run.seed)?;
            dataset_files(config, &panel.dataset, &run.output, Some(panel.truth))
        }
        RunConfig::Train(run) => {
            let dataset = load_dataset(&run.input, &run.schema)?;
            let model = train(&dataset, &run.pipeline)?;
            Ok(vec![json_file(&run.output, &Artifact::new(config, model))?])
        }
        RunConfig::GridSearch(run) => {
            let dataset = load_dataset(&run.input, &run.schema)?;
            let (model, table) = search(&dataset, &run.pipeline, &run.grid)?;
            let meta = SearchMeta {
                selected_hidden_sizes: model.config.hidden_sizes.clone(),
                selected_penalties: model.config.penalties,
            };
            Ok(vec![
                json_file(&run.output, &Artifact::new(config, model))?,
                search_table(&run.table, &table)?,
                json_file(&meta_path(&run.table), &Artifact::new(config, meta))?,
            ])
        }
        RunConfig::Predict(run) => {
            let artifact: Artifact<TrainedModel> = read_json(&run.model)?;
            if artifact.schema_version != SCHEMA_VERSION {
                return Err(Error::Data(format!(
                    "{}: artifact schema version {} (expected {SCHEMA_VERSION})",
                    run.model, artifact.schema_version
                )));
            }
            let model = artifact.result;
            let dataset = load_dataset(&run.input, &run.schema)?;
            let forecast = model.forecast(&dataset)?;
            let columns: Vec<String> = forecast.labels.iter().map(|l| prediction_column(l)).collect();
            let mut header = vec!["individual".to_string(), "period".to_string()];
            header.extend(columns.iter().cloned());
            let mut rows = Vec::new();
            for (i, id) in forecast.individuals.iter().enumerate() {
                for (s, period) in forecast.periods.iter().enumerate() {
                    let mut row = vec![id.clone(), period.to_string()];
                    row.extend(forecast.predictions.iter().map(|m| num(m[[i, s]])));
                    rows.push(row);
                }
            }
            let meta = PredictionMeta {
                scenario: model.config.scenario,
                columns,
                future: forecast.actuals.is_none(),
            };
            Ok(vec![
                csv_file(&run.output, &header, rows)?,
                json_file(&meta_path(&run.output), &Artifact::new(config, meta))?,
            ])
        }
        RunConfig::Evaluate(run) => evaluate(config, run),
    }
}

fn search_table(path: &str, table: &[SearchRow]) -> Result<OutputFile> {
    let header: Vec<String> = ["n1", "n2", "lambda1", "lambda2", "avg_loss", "bic", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows = table
        .iter()
        .map(|r| {
            vec![
                r.point.n1.to_string(),
                r.point.n2.map(|n| n.to_string()).unwrap_or_default(),
                num(r.point.lambda1),
                num(r.point.lambda2),
                opt(r.avg_loss),
                opt(r.bic),
                r.status.clone(),
            ]
        })
        .collect();
    csv_file(path, &header, rows)
}

/// Predictions keyed by individual and period, in file order.
struct PredictionTable {
    individuals: Vec<String>,
    periods: Vec<i64>,
    values: HashMap<(String, i64), f64>,
}

fn read_predictions(path: &str, column: Option<&str>) -> Result<(String, PredictionTable)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{path}: {e}")))?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "individual" || &headers[1] != "period" {
        return Err(Error::Data(format!("{path}: expected columns individual, period, predicted...")));
    }
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .filter(|&c| c >= 2)
            .ok_or_else(|| Error::Data(format!("{path}: no prediction column '{name}'")))?,
        None => 2,
    };
    let name = headers[col].to_string();
    let mut table = PredictionTable { individuals: Vec::new(), periods: Vec::new(), values: HashMap::new() };
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let id = record[0].to_string();
        let period: i64 = record[1]
            .parse()
            .map_err(|_| Error::Data(format!("{path}: line {line}: bad period '{}'", &record[1])))?;
        let value: f64 = record[col]
            .parse()
            .map_err(|_| Error::Data(format!("{path}: line {line}: bad prediction '{}'", &record[col])))?;
        if !table.individuals.contains(&id) {
            table.individuals.push(id.clone());
        }
        if !table.periods.contains(&period) {
            table.periods.push(period);
        }
        if table.values.insert((id.clone(), period), value).is_some() {
            return Err(Error::Data(format!("{path}: line {line}: duplicate key ({id}, {period})")));
        }
    }
    if table.values.is_empty() {
        return Err(Error::Data(format!("{path}: no prediction rows")));
    }
    table.periods.sort_unstable();
    Ok((name, table))
}

fn evaluate(config: &RunConfig, run: &EvaluateRun) -> Result<Vec<OutputFile>> {
    let (_, table) = read_predictions(&run.predictions, run.column.as_deref())?;
    let actuals_panel = load_dataset(&run.actuals, &run.schema)?;
    let (n, h) = (table.individuals.len(), table.periods.len());
    let mut actuals = Array2::zeros((n, h));
    let mut predicted = Array2::zeros((n, h));
    let mut mismatches = Vec::new();
    for (i, id) in table.individuals.iter().enumerate() {
        let row = actuals_panel.individual_index(id);
        for (s, &period) in table.periods.iter().enumerate() {
            match table.values.get(&(id.clone(), period)) {
                Some(&v) => predicted[[i, s]] = v,
                None => mismatches.push(format!("({id}, {period}) has no prediction")),
            }
            let col = actuals_panel.periods().iter().position(|&p| p == period);
            match (row, col) {
                (Some(r), Some(c)) if actuals_panel.y(r, c).is_finite() => actuals[[i, s]] = actuals_panel.y(r, c),
                (Some(_), Some(_)) => mismatches.push(format!("({id}, {period}) has a missing actual")),
                _ => mismatches.push(format!("({id}, {period}) is not in the actuals file")),
            }
        }
    }
    if !mismatches.is_empty() {
        let shown: Vec<_> = mismatches.iter().take(10).cloned().collect();
        let more = mismatches.len().saturating_sub(shown.len());
        let tail = if more > 0 { format!(" (and {more} more)") } else { String::new() };
        return Err(Error::Data(format!("misaligned keys: {}{tail}", shown.join("; "))));
    }
    let forecast: ForecastReport = report(actuals.view(), predicted.view())?;
    let metrics = forecast.metrics.as_ref().expect("actuals are present");

    let series_header: Vec<String> = ["individual", "period", "actual", "predicted"].iter().map(|s| s.to_string()).collect();
    let mut series_rows = Vec::with_capacity(n * h);
    for (i, id) in table.individuals.iter().enumerate() {
        for (s, period) in table.periods.iter().enumerate() {
            series_rows.push(vec![id.clone(), period.to_string(), num(actuals[[i, s]]), num(predicted[[i, s]])]);
        }
    }
    let table_header: Vec<String> = ["individual", "mape", "rrmse"].iter().map(|s| s.to_string()).collect();
    let mut table_rows: Vec<Vec<String>> = table
        .individuals
        .iter()
        .enumerate()
        .map(|(i, id)| vec![id.clone(), num(metrics.mape_by_individual[i]), num(metrics.rrmse_by_individual[i])])
        .collect();
    let (ms, rs) = (metrics.mape_individual_summary, metrics.rrmse_individual_summary);
    table_rows.push(vec!["Mean".into(), num(ms.mean), num(rs.mean)]);
    table_rows.push(vec!["Std Dev".into(), num(ms.std_dev), num(rs.std_dev)]);
    table_rows.push(vec!["Total".into(), num(metrics.total_mape), num(metrics.total_rrmse)]);

    let series = csv_file(&run.series, &series_header, series_rows)?;
    let summary = csv_file(&run.table, &table_header, table_rows)?;
    Ok(vec![
        json_file(&run.output, &Artifact::new(config, forecast))?,
        series,
        json_file(&meta_path(&run.series), &Artifact::new(config, ()))?,
        summary,
        json_file(&meta_path(&run.table), &Artifact::new(config, ()))?,
    ])
}

pub fn write_outputs(files: &[OutputFile]) -> Result<()> {
    for f in files {
        if let Some(dir) = f.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&f.path, &f.bytes).map_err(|e| Error::io(&f.path, e))?;
    }
    Ok(())
}

/// Paths whose on-disk bytes differ from `files` (or are unreadable).
pub fn differing_outputs(files: &[OutputFile]) -> Vec<PathBuf> {
    files
        .iter()
        .filter(|f| fs::read(&f.path).map(|b| b != f.bytes).unwrap_or(true))
        .map(|f| f.path.clone())
        .collect()
}

/// Reads the run configuration embedded in an artifact, or in the sidecar of
/// a delimited output.
pub fn embedded_config(path: &str) -> Result<RunConfig> {
    let source = if path.ends_with(".json") { path.to_string() } else { meta_path(path) };
    let value: serde_json::Value = read_json(&source)?;
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| Error::Data(format!("{source}: no embedded config")))?;
    serde_json::from_value(config).map_err(|e| Error::Data(format!("{source}: {e}")))
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "psqrnn", version, about = "Panel semiparametric quantile regression with a neural network component")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a delimited panel and write it with a schema sidecar and a summary.
    Ingest(IngestArgs),
    /// Generate a synthetic panel with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Split, standardize and fit one model.
    Train(TrainArgs),
    /// Select hidden sizes and penalties by BIC.
    GridSearch(GridSearchArgs),
    /// Forecast the test side of the model's scenario.
    Predict(PredictArgs),
    /// Score predictions against actuals.
    Evaluate(EvaluateArgs),
    /// Re-run the config embedded in an artifact.
    Replay(ReplayArgs),
}

/// Column bindings. Without flags, the input's sidecar schema is used, then
/// the electricity layout.
#[derive(Debug, Args)]
struct SchemaArgs {
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    period_column: Option<String>,
    #[arg(long)]
    response: Option<String>,
    /// Columns of the linear part, comma separated.
    #[arg(long, value_delimiter = ',')]
    parametric: Option<Vec<String>>,
    /// Columns of the network input, comma separated.
    #[arg(long, value_delimiter = ',')]
    network: Option<Vec<String>>,
}

impl SchemaArgs {
    fn resolve(&self, input: &str) -> Result<PanelSchema> {
        let sidecar = meta_path(input);
        let mut schema = if Path::new(&sidecar).exists() {
            read_json::<Artifact<DatasetMeta>>(&sidecar)?.result.schema
        } else {
            PanelSchema::electricity()
        };
        if let Some(v) = &self.id_column {
            schema.id = v.clone();
        }
        if let Some(v) = &self.period_column {
            schema.period = v.clone();
        }
        if let Some(v) = &self.response {
            schema.response = v.clone();
        }
        if let Some(v) = &self.parametric {
            schema.parametric = v.clone();
        }
        if let Some(v) = &self.network {
            schema.network = v.clone();
        }
        Ok(schema)
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn derived(base: &Path, extension: &str) -> String {
    path_str(&base.with_extension(extension))
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Validated dataset in the canonical comma-separated layout.
    #[arg(long)]
    output: PathBuf,
    /// Descriptive summary; defaults to `<output stem>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    individuals: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    first_period: Option<i64>,
    #[arg(long)]
    parametric_count: Option<usize>,
    #[arg(long)]
    network_count: Option<usize>,
    /// Linear coefficients, comma separated.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// none, sine, quadratic or interaction.
    #[arg(long)]
    nonlinearity: Option<Nonlinearity>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// normal, or t<df> such as t3.
    #[arg(long)]
    noise: Option<NoiseLaw>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    alpha_mean: Option<f64>,
    #[arg(long)]
    alpha_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TauRule {
    /// `(2k+1)/(2K)`; K = 50 gives 0.01, 0.03, ..., 0.99.
    Midpoints,
    /// `k/(K+1)`; K = 9 gives 0.1, ..., 0.9.
    Interior,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value = "1")]
    scenario: Scenario,
    /// psqrnn, linear or qrnn.
    #[arg(long, default_value = "psqrnn")]
    kind: ModelKind,
    /// A count K (grid from --tau-rule) or an explicit comma-separated list.
    /// Defaults to 50 midpoints, or 0.5 alone for qrnn.
    #[arg(long)]
    taus: Option<String>,
    #[arg(long, value_enum, default_value = "midpoints")]
    tau_rule: TauRule,
    /// Fit one model per τ instead of one composite model.
    #[arg(long)]
    per_tau: bool,
    /// Hidden layer sizes, `n1` or `n1,n2`.
    #[arg(long, value_delimiter = ',', default_value = "10,5")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "elu")]
    activation: Activation,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit on raw units instead of training-side z-scores.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    eps_start: Option<f64>,
    #[arg(long)]
    eps_end: Option<f64>,
    #[arg(long)]
    eps_factor: Option<f64>,
    /// Optimizer iterations per smoothing stage.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Use fixed-step gradient descent with this step instead of L-BFGS.
    #[arg(long)]
    gd_step: Option<f64>,
    /// Disable data-parallel evaluation.
    #[arg(long)]
    sequential: bool,
}

fn parse_taus(spec: Option<&str>, rule: TauRule, kind: ModelKind) -> Result<TauGrid> {
    let Some(spec) = spec else {
        return if kind == ModelKind::Qrnn { TauGrid::single(0.5) } else { TauGrid::midpoints(50) };
    };
    let spec = spec.trim();
    if !spec.contains(',') && !spec.contains('.') {
        let k: usize = spec
            .parse()
            .map_err(|_| Error::Config(format!("--taus expects a count or a list of levels (got '{spec}')")))?;
        return match rule {
            TauRule::Midpoints => TauGrid::midpoints(k),
            TauRule::Interior => TauGrid::interior(k),
        };
    }
    let taus = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse quantile level '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    TauGrid::uniform(taus)
}

impl ModelArgs {
    fn pipeline(&self) -> Result<PipelineConfig> {
        let defaults = TrainConfig::default();
        let schedule = AnnealSchedule::default();
        let penalties = PenaltyConfig::default();
        let config = PipelineConfig {
            kind: self.kind,
            scenario: self.scenario,
            grid: parse_taus(self.taus.as_deref(), self.tau_rule, self.kind)?,
            per_tau: self.per_tau,
            hidden_sizes: self.hidden.clone(),
            activation: self.activation,
            penalties: PenaltyConfig::new(
                self.lambda1.unwrap_or(penalties.lambda1),
                self.lambda2.unwrap_or(penalties.lambda2),
            )?,
            train: TrainConfig {
                schedule: AnnealSchedule::new(
                    self.eps_start.unwrap_or(schedule.eps_start),
                    self.eps_end.unwrap_or(schedule.eps_end),
                    self.eps_factor.unwrap_or(schedule.factor),
                )?,
                restarts: self.restarts.unwrap_or(defaults.restarts),
                max_iters_per_stage: self.max_iters.unwrap_or(defaults.max_iters_per_stage),
                grad_tol: self.grad_tol.unwrap_or(defaults.grad_tol),
                seed: self.seed,
                optimizer: match self.gd_step {
                    Some(step) => Optimizer::GradientDescent { step },
                    None => defaults.optimizer,
                },
                execution: if self.sequential { Execution::Sequential } else { Execution::Parallel },
            },
            standardize: !self.no_standardize,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Fit artifact (JSON).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GridSearchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Artifact of the selected fit (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Selection table; defaults to `<output stem>.table.csv`.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    grid_n1: Vec<usize>,
    /// Second-layer sizes; omit for single-hidden-layer networks.
    #[arg(long, value_delimiter = ',')]
    grid_n2: Vec<usize>,
    /// Defaults to the single --lambda1 value.
    #[arg(long, value_delimiter = ',')]
    grid_lambda1: Vec<f64>,
    /// Defaults to the single --lambda2 value.
    #[arg(long, value_delimiter = ',')]
    grid_lambda2: Vec<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Fit artifact from `train` or `grid-search`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset holding the observed responses.
    #[arg(long)]
    actuals: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    column: Option<String>,
    /// Report (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Long-format series; defaults to `<output stem>.series.csv`.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Per-individual table with mean, std-dev and total rows; defaults to
    /// `<output stem>.table.csv`.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A JSON artifact, or a delimited output with a `.meta.json` sidecar.
    #[arg(long)]
    artifact: PathBuf,
    /// Compare the re-run outputs with the files on disk instead of writing.
    #[arg(long)]
    verify: bool,
}

fn resolve(command: &Command) -> Result<RunConfig> {
    Ok(match command {
        Command::Ingest(a) => {
            let input = path_str(&a.input);
            RunConfig::Ingest(IngestRun {
                schema: a.schema.resolve(&input)?,
                input,
                delimiter: a.delimiter,
                output: path_str(&a.output),
                summary: a.summary.as_deref().map(path_str).unwrap_or_else(|| derived(&a.output, "summary.json")),
            })
        }
        Command::Synth(a) => {
            let d = SyntheticConfig::default();
            let generator = SyntheticConfig {
                n_individuals: a.individuals.unwrap_or(d.n_individuals),
                n_periods: a.periods.unwrap_or(d.n_periods),
                first_period: a.first_period.unwrap_or(d.first_period),
                n_parametric: a.parametric_count.unwrap_or(d.n_parametric),
                n_network: a.network_count.unwrap_or(d.n_network),
                beta: a.beta.clone(),
                nonlinearity: a.nonlinearity.unwrap_or(d.nonlinearity),
                amplitude: a.amplitude.unwrap_or(d.amplitude),
                noise: a.noise.unwrap_or(d.noise),
                noise_scale: a.noise_scale.unwrap_or(d.noise_scale),
                alpha_mean: a.alpha_mean.unwrap_or(d.alpha_mean),
                alpha_scale: a.alpha_scale.unwrap_or(d.alpha_scale),
            };
            generator.validate()?;
            RunConfig::Synth(SynthRun { generator, seed: a.seed, output: path_str(&a.output) })
        }
        Command::Train(a) => {
            let input = path_str(&a.model.input);
            RunConfig::Train(TrainRun {
                schema: a.model.schema.resolve(&input)?,
                input,
                pipeline: a.model.pipeline()?,
                output: path_str(&a.output),
            })
        }
        Command::GridSearch(a) => {
            let input = path_str(&a.model.input);
            let pipeline = a.model.pipeline()?;
            let or_single = |v: &Vec<f64>, single: f64| if v.is_empty() { vec![single] } else { v.clone() };
            let grid = SearchGrid {
                n1_values: a.grid_n1.clone(),
                n2_values: a.grid_n2.clone(),
                lambda1_values: or_single(&a.grid_lambda1, pipeline.penalties.lambda1),
                lambda2_values: or_single(&a.grid_lambda2, pipeline.penalties.lambda2),
            };
            grid.validate()?;
            RunConfig::GridSearch(GridSearchRun {
                schema: a.model.schema.resolve(&input)?,
                input,
                pipeline,
                grid,
                output: path_str(&a.output),
                table: a.table.as_deref().map(path_str).unwrap_or_else(|| derived(&a.output, "table.csv")),
            })
        }
        Command::Predict(a) => {
            let input = path_str(&a.input);
            RunConfig::Predict(PredictRun {
                model: path_str(&a.model),
                schema: a.schema.resolve(&input)?,
                input,
                output: path_str(&a.output),
            })
        }
        Command::Evaluate(a) => {
            let actuals = path_str(&a.actuals);
            RunConfig::Evaluate(EvaluateRun {
                predictions: path_str(&a.predictions),
                schema: a.schema.resolve(&actuals)?,
                actuals,
                column: a.column.clone(),
                output: path_str(&a.output),
                series: a.series.as_deref().map(path_str).unwrap_or_else(|| derived(&a.output, "series.csv")),
                table: a.table.as_deref().map(path_str).unwrap_or_else(|| derived(&a.output, "table.csv")),
            })
        }
        Command::Replay(_) => unreachable!("replay is handled before resolution"),
    })
}

fn describe_outputs(files: &[OutputFile]) {
    for f in files {
        println!("wrote {} ({} bytes)", f.path.display(), f.bytes.len());
    }
}

fn run_command(command: Command) -> Result<()> {
    if let Command::Replay(a) = &command {
        let config = embedded_config(&path_str(&a.artifact))?;
        let files = execute(&config)?;
        if a.verify {
            let differing = differing_outputs(&files);
            if !differing.is_empty() {
                let list: Vec<String> = differing.iter().map(|p| p.display().to_string()).collect();
                return Err(Error::Numeric(format!("replay differs from {}", list.join(", "))));
            }
            println!("replay identical: {} files", files.len());
            return Ok(());
        }
        write_outputs(&files)?;
        describe_outputs(&files);
        return Ok(());
    }
    let config = resolve(&command)?;
    let files = execute(&config)?;
    write_outputs(&files)?;
    describe_outputs(&files);
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // Printing can only fail on a closed stream, which leaves nothing to report to.
            e.print().ok();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
