use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use inspectlens_core::metrics::AggregationMode;
use inspectlens_core::regression::{Granularity, ModelKind, Regressor};

#[derive(Debug, Parser)]
#[command(
    name = "inspectlens",
    version,
    about = "Inspection depth and performance analytics"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,

    /// Suppress warnings and informational output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-phase or per-project DI, IPM and bands.
    Metrics(MetricsArgs),
    /// Fit process or team coefficients and write a coefficient file.
    Fit(FitArgs),
    /// Predict DI or IPM for one parameter vector.
    Predict(PredictArgs),
    /// Solve for one parameter that reaches a target value.
    Tune(TuneArgs),
    /// Sweep one parameter over a range.
    Scan(ScanArgs),
    /// Project summary; with --fixture, recomputed vs published averages.
    Report(InputArgs),
    /// Run the JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Records file (CSV or JSON).
    #[arg(required_unless_present = "fixture")]
    pub input: Option<PathBuf>,

    /// Use the bundled published-metrics dataset instead of a file.
    #[arg(long, conflicts_with = "input")]
    pub fixture: bool,

    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportGranularity {
    Phase,
    Project,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Aggregation {
    Mean,
    Pooled,
}

impl From<Aggregation> for AggregationMode {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Mean => AggregationMode::MeanOfPhases,
            Aggregation::Pooled => AggregationMode::PooledCounts,
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_enum, default_value_t = ReportGranularity::Phase)]
    pub granularity: ReportGranularity,

    /// How phase values roll up to a project value.
    #[arg(long, value_enum, default_value_t = Aggregation::Mean)]
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Process,
    Team,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Process => ModelKind::Process,
            Model::Team => ModelKind::Team,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitGranularity {
    Project,
    Phase,
}

impl From<FitGranularity> for Granularity {
    fn from(g: FitGranularity) -> Self {
        match g {
            FitGranularity::Project => Granularity::Project,
            FitGranularity::Phase => Granularity::Phase,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Records file, or an observations CSV with header `project_id,y,x1,x2,x3,x4[,x5]`.
    pub input: PathBuf,

    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,

    #[arg(long, value_enum)]
    pub model: Model,

    /// Row granularity when fitting from records.
    #[arg(long, value_enum, default_value_t = FitGranularity::Project)]
    pub granularity: FitGranularity,

    /// Where to write the coefficient file.
    #[arg(long)]
    pub out: PathBuf,

    /// Fit timestamp to record instead of the current time (RFC 3339).
    #[arg(long)]
    pub fitted_at: Option<DateTime<Utc>>,
}

/// Regressor values given on the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct RegressorFlags {
    /// Inspection time per inspector, person-hours.
    #[arg(long, allow_negative_numbers = true)]
    pub x1: Option<f64>,
    /// Preparation time per inspector, person-hours.
    #[arg(long, allow_negative_numbers = true)]
    pub x2: Option<f64>,
    /// Number of inspectors.
    #[arg(long, allow_negative_numbers = true)]
    pub x3: Option<f64>,
    /// Inspector experience, years.
    #[arg(long, allow_negative_numbers = true)]
    pub x4: Option<f64>,
    /// Log10 of function points (team model).
    #[arg(
        long,
        allow_negative_numbers = true,
        conflicts_with = "function_points"
    )]
    pub x5: Option<f64>,
    /// Function points; converted to x5 on the log scale.
    #[arg(long)]
    pub function_points: Option<f64>,
}

impl RegressorFlags {
    pub fn get(&self, r: Regressor) -> Option<f64> {
        match r {
            Regressor::InspectionTime => self.x1,
            Regressor::PrepTime => self.x2,
            Regressor::Inspectors => self.x3,
            Regressor::Experience => self.x4,
            Regressor::LogFunctionPoints => self.x5.or_else(|| {
                self.function_points
                    .map(inspectlens_core::regression::log_function_points)
            }),
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Coefficient file written by `fit`.
    #[arg(long)]
    pub coeffs: PathBuf,

    #[command(flatten)]
    pub x: RegressorFlags,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub coeffs: PathBuf,

    /// Target DI (process model) or IPM (team model).
    #[arg(long, allow_negative_numbers = true)]
    pub target: f64,

    /// Regressor to solve for (x1..x5).
    #[arg(long, value_parser = parse_regressor)]
    pub solve_for: Regressor,

    #[command(flatten)]
    pub x: RegressorFlags,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub coeffs: PathBuf,

    /// Regressor to vary (x1..x5).
    #[arg(long, value_parser = parse_regressor)]
    pub vary: Regressor,

    #[arg(long, allow_negative_numbers = true)]
    pub min: f64,

    #[arg(long, allow_negative_numbers = true)]
    pub max: f64,

    #[arg(long)]
    pub step: f64,

    #[command(flatten)]
    pub x: RegressorFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,

    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,

    /// Coefficient files to register at startup.
    #[arg(long)]
    pub coeffs: Vec<PathBuf>,

    /// Allow cross-origin requests from this origin (`*` for any).
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn parse_regressor(s: &str) -> Result<Regressor, String> {
    s.parse()
}
