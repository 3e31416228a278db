//! Subcommand implementations and the mapping from library errors to exit codes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use chrono::Utc;
use serde::Serialize;

use inspectlens_core::datastore::{self, DatastoreError, RecordFormat};
use inspectlens_core::metrics::{project_report, MetricsError, ProjectRecord, ProjectReport};
use inspectlens_core::planner::{self, PlannerError, ScanRequest, TuneRequest, TuneResult};
use inspectlens_core::regression::{
    self, CoefficientSet, ModelKind, Observation, RegressionError, Regressor, RegressorVector,
};
use inspectlens_service::{ApiState, FitResponse, ScanResponse, ServiceConfig};

use crate::args::{
    Cli, Command, FitArgs, InputArgs, InputFormat, MetricsArgs, OutputFormat, PredictArgs,
    RegressorFlags, ReportGranularity, ScanArgs, ServeArgs, TuneArgs,
};
use crate::render::{exact, fixed, opt_display, Table};

/// Bad input, failed validation, or wrong arity.
pub const EXIT_INPUT: u8 = 2;
/// Too few rows for the requested model.
pub const EXIT_INSUFFICIENT_DATA: u8 = 3;
/// The numbers do not admit an answer (rank deficiency, non-finite values, zero slope).
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        let code = match e {
            RegressionError::InsufficientRows { .. } => EXIT_INSUFFICIENT_DATA,
            RegressionError::RankDeficient { .. }
            | RegressionError::NonFinite(_)
            | RegressionError::DiagnosticsMismatch(_) => EXIT_NUMERICAL,
            RegressionError::ArityMismatch(_)
            | RegressionError::ShapeMismatch(_)
            | RegressionError::Metrics(_) => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Regression(inner) => inner.into(),
            PlannerError::UnsolvableParameter { .. } => CliError {
                code: EXIT_NUMERICAL,
                message: e.to_string(),
            },
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<DatastoreError> for CliError {
    fn from(e: DatastoreError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult {
    let ctx = Context {
        format: cli.format,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Metrics(a) => metrics(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Tune(a) => tune(&ctx, a),
        Command::Scan(a) => scan(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

struct Context {
    format: OutputFormat,
    quiet: bool,
}

impl Context {
    fn warn(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }

    fn json<T: Serialize>(&self, value: &T) -> CliResult {
        let mut out = io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
        Ok(())
    }

    fn table(&self, table: &Table) -> CliResult {
        let mut out = io::stdout().lock();
        match self.format {
            OutputFormat::Csv => table.write_csv(&mut out)?,
            _ => table.write_text(&mut out)?,
        }
        Ok(())
    }
}

fn record_format(path: &Path, explicit: Option<InputFormat>) -> RecordFormat {
    match explicit {
        Some(InputFormat::Csv) => RecordFormat::Csv,
        Some(InputFormat::Json) => RecordFormat::Json,
        None => RecordFormat::from_path(path),
    }
}

/// Records from a file, or the bundled dataset with synthesized counts.
fn load_input(input: &InputArgs) -> CliResult<Vec<ProjectRecord>> {
    match &input.input {
        Some(path) if !input.fixture => Ok(datastore::load_records(
            path,
            record_format(path, input.input_format),
        )?),
        _ => Ok(datastore::load_fixture()?
            .iter()
            .map(datastore::FixtureRow::to_record)
            .collect()),
    }
}

fn reports(
    records: &[ProjectRecord],
    args_mode: crate::args::Aggregation,
) -> CliResult<Vec<ProjectReport>> {
    records
        .iter()
        .map(|r| project_report(r, args_mode.into()).map_err(CliError::from))
        .collect()
}

fn metrics(ctx: &Context, args: &MetricsArgs) -> CliResult {
    let records = load_input(&args.input)?;
    let reports = reports(&records, args.aggregation)?;
    for rep in &reports {
        for phase in &rep.phases {
            if let Some(w) = &phase.warning {
                ctx.warn(format_args!(
                    "project {} phase {}: {w}",
                    rep.project_id, phase.phase
                ));
            }
        }
    }
    if ctx.format == OutputFormat::Json {
        return ctx.json(&reports);
    }
    let csv = ctx.format == OutputFormat::Csv;
    let num = |v: Option<f64>| if csv { exact(v) } else { fixed(v, 4) };
    let table = match args.granularity {
        ReportGranularity::Phase => {
            let mut t = Table::new(["project_id", "phase", "di", "di_band", "ipm"]);
            for rep in &reports {
                for p in &rep.phases {
                    t.push(vec![
                        rep.project_id.clone(),
                        p.phase.to_string(),
                        num(p.di),
                        opt_display(p.di_band),
                        num(Some(p.ipm)),
                    ]);
                }
            }
            t
        }
        ReportGranularity::Project => {
            let mut t = Table::new(["project_id", "avg_di", "avg_di_band", "avg_ipm", "partial"]);
            for rep in &reports {
                t.push(vec![
                    rep.project_id.clone(),
                    num(rep.avg_di),
                    opt_display(rep.avg_di_band),
                    num(Some(rep.avg_ipm)),
                    rep.partial.to_string(),
                ]);
            }
            t
        }
    };
    ctx.table(&table)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    project_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_person_hours: Option<f64>,
    avg_di: Option<f64>,
    avg_di_band: Option<String>,
    avg_ipm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tc_pct: Option<f64>,
    partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    published_avg_di: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    published_avg_ipm: Option<f64>,
}

fn report(ctx: &Context, input: &InputArgs) -> CliResult {
    let (records, published) = if input.fixture || input.input.is_none() {
        let rows = datastore::load_fixture()?;
        let published: Vec<_> = rows.iter().map(|r| Some((r.avg_di, r.avg_ipm))).collect();
        (
            rows.iter().map(datastore::FixtureRow::to_record).collect(),
            published,
        )
    } else {
        let records = load_input(input)?;
        let n = records.len();
        (records, vec![None; n])
    };
    let reports = reports(&records, crate::args::Aggregation::Mean)?;
    let rows: Vec<ReportRow> = records
        .iter()
        .zip(&reports)
        .zip(published)
        .map(|((rec, rep), pub_avg)| ReportRow {
            project_id: rep.project_id.clone(),
            total_person_hours: rec.total_person_hours,
            avg_di: rep.avg_di,
            avg_di_band: rep.avg_di_band.map(|b| b.to_string()),
            avg_ipm: rep.avg_ipm,
            tc_pct: rec.total_captured_pct,
            partial: rep.partial,
            published_avg_di: pub_avg.map(|p| p.0),
            published_avg_ipm: pub_avg.map(|p| p.1),
        })
        .collect();
    for row in rows.iter().filter(|r| r.partial) {
        ctx.warn(format_args!(
            "project {}: some phases have no DI and were left out of the average",
            row.project_id
        ));
    }
    if ctx.format == OutputFormat::Json {
        return ctx.json(&rows);
    }
    let csv = ctx.format == OutputFormat::Csv;
    let num = |v: Option<f64>, places| if csv { exact(v) } else { fixed(v, places) };
    let with_published = rows.iter().any(|r| r.published_avg_di.is_some());
    let mut header = vec![
        "project_id",
        "hours",
        "avg_di",
        "band",
        "avg_ipm",
        "tc_pct",
        "partial",
    ];
    if with_published {
        header.extend(["published_avg_di", "published_avg_ipm"]);
    }
    let mut t = Table::new(header);
    for r in &rows {
        let mut cells = vec![
            r.project_id.clone(),
            num(r.total_person_hours, 0),
            num(r.avg_di, 4),
            r.avg_di_band.clone().unwrap_or_default(),
            num(Some(r.avg_ipm), 4),
            num(r.tc_pct, 1),
            r.partial.to_string(),
        ];
        if with_published {
            cells.push(num(r.published_avg_di, 2));
            cells.push(num(r.published_avg_ipm, 2));
        }
        t.push(cells);
    }
    ctx.table(&t)
}

/// Header of a CSV file that holds regression rows directly.
const OBSERVATION_COLUMNS: [&str; 6] = ["project_id", "y", "x1", "x2", "x3", "x4"];

fn is_observation_csv(text: &str) -> bool {
    let first = text.lines().next().unwrap_or_default();
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    cols.len() >= 2 && cols[..2] == OBSERVATION_COLUMNS[..2]
}

fn parse_observations_csv(text: &str, model: ModelKind) -> CliResult<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("observations CSV: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = match model {
        ModelKind::Process => OBSERVATION_COLUMNS.to_vec(),
        ModelKind::Team => OBSERVATION_COLUMNS.iter().copied().chain(["x5"]).collect(),
    };
    if header != expected {
        return Err(CliError::input(format!(
            "observations CSV header for the {model} model must be `{}`, got `{}`",
            expected.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let mut nums = Vec::with_capacity(expected.len() - 1);
        for (col, cell) in expected.iter().zip(row.iter()).skip(1) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => nums.push(v),
                _ => problems.push(format!(
                    "line {line}, field {col}: {cell:?} is not a finite number"
                )),
            }
        }
        if nums.len() != expected.len() - 1 {
            continue;
        }
        out.push(Observation {
            source: row[0].to_string(),
            y: nums[0],
            x: RegressorVector {
                x1: nums[1],
                x2: nums[2],
                x3: nums[3],
                x4: nums[4],
                x5: nums.get(5).copied(),
            },
        });
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(CliError::input(problems.join("; ")))
    }
}

fn fit(ctx: &Context, args: &FitArgs) -> CliResult {
    let model: ModelKind = args.model.into();
    let format = record_format(&args.input, args.input_format);
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::input(format!("{}: {e}", args.input.display())))?;
    let observations = if format == RecordFormat::Csv && is_observation_csv(&text) {
        parse_observations_csv(&text, model)?
    } else {
        let records = match format {
            RecordFormat::Csv => datastore::parse_records_csv(&text)?,
            RecordFormat::Json => datastore::parse_records_json(&text)?,
        };
        regression::observations_from_records(&records, model, args.granularity.into())?
    };
    let dm = regression::build_design_matrix(observations, model)?;
    let set = regression::fit_least_squares_at(&dm, args.fitted_at.unwrap_or_else(Utc::now))?;
    datastore::save_coefficients(&set, &args.out)?;

    let warnings = set.diagnostics.warnings();
    for w in &warnings {
        ctx.warn(w);
    }
    let response = FitResponse {
        coeff_id: set.content_id(),
        model: set.model,
        betas: set.betas.clone(),
        diagnostics: set.diagnostics.clone(),
        warnings,
    };
    match ctx.format {
        OutputFormat::Json => ctx.json(&response),
        OutputFormat::Csv => {
            let mut t = Table::new(["term", "beta"]);
            for (j, b) in set.betas.iter().enumerate() {
                t.push(vec![dm.column_name(j), b.to_string()]);
            }
            ctx.table(&t)
        }
        OutputFormat::Table => {
            let d = &set.diagnostics;
            let mut out = io::stdout().lock();
            writeln!(
                out,
                "model: {}  rows: {}  coeff_id: {}",
                set.model,
                d.residuals.len(),
                response.coeff_id
            )?;
            let mut t = Table::new(["term", "beta"]);
            for (j, b) in set.betas.iter().enumerate() {
                t.push(vec![dm.column_name(j), b.to_string()]);
            }
            t.write_text(&mut out)?;
            writeln!(out, "SSE                 {:.6e}", d.sse)?;
            writeln!(out, "R²                  {:.6}", d.r_squared)?;
            writeln!(out, "condition estimate  {:.6e}", d.condition_estimate)?;
            writeln!(out, "degrees of freedom  {}", d.degrees_of_freedom)?;
            writeln!(out, "written to {}", args.out.display())?;
            Ok(())
        }
    }
}

fn flag_name(r: Regressor) -> &'static str {
    match r {
        Regressor::InspectionTime => "--x1",
        Regressor::PrepTime => "--x2",
        Regressor::Inspectors => "--x3",
        Regressor::Experience => "--x4",
        Regressor::LogFunctionPoints => "--x5 (or --function-points)",
    }
}

/// Values for every regressor of `model` except `free`, read from the flags.
fn fixed_values(
    model: ModelKind,
    flags: &RegressorFlags,
    free: Option<Regressor>,
) -> CliResult<BTreeMap<Regressor, f64>> {
    if let Some(fp) = flags.function_points {
        if !(fp.is_finite() && fp > 0.0) {
            return Err(CliError::input(format!(
                "--function-points must be positive, got {fp}"
            )));
        }
    }
    let extra: Vec<&str> = Regressor::ALL
        .iter()
        .filter(|r| !model.regressors().contains(r) && flags.get(**r).is_some())
        .map(|r| flag_name(*r))
        .collect();
    if !extra.is_empty() {
        return Err(CliError::input(format!(
            "{} not used by the {model} model",
            extra.join(", ")
        )));
    }
    if let Some(free) = free {
        if flags.get(free).is_some() {
            return Err(CliError::input(format!(
                "{} is the parameter being solved for; leave it out",
                flag_name(free)
            )));
        }
    }
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for &r in model.regressors() {
        if Some(r) == free {
            continue;
        }
        match flags.get(r) {
            Some(v) if v.is_finite() => {
                values.insert(r, v);
            }
            Some(v) => {
                return Err(CliError::input(format!(
                    "{} must be finite, got {v}",
                    flag_name(r)
                )))
            }
            None => missing.push(flag_name(r)),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::input(format!(
            "missing required flags for the {model} model: {}",
            missing.join(", ")
        )));
    }
    Ok(values)
}

fn load_coefficients(path: &Path) -> CliResult<CoefficientSet> {
    let set = datastore::load_coefficients(path)?;
    set.check_arity()?;
    Ok(set)
}

fn predict(ctx: &Context, args: &PredictArgs) -> CliResult {
    let set = load_coefficients(&args.coeffs)?;
    let values = fixed_values(set.model, &args.x, None)?;
    let mut x = RegressorVector {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
        x4: 0.0,
        x5: None,
    };
    for (r, v) in values {
        x.set(r, v);
    }
    for v in x.domain_violations() {
        ctx.warn(v);
    }
    let result = regression::predict(&set, &x)?;
    if result.out_of_range {
        ctx.warn(format_args!(
            "prediction {} is outside the metric's range",
            result.y_raw
        ));
    }
    if ctx.format == OutputFormat::Json {
        return ctx.json(&result);
    }
    let csv = ctx.format == OutputFormat::Csv;
    let num = |v: Option<f64>| if csv { exact(v) } else { fixed(v, 6) };
    let mut t = Table::new(["y_raw", "y_clamped", "band", "out_of_range"]);
    t.push(vec![
        num(Some(result.y_raw)),
        num(result.y_clamped),
        opt_display(result.band),
        result.out_of_range.to_string(),
    ]);
    ctx.table(&t)
}

fn tune(ctx: &Context, args: &TuneArgs) -> CliResult {
    let set = load_coefficients(&args.coeffs)?;
    let fixed_map = fixed_values(set.model, &args.x, Some(args.solve_for))?;
    let result: TuneResult = planner::solve_parameter(
        &set,
        &TuneRequest {
            target_y: args.target,
            solve_for: args.solve_for,
            fixed: fixed_map,
        },
    )?;
    for reason in &result.reasons {
        ctx.warn(format_args!("infeasible: {reason}"));
    }
    if ctx.format == OutputFormat::Json {
        return ctx.json(&result);
    }
    let csv = ctx.format == OutputFormat::Csv;
    let num = |v: f64| {
        if csv {
            v.to_string()
        } else {
            format!("{v:.6}")
        }
    };
    let mut t = Table::new(["kind", "parameter", "value", "y_raw", "band", "feasible"]);
    t.push(vec![
        "solution".to_string(),
        result.solve_for.to_string(),
        num(result.value),
        num(args.target),
        opt_display(result.band),
        result.feasible.to_string(),
    ]);
    for c in result.integer_candidates.iter().flatten() {
        t.push(vec![
            "integer".to_string(),
            result.solve_for.to_string(),
            num(c.value),
            num(c.y_raw),
            opt_display(c.band),
            c.feasible.to_string(),
        ]);
    }
    ctx.table(&t)
}

fn scan(ctx: &Context, args: &ScanArgs) -> CliResult {
    let set = load_coefficients(&args.coeffs)?;
    let fixed_map = fixed_values(set.model, &args.x, Some(args.vary))?;
    let points = planner::scan(
        &set,
        &ScanRequest {
            vary: args.vary,
            min: args.min,
            max: args.max,
            step: args.step,
            fixed: fixed_map,
        },
    )?;
    if ctx.format == OutputFormat::Json {
        return ctx.json(&ScanResponse { points });
    }
    let csv = ctx.format == OutputFormat::Csv;
    let num = |v: Option<f64>| if csv { exact(v) } else { fixed(v, 6) };
    let mut t = Table::new(["value", "y_raw", "band"]);
    for p in &points {
        t.push(vec![
            exact(Some(p.value)),
            num(Some(p.prediction.y_raw)),
            opt_display(p.prediction.band),
        ]);
    }
    ctx.table(&t)
}

fn serve(ctx: &Context, args: &ServeArgs) -> CliResult {
    let state = Arc::new(ApiState::new());
    for path in &args.coeffs {
        let (id, set) = state.register(load_coefficients(path)?);
        if !ctx.quiet {
            eprintln!(
                "registered {} ({} model) as {id}",
                path.display(),
                set.model
            );
        }
    }
    let config = ServiceConfig {
        cors_origin: args.cors_origin.clone(),
    };
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(inspectlens_service::serve(addr, state, config))?;
    Ok(())
}
