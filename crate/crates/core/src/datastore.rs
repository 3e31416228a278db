//! Flat-file persistence: shop-floor project records (CSV or JSON), the
//! bundled published-metrics fixture, and fitted coefficient sets.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{DefectCounts, InspectionSession, Phase, PhaseObservation, ProjectRecord};
use crate::regression::{CoefficientSet, FitDiagnostics, ModelKind};

pub const RECORDS_CSV_HEADER: [&str; 9] = [
    "project_id",
    "phase",
    "defects_inspection",
    "defects_total",
    "num_inspectors",
    "inspection_time_h",
    "prep_time_h",
    "experience_years",
    "function_points",
];

pub const FIXTURE_CSV_HEADER: [&str; 11] = [
    "project_id",
    "total_person_hours",
    "di_req",
    "di_des",
    "di_imp",
    "avg_di",
    "ipm_req",
    "ipm_des",
    "ipm_imp",
    "avg_ipm",
    "tc_pct",
];

pub const FIXTURE_FILE_NAME: &str = "inspection_fixture.csv";
pub const FIXTURE_DIR_ENV: &str = "INSPECTLENS_FIXTURE_DIR";
pub const FIXTURE_SHA256: &str = "2eaeee910e0394804f66c4e22473316f8ca0e78dae8384c70f6d57bfa48e72c4";
const BUNDLED_FIXTURE: &str = include_str!("../fixtures/inspection_fixture.csv");

pub const COEFFICIENT_SCHEMA_VERSION: u32 = 1;

/// One broken invariant, located by line (CSV) or project index (JSON) and field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, field {}: {}",
            self.location, self.field, self.message
        )
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation error(s): {}", .0.len(), join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("fixture corrupt: {0}")]
    FixtureCorrupt(String),
    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatastoreError + '_ {
    move |source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Json,
}

impl RecordFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => RecordFormat::Json,
            _ => RecordFormat::Csv,
        }
    }
}

pub fn load_records(
    path: &Path,
    format: RecordFormat,
) -> Result<Vec<ProjectRecord>, DatastoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    match format {
        RecordFormat::Csv => parse_records_csv(&text),
        RecordFormat::Json => parse_records_json(&text),
    }
}

pub fn save_records(
    path: &Path,
    records: &[ProjectRecord],
    format: RecordFormat,
) -> Result<(), DatastoreError> {
    let text = match format {
        RecordFormat::Csv => records_to_csv(records)?,
        RecordFormat::Json => records_to_json(records)?,
    };
    fs::write(path, text).map_err(io_err(path))
}

struct RowChecker<'a> {
    location: String,
    fields: &'a csv::StringRecord,
    violations: &'a mut Vec<Violation>,
}

impl RowChecker<'_> {
    fn fail(&mut self, field: &str, message: String) {
        self.violations.push(Violation {
            location: self.location.clone(),
            field: field.to_string(),
            message,
        });
    }

    fn raw(&self, idx: usize) -> &str {
        self.fields.get(idx).unwrap_or("").trim()
    }

    fn parse<T: std::str::FromStr>(&mut self, idx: usize, what: &str) -> Option<T> {
        let raw = self.raw(idx).to_string();
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.fail(
                    RECORDS_CSV_HEADER[idx],
                    format!("expected {what}, got {raw:?}"),
                );
                None
            }
        }
    }

    fn real(&mut self, idx: usize, ok: impl Fn(f64) -> bool, rule: &str) -> Option<f64> {
        let v = self.parse::<f64>(idx, "a number")?;
        if v.is_finite() && ok(v) {
            Some(v)
        } else {
            self.fail(RECORDS_CSV_HEADER[idx], format!("must be {rule}, got {v}"));
            None
        }
    }
}

/// Parses the one-row-per-(project, phase) CSV. Every violation in the file
/// is collected before failing.
pub fn parse_records_csv(text: &str) -> Result<Vec<ProjectRecord>, DatastoreError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DatastoreError::Parse(e.to_string()))?
        .clone();
    if header.iter().ne(RECORDS_CSV_HEADER) {
        return Err(DatastoreError::Parse(format!(
            "unexpected header {:?}, expected {}",
            header.iter().collect::<Vec<_>>().join(","),
            RECORDS_CSV_HEADER.join(",")
        )));
    }

    let mut violations = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, ProjectRecord> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| DatastoreError::Parse(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let mut c = RowChecker {
            location: format!("line {line}"),
            fields: &row,
            violations: &mut violations,
        };

        let id = c.raw(0).to_string();
        if id.is_empty() {
            c.fail("project_id", "must not be empty".to_string());
        }
        let phase = match c.raw(1).parse::<Phase>() {
            Ok(p) => Some(p),
            Err(msg) => {
                c.fail("phase", msg);
                None
            }
        };
        let found = c.parse::<u64>(2, "a non-negative integer");
        let total = c.parse::<u64>(3, "a non-negative integer");
        if let (Some(f), Some(t)) = (found, total) {
            if f > t {
                c.fail(
                    "defects_inspection",
                    format!("{f} exceeds defects_total {t}"),
                );
            }
        }
        let inspectors = c.parse::<u32>(4, "a positive integer");
        if inspectors == Some(0) {
            c.fail("num_inspectors", "must be at least 1".to_string());
        }
        let inspection_time = c.real(5, |v| v > 0.0, "positive");
        let prep_time = c.real(6, |v| v >= 0.0, "non-negative");
        let experience = c.real(7, |v| v >= 0.0, "non-negative");
        let function_points = c.real(8, |v| v > 0.0, "positive");

        let (
            Some(phase),
            Some(found),
            Some(total),
            Some(n),
            Some(it),
            Some(pt),
            Some(exp),
            Some(fp),
        ) = (
            phase,
            found,
            total,
            inspectors,
            inspection_time,
            prep_time,
            experience,
            function_points,
        )
        else {
            continue;
        };
        if id.is_empty() || found > total || n == 0 {
            continue;
        }
        let record = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            ProjectRecord {
                id: id.clone(),
                total_person_hours: None,
                total_captured_pct: None,
                phases: Vec::new(),
            }
        });
        if record.phases.iter().any(|o| o.phase == phase) {
            c.fail("phase", format!("project {id} already has a {phase} row"));
            continue;
        }
        record.phases.push(PhaseObservation {
            phase,
            counts: DefectCounts {
                inspection_found: found,
                total_found: total,
            },
            session: InspectionSession {
                num_inspectors: n,
                inspection_time: it,
                prep_time: pt,
                experience_level: exp,
                function_points: fp,
            },
        });
    }

    if !violations.is_empty() {
        return Err(DatastoreError::Validation(violations));
    }
    Ok(order
        .into_iter()
        .filter_map(|id| by_id.remove(&id))
        .collect())
}

pub fn records_to_csv(records: &[ProjectRecord]) -> Result<String, DatastoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| DatastoreError::Parse(e.to_string());
    w.write_record(RECORDS_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        for o in &r.phases {
            w.write_record([
                r.id.clone(),
                o.phase.code().to_string(),
                o.counts.inspection_found.to_string(),
                o.counts.total_found.to_string(),
                o.session.num_inspectors.to_string(),
                o.session.inspection_time.to_string(),
                o.session.prep_time.to_string(),
                o.session.experience_level.to_string(),
                o.session.function_points.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| DatastoreError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| DatastoreError::Parse(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonProject {
    project_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_person_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tc_pct: Option<f64>,
    phases: Vec<JsonPhase>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPhase {
    phase: Phase,
    defects_inspection: u64,
    defects_total: u64,
    num_inspectors: u32,
    inspection_time_h: f64,
    prep_time_h: f64,
    experience_years: f64,
    function_points: f64,
}

/// Parses a JSON array of projects, each nesting its phases.
pub fn parse_records_json(text: &str) -> Result<Vec<ProjectRecord>, DatastoreError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let projects: Vec<JsonProject> =
        serde_json::from_str(text).map_err(|e| DatastoreError::Parse(e.to_string()))?;
    let mut violations = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let records: Vec<ProjectRecord> = projects
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let location = format!("project #{} ({})", i + 1, p.project_id);
            if let Some(first) = seen.insert(p.project_id.clone(), i + 1) {
                violations.push(Violation {
                    location: location.clone(),
                    field: "project_id".to_string(),
                    message: format!("duplicate of project #{first}"),
                });
            }
            let record = ProjectRecord {
                id: p.project_id,
                total_person_hours: p.total_person_hours,
                total_captured_pct: p.tc_pct,
                phases: p
                    .phases
                    .into_iter()
                    .map(|ph| PhaseObservation {
                        phase: ph.phase,
                        counts: DefectCounts {
                            inspection_found: ph.defects_inspection,
                            total_found: ph.defects_total,
                        },
                        session: InspectionSession {
                            num_inspectors: ph.num_inspectors,
                            inspection_time: ph.inspection_time_h,
                            prep_time: ph.prep_time_h,
                            experience_level: ph.experience_years,
                            function_points: ph.function_points,
                        },
                    })
                    .collect(),
            };
            violations.extend(record.violations().into_iter().map(|message| Violation {
                location: location.clone(),
                field: "record".to_string(),
                message,
            }));
            record
        })
        .collect();
    if !violations.is_empty() {
        return Err(DatastoreError::Validation(violations));
    }
    Ok(records)
}

pub fn records_to_json(records: &[ProjectRecord]) -> Result<String, DatastoreError> {
    let projects: Vec<JsonProject> = records
        .iter()
        .map(|r| JsonProject {
            project_id: r.id.clone(),
            total_person_hours: r.total_person_hours,
            tc_pct: r.total_captured_pct,
            phases: r
                .phases
                .iter()
                .map(|o| JsonPhase {
                    phase: o.phase,
                    defects_inspection: o.counts.inspection_found,
                    defects_total: o.counts.total_found,
                    num_inspectors: o.session.num_inspectors,
                    inspection_time_h: o.session.inspection_time,
                    prep_time_h: o.session.prep_time,
                    experience_years: o.session.experience_level,
                    function_points: o.session.function_points,
                })
                .collect(),
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&projects)
        .map_err(|e| DatastoreError::Parse(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

/// One project's published DI and IPM values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub project_id: String,
    pub total_person_hours: f64,
    pub di_req: f64,
    pub di_des: f64,
    pub di_imp: f64,
    pub avg_di: f64,
    pub ipm_req: f64,
    pub ipm_des: f64,
    pub ipm_imp: f64,
    pub avg_ipm: f64,
    pub tc_pct: f64,
}

impl FixtureRow {
    pub fn di_phases(&self) -> [f64; 3] {
        [self.di_req, self.di_des, self.di_imp]
    }

    pub fn ipm_phases(&self) -> [f64; 3] {
        [self.ipm_req, self.ipm_des, self.ipm_imp]
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("di_req", self.di_req),
            ("di_des", self.di_des),
            ("di_imp", self.di_imp),
            ("avg_di", self.avg_di),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("ipm_req", self.ipm_req),
            ("ipm_des", self.ipm_des),
            ("ipm_imp", self.ipm_imp),
            ("avg_ipm", self.avg_ipm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name} = {v} is negative"));
            }
        }
        if !(0.0..=100.0).contains(&self.tc_pct) {
            out.push(format!("tc_pct = {} is outside [0, 100]", self.tc_pct));
        }
        if !(self.total_person_hours.is_finite() && self.total_person_hours > 0.0) {
            out.push(format!(
                "total_person_hours = {} is not positive",
                self.total_person_hours
            ));
        }
        out
    }

    /// A shop-floor record that reproduces this row's phase DI and IPM values.
    ///
    /// Only the metrics are published, so the counts and sessions are
    /// synthesized: 10,000 captured defects per phase, one inspector, no
    /// preparation time, and placeholder experience (0) and size (1 FP).
    pub fn to_record(&self) -> ProjectRecord {
        const TOTAL: u64 = 10_000;
        let phases = Phase::ALL
            .iter()
            .zip(self.di_phases().into_iter().zip(self.ipm_phases()))
            .map(|(&phase, (di, ipm))| {
                let found = (di * TOTAL as f64).round() as u64;
                let inspection_time = if found > 0 && ipm > 0.0 {
                    found as f64 / ipm
                } else {
                    1.0
                };
                PhaseObservation {
                    phase,
                    counts: DefectCounts {
                        inspection_found: found,
                        total_found: TOTAL,
                    },
                    session: InspectionSession {
                        num_inspectors: 1,
                        inspection_time,
                        prep_time: 0.0,
                        experience_level: 0.0,
                        function_points: 1.0,
                    },
                }
            })
            .collect();
        ProjectRecord {
            id: self.project_id.clone(),
            total_person_hours: Some(self.total_person_hours),
            total_captured_pct: Some(self.tc_pct),
            phases,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads the fixture from `$INSPECTLENS_FIXTURE_DIR` when set, otherwise the bundled copy.
pub fn load_fixture() -> Result<Vec<FixtureRow>, DatastoreError> {
    match std::env::var_os(FIXTURE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => load_fixture_from_dir(Path::new(&dir)),
        _ => parse_fixture(BUNDLED_FIXTURE.as_bytes()),
    }
}

pub fn load_fixture_from_dir(dir: &Path) -> Result<Vec<FixtureRow>, DatastoreError> {
    let path = dir.join(FIXTURE_FILE_NAME);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    parse_fixture(&bytes)
}

pub fn bundled_fixture_text() -> &'static str {
    BUNDLED_FIXTURE
}

/// Verifies the pinned checksum, then parses and validates all 15 rows.
pub fn parse_fixture(bytes: &[u8]) -> Result<Vec<FixtureRow>, DatastoreError> {
    let digest = sha256_hex(bytes);
    if digest != FIXTURE_SHA256 {
        return Err(DatastoreError::FixtureCorrupt(format!(
            "checksum {digest} does not match pinned {FIXTURE_SHA256}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| DatastoreError::FixtureCorrupt(e.to_string()))?;
    if header.iter().ne(FIXTURE_CSV_HEADER) {
        return Err(DatastoreError::FixtureCorrupt(
            "unexpected header".to_string(),
        ));
    }
    let rows: Vec<FixtureRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| DatastoreError::FixtureCorrupt(e.to_string()))?;
    if rows.len() != 15 {
        return Err(DatastoreError::FixtureCorrupt(format!(
            "expected 15 rows, found {}",
            rows.len()
        )));
    }
    let mut problems = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let expected_id = format!("P{}", i + 1);
        if row.project_id != expected_id {
            problems.push(format!(
                "row {} is {}, expected {expected_id}",
                i + 1,
                row.project_id
            ));
        }
        problems.extend(
            row.violations()
                .into_iter()
                .map(|m| format!("{}: {m}", row.project_id)),
        );
    }
    if !problems.is_empty() {
        return Err(DatastoreError::FixtureCorrupt(problems.join("; ")));
    }
    Ok(rows)
}

/// On-disk shape of a coefficient file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientFile {
    schema_version: u32,
    model: ModelKind,
    betas: Vec<f64>,
    fitted_from: Vec<String>,
    fitted_at: DateTime<Utc>,
    diagnostics: FitDiagnostics,
}

pub fn coefficients_to_json(coeffs: &CoefficientSet) -> Result<String, DatastoreError> {
    let file = CoefficientFile {
        schema_version: COEFFICIENT_SCHEMA_VERSION,
        model: coeffs.model,
        betas: coeffs.betas.clone(),
        fitted_from: coeffs.fitted_from.clone(),
        fitted_at: coeffs.fitted_at,
        diagnostics: coeffs.diagnostics.clone(),
    };
    let mut out =
        serde_json::to_string_pretty(&file).map_err(|e| DatastoreError::Parse(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

pub fn coefficients_from_json(text: &str) -> Result<CoefficientSet, DatastoreError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DatastoreError::Parse(e.to_string()))?;
    match value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(COEFFICIENT_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(DatastoreError::SchemaVersionMismatch(format!(
                "file has schema_version {v}, this build reads version {COEFFICIENT_SCHEMA_VERSION}"
            )))
        }
        None => {
            return Err(DatastoreError::SchemaVersionMismatch(
                "schema_version is missing or not an integer".to_string(),
            ))
        }
    }
    let file: CoefficientFile =
        serde_json::from_value(value).map_err(|e| DatastoreError::Parse(e.to_string()))?;
    if file.betas.len() != file.model.coefficient_count() {
        return Err(DatastoreError::SchemaVersionMismatch(format!(
            "{} model under schema_version {} has {} betas, file has {}",
            file.model,
            COEFFICIENT_SCHEMA_VERSION,
            file.model.coefficient_count(),
            file.betas.len()
        )));
    }
    let coeffs = CoefficientSet {
        model: file.model,
        betas: file.betas,
        fitted_from: file.fitted_from,
        fitted_at: file.fitted_at,
        diagnostics: file.diagnostics,
    };
    coeffs
        .check_arity()
        .map_err(|e| DatastoreError::Parse(e.to_string()))?;
    Ok(coeffs)
}

pub fn save_coefficients(coeffs: &CoefficientSet, path: &Path) -> Result<(), DatastoreError> {
    fs::write(path, coefficients_to_json(coeffs)?).map_err(io_err(path))
}

pub fn load_coefficients(path: &Path) -> Result<CoefficientSet, DatastoreError> {
    coefficients_from_json(&fs::read_to_string(path).map_err(io_err(path))?)
}
