//! Multiple linear regression models for predicting DI and IPM.
//!
//! The process model predicts DI from four inspection parameters; the team
//! model predicts IPM from the same four plus log-scaled project size.
//! Coefficients are fitted by least squares on a design matrix with a
//! leading intercept column.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{norm2, Matrix, PivotedQr};
use crate::metrics::{self, AggregationMode, BandLabel, InspectionSession, ProjectRecord};

/// Log base applied to function points for the size regressor.
pub const FUNCTION_POINT_LOG_BASE: f64 = 10.0;

/// A pivot below this fraction of the largest pivot counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Fits whose condition estimate exceeds this are flagged ill-conditioned.
pub const ILL_CONDITIONED_ABOVE: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("{model} model needs at least {required} rows, got {provided}")]
    InsufficientRows {
        model: ModelKind,
        required: usize,
        provided: usize,
    },
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),
    #[error(
        "design matrix is rank deficient: rank {rank} of {columns} columns (check column {column})"
    )]
    RankDeficient {
        rank: usize,
        columns: usize,
        column: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("stored diagnostics disagree with recomputed values: {0}")]
    DiagnosticsMismatch(String),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

/// Which regression model a coefficient set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Predicts DI from x1..x4.
    Process,
    /// Predicts IPM from x1..x5.
    Team,
}

impl ModelKind {
    pub fn regressor_count(self) -> usize {
        match self {
            ModelKind::Process => 4,
            ModelKind::Team => 5,
        }
    }

    /// Number of betas including the intercept.
    pub fn coefficient_count(self) -> usize {
        self.regressor_count() + 1
    }

    /// Smallest number of observations accepted for fitting.
    pub fn min_rows(self) -> usize {
        self.coefficient_count()
    }

    pub fn regressors(self) -> &'static [Regressor] {
        &Regressor::ALL[..self.regressor_count()]
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Process => "process",
            ModelKind::Team => "team",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "process" | "di" => Ok(ModelKind::Process),
            "team" | "ipm" => Ok(ModelKind::Team),
            other => Err(format!(
                "unknown model {other:?} (expected process or team)"
            )),
        }
    }
}

/// One inspection-influencing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regressor {
    /// Inspection time, person-hours.
    #[serde(rename = "x1")]
    InspectionTime,
    /// Preparation time, person-hours.
    #[serde(rename = "x2")]
    PrepTime,
    /// Number of inspectors.
    #[serde(rename = "x3")]
    Inspectors,
    /// Inspector experience, years.
    #[serde(rename = "x4")]
    Experience,
    /// Log-scaled function points.
    #[serde(rename = "x5")]
    LogFunctionPoints,
}

impl Regressor {
    pub const ALL: [Regressor; 5] = [
        Regressor::InspectionTime,
        Regressor::PrepTime,
        Regressor::Inspectors,
        Regressor::Experience,
        Regressor::LogFunctionPoints,
    ];

    /// 1-based position, matching the beta index.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn key(self) -> &'static str {
        ["x1", "x2", "x3", "x4", "x5"][self as usize]
    }

    pub fn description(self) -> &'static str {
        match self {
            Regressor::InspectionTime => "inspection time (person-hours)",
            Regressor::PrepTime => "preparation time (person-hours)",
            Regressor::Inspectors => "number of inspectors",
            Regressor::Experience => "inspector experience (years)",
            Regressor::LogFunctionPoints => "log10 of function points",
        }
    }

    /// Why `value` is outside this regressor's domain, if it is.
    pub fn domain_violation(self, value: f64) -> Option<String> {
        if !value.is_finite() {
            return Some(format!("{} is not finite", self.key()));
        }
        let ok = match self {
            Regressor::InspectionTime => value > 0.0,
            Regressor::PrepTime | Regressor::Experience => value >= 0.0,
            Regressor::Inspectors => value >= 1.0,
            Regressor::LogFunctionPoints => true,
        };
        (!ok).then(|| match self {
            Regressor::InspectionTime => {
                format!("x1 (inspection time) must be positive, got {value}")
            }
            Regressor::PrepTime => {
                format!("x2 (preparation time) must be non-negative, got {value}")
            }
            Regressor::Inspectors => format!("x3 (inspectors) must be at least 1, got {value}"),
            Regressor::Experience => format!("x4 (experience) must be non-negative, got {value}"),
            Regressor::LogFunctionPoints => unreachable!(),
        })
    }
}

impl fmt::Display for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Regressor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Regressor::ALL
            .into_iter()
            .find(|r| r.key() == s || r.index().to_string() == s)
            .ok_or_else(|| format!("unknown regressor {s:?} (expected x1..x5)"))
    }
}

pub fn log_function_points(function_points: f64) -> f64 {
    if FUNCTION_POINT_LOG_BASE == 10.0 {
        function_points.log10()
    } else {
        function_points.log(FUNCTION_POINT_LOG_BASE)
    }
}

/// Values of the inspection parameters for one observation or prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorVector {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x5: Option<f64>,
}

impl RegressorVector {
    pub fn from_session(session: &InspectionSession, model: ModelKind) -> Self {
        Self {
            x1: session.inspection_time,
            x2: session.prep_time,
            x3: f64::from(session.num_inspectors),
            x4: session.experience_level,
            x5: (model == ModelKind::Team).then(|| log_function_points(session.function_points)),
        }
    }

    pub fn get(&self, r: Regressor) -> Option<f64> {
        match r {
            Regressor::InspectionTime => Some(self.x1),
            Regressor::PrepTime => Some(self.x2),
            Regressor::Inspectors => Some(self.x3),
            Regressor::Experience => Some(self.x4),
            Regressor::LogFunctionPoints => self.x5,
        }
    }

    pub fn set(&mut self, r: Regressor, value: f64) {
        match r {
            Regressor::InspectionTime => self.x1 = value,
            Regressor::PrepTime => self.x2 = value,
            Regressor::Inspectors => self.x3 = value,
            Regressor::Experience => self.x4 = value,
            Regressor::LogFunctionPoints => self.x5 = Some(value),
        }
    }

    /// Regressor values in model order, checking that arity matches the model.
    pub fn values(&self, model: ModelKind) -> Result<Vec<f64>, RegressionError> {
        match (model, self.x5) {
            (ModelKind::Process, Some(_)) => Err(RegressionError::ArityMismatch(
                "process model takes x1..x4 but x5 was supplied".to_string(),
            )),
            (ModelKind::Team, None) => Err(RegressionError::ArityMismatch(
                "team model needs x5 (log function points)".to_string(),
            )),
            _ => Ok(model
                .regressors()
                .iter()
                .filter_map(|r| self.get(*r))
                .collect()),
        }
    }

    pub fn domain_violations(&self) -> Vec<String> {
        Regressor::ALL
            .iter()
            .filter_map(|r| self.get(*r).and_then(|v| r.domain_violation(v)))
            .collect()
    }
}

/// One row of training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Project (or project/phase) the row came from.
    #[serde(default)]
    pub source: String,
    pub x: RegressorVector,
    pub y: f64,
}

/// Validated observations plus the matrix `X` with its leading column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    model: ModelKind,
    rows: Vec<Observation>,
    x: Matrix,
}

impl DesignMatrix {
    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn observations(&self) -> &[Observation] {
        &self.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn column_name(&self, j: usize) -> String {
        if j == 0 {
            "intercept".to_string()
        } else {
            let r = Regressor::ALL[j - 1];
            format!("{} ({})", r.key(), r.description())
        }
    }
}

pub fn build_design_matrix(
    observations: Vec<Observation>,
    model: ModelKind,
) -> Result<DesignMatrix, RegressionError> {
    if observations.len() < model.min_rows() {
        return Err(RegressionError::InsufficientRows {
            model,
            required: model.min_rows(),
            provided: observations.len(),
        });
    }
    let mut rows = Vec::with_capacity(observations.len());
    for (i, obs) in observations.iter().enumerate() {
        let values = obs.x.values(model).map_err(|e| match e {
            RegressionError::ArityMismatch(msg) => {
                RegressionError::ArityMismatch(format!("row {}: {msg}", i + 1))
            }
            other => other,
        })?;
        if !obs.y.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite(format!("row {}", i + 1)));
        }
        let mut row = Vec::with_capacity(model.coefficient_count());
        row.push(1.0);
        row.extend(values);
        rows.push(row);
    }
    Ok(DesignMatrix {
        model,
        x: Matrix::from_rows(&rows),
        rows: observations,
    })
}

/// Non-fatal conditions noticed while fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// As many rows as coefficients: the fit interpolates and residuals are zero.
    ZeroDegreesOfFreedom,
    IllConditioned {
        condition_estimate: f64,
    },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::ZeroDegreesOfFreedom => {
                f.write_str("zero degrees of freedom: the fit interpolates the data exactly")
            }
            FitWarning::IllConditioned { condition_estimate } => write!(
                f,
                "ill-conditioned design (condition estimate {condition_estimate:.3e})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `y - X beta`, one per row.
    pub residuals: Vec<f64>,
    pub sse: f64,
    pub r_squared: f64,
    pub condition_estimate: f64,
    pub degrees_of_freedom: usize,
}

impl FitDiagnostics {
    pub fn warnings(&self) -> Vec<FitWarning> {
        let mut out = Vec::new();
        if self.degrees_of_freedom == 0 {
            out.push(FitWarning::ZeroDegreesOfFreedom);
        }
        if self.condition_estimate > ILL_CONDITIONED_ABOVE {
            out.push(FitWarning::IllConditioned {
                condition_estimate: self.condition_estimate,
            });
        }
        out
    }

    /// Compares against `other` with relative tolerance `tol`, naming the first field that differs.
    pub fn agrees_with(&self, other: &FitDiagnostics, tol: f64) -> Result<(), String> {
        let close =
            |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        let scale = norm2(&self.residuals).max(norm2(&other.residuals));
        if self.residuals.len() != other.residuals.len() {
            return Err("residual count".to_string());
        }
        if self
            .residuals
            .iter()
            .zip(&other.residuals)
            .any(|(a, b)| (a - b).abs() > tol * scale.max(a.abs()))
        {
            return Err("residuals".to_string());
        }
        // An SSE at rounding level has no meaningful relative precision.
        let sse_floor = tol * scale * scale;
        if !close(self.sse, other.sse) && (self.sse - other.sse).abs() > sse_floor {
            return Err("sse".to_string());
        }
        if (self.r_squared - other.r_squared).abs() > tol {
            return Err("r_squared".to_string());
        }
        if !close(self.condition_estimate, other.condition_estimate) {
            return Err("condition_estimate".to_string());
        }
        if self.degrees_of_freedom != other.degrees_of_freedom {
            return Err("degrees_of_freedom".to_string());
        }
        Ok(())
    }
}

/// Fitted betas (intercept first) with provenance and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub model: ModelKind,
    pub betas: Vec<f64>,
    pub fitted_from: Vec<String>,
    pub fitted_at: DateTime<Utc>,
    pub diagnostics: FitDiagnostics,
}

impl CoefficientSet {
    /// A coefficient set without fit history, e.g. entered by hand.
    pub fn from_betas(model: ModelKind, betas: Vec<f64>) -> Result<Self, RegressionError> {
        let set = Self {
            model,
            betas,
            fitted_from: Vec::new(),
            fitted_at: DateTime::<Utc>::UNIX_EPOCH,
            diagnostics: FitDiagnostics {
                residuals: Vec::new(),
                sse: 0.0,
                r_squared: 1.0,
                condition_estimate: 1.0,
                degrees_of_freedom: 0,
            },
        };
        set.check_arity()?;
        Ok(set)
    }

    pub fn check_arity(&self) -> Result<(), RegressionError> {
        if self.betas.len() != self.model.coefficient_count() {
            return Err(RegressionError::ArityMismatch(format!(
                "{} model has {} coefficients, got {}",
                self.model,
                self.model.coefficient_count(),
                self.betas.len()
            )));
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(RegressionError::NonFinite("betas".to_string()));
        }
        Ok(())
    }

    pub fn beta(&self, r: Regressor) -> Option<f64> {
        self.betas.get(r.index()).copied()
    }

    /// Stable identifier derived from the model, the exact beta bits and the
    /// training sources. The fit timestamp is excluded so refitting the same
    /// data yields the same id.
    pub fn content_id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.to_string().as_bytes());
        for b in &self.betas {
            hasher.update(b.to_bits().to_le_bytes());
        }
        for src in &self.fitted_from {
            hasher.update((src.len() as u64).to_le_bytes());
            hasher.update(src.as_bytes());
        }
        let digest = hasher.finalize();
        hex::encode(&digest[..12])
    }
}

pub fn fit_least_squares(dm: &DesignMatrix) -> Result<CoefficientSet, RegressionError> {
    fit_least_squares_at(dm, Utc::now())
}

/// Same as [`fit_least_squares`] with an explicit fit timestamp.
pub fn fit_least_squares_at(
    dm: &DesignMatrix,
    fitted_at: DateTime<Utc>,
) -> Result<CoefficientSet, RegressionError> {
    let qr = PivotedQr::new(dm.matrix());
    let columns = dm.matrix().cols();
    let rank = qr.rank(RANK_TOLERANCE);
    if rank < columns {
        return Err(RegressionError::RankDeficient {
            rank,
            columns,
            column: dm.column_name(qr.permutation()[rank]),
        });
    }
    let y = dm.y();
    let betas = qr.solve_least_squares(&y);
    let diagnostics = diagnostics_for(dm, &betas, qr.condition_estimate());
    Ok(CoefficientSet {
        model: dm.model(),
        betas,
        fitted_from: dm.observations().iter().map(|o| o.source.clone()).collect(),
        fitted_at,
        diagnostics,
    })
}

fn diagnostics_for(dm: &DesignMatrix, betas: &[f64], condition_estimate: f64) -> FitDiagnostics {
    let y = dm.y();
    let fitted = dm.matrix().mul_vec(betas);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    // A constant response is reproduced exactly by the intercept.
    let r_squared = if sst == 0.0 { 1.0 } else { 1.0 - sse / sst };
    FitDiagnostics {
        residuals,
        sse,
        r_squared,
        condition_estimate,
        degrees_of_freedom: y.len() - betas.len(),
    }
}

/// Recomputes diagnostics for `coeffs` on `dm` and checks them against the stored ones.
pub fn validate_fit(
    dm: &DesignMatrix,
    coeffs: &CoefficientSet,
) -> Result<FitDiagnostics, RegressionError> {
    if coeffs.model != dm.model() {
        return Err(RegressionError::ShapeMismatch(format!(
            "coefficients are for the {} model, design matrix is {}",
            coeffs.model,
            dm.model()
        )));
    }
    coeffs.check_arity()?;
    if coeffs.diagnostics.residuals.len() != dm.observations().len() {
        return Err(RegressionError::ShapeMismatch(format!(
            "{} stored residuals for {} rows",
            coeffs.diagnostics.residuals.len(),
            dm.observations().len()
        )));
    }
    let recomputed = diagnostics_for(
        dm,
        &coeffs.betas,
        PivotedQr::new(dm.matrix()).condition_estimate(),
    );
    recomputed
        .agrees_with(&coeffs.diagnostics, 1e-9)
        .map_err(RegressionError::DiagnosticsMismatch)?;
    Ok(recomputed)
}

/// Expected metric value for a parameter vector (error term taken as zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub y_raw: f64,
    /// `y_raw` clamped to `[0, 1]`; process model only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_clamped: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandLabel>,
    /// DI outside `[0, 1]`, or negative IPM.
    pub out_of_range: bool,
}

/// `beta0 + sum(beta_j * x_j)` without domain checks.
pub fn linear_response(betas: &[f64], values: &[f64]) -> f64 {
    betas[0]
        + betas[1..]
            .iter()
            .zip(values)
            .map(|(b, x)| b * x)
            .sum::<f64>()
}

pub fn predict(
    coeffs: &CoefficientSet,
    x: &RegressorVector,
) -> Result<PredictionResult, RegressionError> {
    coeffs.check_arity()?;
    let values = x.values(coeffs.model)?;
    let y_raw = linear_response(&coeffs.betas, &values);
    if !y_raw.is_finite() {
        return Err(RegressionError::NonFinite("prediction".to_string()));
    }
    Ok(match coeffs.model {
        ModelKind::Process => {
            let clamped = y_raw.clamp(0.0, 1.0);
            PredictionResult {
                y_raw,
                y_clamped: Some(clamped),
                band: Some(metrics::classify_band(clamped)?.label),
                out_of_range: !(0.0..=1.0).contains(&y_raw),
            }
        }
        ModelKind::Team => PredictionResult {
            y_raw,
            y_clamped: None,
            band: None,
            out_of_range: y_raw < 0.0,
        },
    })
}

/// Row granularity when turning project records into training observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One row per project: phase parameters averaged, response is the project average.
    #[default]
    Project,
    /// One row per (project, phase).
    Phase,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "project" => Ok(Granularity::Project),
            "phase" => Ok(Granularity::Phase),
            other => Err(format!(
                "unknown granularity {other:?} (expected project or phase)"
            )),
        }
    }
}

/// Training rows from shop-floor records. Phases whose DI is undefined are
/// skipped for the process model.
pub fn observations_from_records(
    records: &[ProjectRecord],
    model: ModelKind,
    granularity: Granularity,
) -> Result<Vec<Observation>, RegressionError> {
    let mut out = Vec::new();
    for record in records {
        let mut phase_rows = Vec::new();
        for obs in &record.phases {
            let y = match model {
                ModelKind::Process => match metrics::compute_di(obs.counts) {
                    Ok(v) => v,
                    Err(metrics::MetricsError::UndefinedMetric(_)) => continue,
                    Err(e) => return Err(e.into()),
                },
                ModelKind::Team => metrics::compute_ipm(obs.counts.inspection_found, &obs.session)?,
            };
            phase_rows.push((obs, y));
        }
        if phase_rows.is_empty() {
            continue;
        }
        match granularity {
            Granularity::Phase => {
                out.extend(phase_rows.iter().map(|(obs, y)| Observation {
                    source: format!("{}/{}", record.id, obs.phase),
                    x: RegressorVector::from_session(&obs.session, model),
                    y: *y,
                }));
            }
            Granularity::Project => {
                let n = phase_rows.len() as f64;
                let mean = |f: &dyn Fn(&InspectionSession) -> f64| {
                    phase_rows.iter().map(|(o, _)| f(&o.session)).sum::<f64>() / n
                };
                let ys: Vec<f64> = phase_rows.iter().map(|(_, y)| *y).collect();
                let y = metrics::aggregate_metric(&ys, AggregationMode::MeanOfPhases, None)?;
                out.push(Observation {
                    source: record.id.clone(),
                    x: RegressorVector {
                        x1: mean(&|s| s.inspection_time),
                        x2: mean(&|s| s.prep_time),
                        x3: mean(&|s| f64::from(s.num_inspectors)),
                        x4: mean(&|s| s.experience_level),
                        x5: (model == ModelKind::Team)
                            .then(|| log_function_points(mean(&|s| s.function_points))),
                    },
                    y,
                });
            }
        }
    }
    Ok(out)
}
