//! What-if planning on a fitted coefficient set: invert the model for one
//! parameter, or sweep one parameter over a grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::BandLabel;
use crate::regression::{
    self, CoefficientSet, ModelKind, PredictionResult, RegressionError, Regressor, RegressorVector,
};

/// Upper bound on scan grid size.
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("{regressor} has a zero coefficient and cannot move the prediction")]
    UnsolvableParameter { regressor: Regressor },
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),
    #[error("invalid scan range: {0}")]
    InvalidRange(String),
    #[error("scan grid is empty (min {min} is not below max {max})")]
    EmptyGrid { min: f64, max: f64 },
    #[error("scan grid would have {points} points (limit {MAX_GRID_POINTS})")]
    GridTooLarge { points: usize },
    #[error("band thresholds need the process model, got {0}")]
    WrongModel(ModelKind),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

/// Solve for one regressor so the prediction hits `target_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRequest {
    pub target_y: f64,
    pub solve_for: Regressor,
    /// Values for every other regressor of the model.
    pub fixed: BTreeMap<Regressor, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegerCandidate {
    pub value: f64,
    pub y_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandLabel>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub solve_for: Regressor,
    pub value: f64,
    pub feasible: bool,
    /// Why the solution is infeasible; empty when feasible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    /// Band of the prediction at the solved point (process model only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandLabel>,
    /// Floor and ceiling of a fractional inspector count, with their predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integer_candidates: Option<Vec<IntegerCandidate>>,
}

/// Sweep one regressor over `[min, max]` in steps of `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub vary: Regressor,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub fixed: BTreeMap<Regressor, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub value: f64,
    #[serde(flatten)]
    pub prediction: PredictionResult,
}

/// Checks `fixed` names exactly the model's regressors other than `free`.
fn check_fixed(
    model: ModelKind,
    free: Regressor,
    fixed: &BTreeMap<Regressor, f64>,
) -> Result<(), PlannerError> {
    if free.index() > model.regressor_count() {
        return Err(PlannerError::ArityMismatch(format!(
            "{free} is not a regressor of the {model} model"
        )));
    }
    let expected: Vec<Regressor> = model
        .regressors()
        .iter()
        .copied()
        .filter(|r| *r != free)
        .collect();
    let missing: Vec<&str> = expected
        .iter()
        .filter(|r| !fixed.contains_key(r))
        .map(|r| r.key())
        .collect();
    let extra: Vec<&str> = fixed
        .keys()
        .filter(|r| !expected.contains(r))
        .map(|r| r.key())
        .collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing {}", missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("unexpected {}", extra.join(", ")));
    }
    Err(PlannerError::ArityMismatch(parts.join("; ")))
}

fn assemble(
    model: ModelKind,
    fixed: &BTreeMap<Regressor, f64>,
    free: Regressor,
    value: f64,
) -> RegressorVector {
    let mut x = RegressorVector {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
        x4: 0.0,
        x5: None,
    };
    for (&r, &v) in fixed {
        x.set(r, v);
    }
    x.set(free, value);
    if model == ModelKind::Process {
        x.x5 = None;
    }
    x
}

pub fn solve_parameter(
    coeffs: &CoefficientSet,
    req: &TuneRequest,
) -> Result<TuneResult, PlannerError> {
    coeffs.check_arity()?;
    check_fixed(coeffs.model, req.solve_for, &req.fixed)?;
    let beta_j = coeffs.betas[req.solve_for.index()];
    if beta_j == 0.0 {
        return Err(PlannerError::UnsolvableParameter {
            regressor: req.solve_for,
        });
    }
    let rest: f64 = req
        .fixed
        .iter()
        .map(|(r, v)| coeffs.betas[r.index()] * v)
        .sum();
    let value = (req.target_y - coeffs.betas[0] - rest) / beta_j;
    if !value.is_finite() {
        return Err(RegressionError::NonFinite(format!("solved {}", req.solve_for)).into());
    }

    let x = assemble(coeffs.model, &req.fixed, req.solve_for, value);
    let reasons = x.domain_violations();
    let band = regression::predict(coeffs, &x)?.band;

    let integer_candidates = if req.solve_for == Regressor::Inspectors {
        let mut values = vec![value.floor(), value.ceil()];
        values.dedup();
        let mut candidates = Vec::with_capacity(values.len());
        for v in values {
            let xi = assemble(coeffs.model, &req.fixed, req.solve_for, v);
            let p = regression::predict(coeffs, &xi)?;
            candidates.push(IntegerCandidate {
                value: v,
                y_raw: p.y_raw,
                band: p.band,
                feasible: xi.domain_violations().is_empty(),
            });
        }
        Some(candidates)
    } else {
        None
    };

    Ok(TuneResult {
        solve_for: req.solve_for,
        value,
        feasible: reasons.is_empty(),
        reasons,
        band,
        integer_candidates,
    })
}

/// Number of grid points `min, min + step, ...` not exceeding `max`.
fn grid_len(min: f64, max: f64, step: f64) -> Result<usize, PlannerError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(PlannerError::InvalidRange(
            "bounds and step must be finite".to_string(),
        ));
    }
    if step <= 0.0 {
        return Err(PlannerError::InvalidRange(format!(
            "step must be positive, got {step}"
        )));
    }
    if max <= min {
        return Err(PlannerError::EmptyGrid { min, max });
    }
    // Slack keeps `max` on the grid when (max - min) / step is integral up to rounding.
    let intervals = ((max - min) / step * (1.0 + 1e-12)).floor();
    if intervals >= MAX_GRID_POINTS as f64 {
        return Err(PlannerError::GridTooLarge {
            points: intervals.min(usize::MAX as f64) as usize,
        });
    }
    Ok(intervals as usize + 1)
}

pub fn scan(coeffs: &CoefficientSet, req: &ScanRequest) -> Result<Vec<ScanPoint>, PlannerError> {
    coeffs.check_arity()?;
    check_fixed(coeffs.model, req.vary, &req.fixed)?;
    let n = grid_len(req.min, req.max, req.step)?;
    (0..n)
        .map(|k| {
            let value = req.min + k as f64 * req.step;
            let x = assemble(coeffs.model, &req.fixed, req.vary, value);
            Ok(ScanPoint {
                value,
                prediction: regression::predict(coeffs, &x)?,
            })
        })
        .collect()
}

/// Value of `solve_for` at which the predicted DI reaches `band_lower`.
pub fn band_threshold(
    coeffs: &CoefficientSet,
    band_lower: f64,
    solve_for: Regressor,
    fixed: &BTreeMap<Regressor, f64>,
) -> Result<f64, PlannerError> {
    if coeffs.model != ModelKind::Process {
        return Err(PlannerError::WrongModel(coeffs.model));
    }
    let req = TuneRequest {
        target_y: band_lower,
        solve_for,
        fixed: fixed.clone(),
    };
    Ok(solve_parameter(coeffs, &req)?.value)
}
