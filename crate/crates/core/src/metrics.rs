//! Depth of Inspection (DI) and Inspection Performance Metric (IPM).
//!
//! DI is the share of all captured defects that were found by inspection
//! alone. IPM is the number of inspection-found defects per person-hour of
//! inspection effort. Both are computed per development phase and averaged
//! to the project level, and DI values are classified into ten fixed
//! performance bands.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by metric computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),
    #[error("value {value} is outside the DI domain [0, 1]")]
    OutOfDomain { value: f64 },
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("pooled aggregation needs {expected} defect counts, got {found}")]
    MissingCounts { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("project {project}{}: {source}", phase.map(|p| format!(" phase {p}")).unwrap_or_default())]
    InProject {
        project: String,
        phase: Option<Phase>,
        #[source]
        source: Box<MetricsError>,
    },
}

/// Defect tallies for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectCounts {
    /// Defects captured by inspection.
    pub inspection_found: u64,
    /// Defects captured by inspection and testing together.
    pub total_found: u64,
}

impl DefectCounts {
    pub fn new(inspection_found: u64, total_found: u64) -> Result<Self, MetricsError> {
        let counts = Self {
            inspection_found,
            total_found,
        };
        counts.validate()?;
        Ok(counts)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.inspection_found > self.total_found {
            return Err(MetricsError::InvalidInput(format!(
                "inspection_found ({}) exceeds total_found ({})",
                self.inspection_found, self.total_found
            )));
        }
        Ok(())
    }
}

/// Parameters of the inspection sessions held during one phase.
///
/// Times are per person; total effort is `num_inspectors * (inspection_time + prep_time)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InspectionSession {
    pub num_inspectors: u32,
    /// Person-hours of actual inspection, per inspector.
    pub inspection_time: f64,
    /// Person-hours of preparation, per inspector.
    pub prep_time: f64,
    /// Years of relevant experience. Treated as an opaque continuous scalar.
    pub experience_level: f64,
    /// Size of the work product in function points (before log scaling).
    pub function_points: f64,
}

impl InspectionSession {
    /// Returns one message per broken invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_inspectors < 1 {
            out.push("num_inspectors must be at least 1".to_string());
        }
        if !(self.inspection_time.is_finite() && self.inspection_time > 0.0) {
            out.push(format!(
                "inspection_time must be positive, got {}",
                self.inspection_time
            ));
        }
        if !(self.prep_time.is_finite() && self.prep_time >= 0.0) {
            out.push(format!(
                "prep_time must be non-negative, got {}",
                self.prep_time
            ));
        }
        if !(self.experience_level.is_finite() && self.experience_level >= 0.0) {
            out.push(format!(
                "experience_level must be non-negative, got {}",
                self.experience_level
            ));
        }
        if !(self.function_points.is_finite() && self.function_points > 0.0) {
            out.push(format!(
                "function_points must be positive, got {}",
                self.function_points
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MetricsError::InvalidInput(v.join("; ")))
        }
    }

    /// Inspection effort in person-hours.
    pub fn effort(&self) -> f64 {
        f64::from(self.num_inspectors) * (self.inspection_time + self.prep_time)
    }
}

/// Development phase a defect observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[serde(rename = "req", alias = "requirements")]
    Requirements,
    #[serde(rename = "des", alias = "design")]
    Design,
    #[serde(rename = "imp", alias = "implementation")]
    Implementation,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Requirements, Phase::Design, Phase::Implementation];

    pub fn code(self) -> &'static str {
        match self {
            Phase::Requirements => "req",
            Phase::Design => "des",
            Phase::Implementation => "imp",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "req" | "requirements" => Ok(Phase::Requirements),
            "des" | "design" => Ok(Phase::Design),
            "imp" | "implementation" => Ok(Phase::Implementation),
            other => Err(format!(
                "unknown phase {other:?} (expected req, des or imp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseObservation {
    pub phase: Phase,
    pub counts: DefectCounts,
    pub session: InspectionSession,
}

/// One project's metadata and its per-phase observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub id: String,
    /// Total project effort in person-hours. The records CSV has no column
    /// for it, so it is only populated from JSON records and the fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_person_hours: Option<f64>,
    /// Share of total defects captured in the complete project, in percent.
    /// Stored as metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_captured_pct: Option<f64>,
    pub phases: Vec<PhaseObservation>,
}

impl ProjectRecord {
    /// Returns one message per broken invariant, prefixed with the phase when relevant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("project id is empty".to_string());
        }
        if let Some(h) = self.total_person_hours {
            if !(h.is_finite() && h > 0.0) {
                out.push(format!("total_person_hours must be positive, got {h}"));
            }
        }
        if let Some(tc) = self.total_captured_pct {
            if !(tc.is_finite() && (0.0..=100.0).contains(&tc)) {
                out.push(format!("total_captured_pct must be in [0, 100], got {tc}"));
            }
        }
        let mut seen = Vec::with_capacity(self.phases.len());
        for obs in &self.phases {
            if seen.contains(&obs.phase) {
                out.push(format!("phase {} appears more than once", obs.phase));
            }
            seen.push(obs.phase);
            if let Err(MetricsError::InvalidInput(msg)) = obs.counts.validate() {
                out.push(format!("phase {}: {msg}", obs.phase));
            }
            for msg in obs.session.violations() {
                out.push(format!("phase {}: {msg}", obs.phase));
            }
        }
        out
    }
}

/// The ten DI performance labels, ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandLabel {
    Worse,
    VeryLow,
    Low,
    Normal,
    AboveNormal,
    High,
    VeryHigh,
    Best,
    Excellent,
    Ideal,
}

impl BandLabel {
    pub fn name(self) -> &'static str {
        match self {
            BandLabel::Worse => "Worse",
            BandLabel::VeryLow => "VeryLow",
            BandLabel::Low => "Low",
            BandLabel::Normal => "Normal",
            BandLabel::AboveNormal => "AboveNormal",
            BandLabel::High => "High",
            BandLabel::VeryHigh => "VeryHigh",
            BandLabel::Best => "Best",
            BandLabel::Excellent => "Excellent",
            BandLabel::Ideal => "Ideal",
        }
    }

    pub fn band(self) -> Band {
        BANDS[self as usize]
    }
}

impl fmt::Display for BandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BANDS
            .iter()
            .map(|b| b.label)
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown band {s:?}"))
    }
}

/// A DI performance band. Intervals are `[lower, upper)` except `Ideal`,
/// which is closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: BandLabel,
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub fn contains(&self, di: f64) -> bool {
        di >= self.lower
            && (di < self.upper || (self.label == BandLabel::Ideal && di <= self.upper))
    }
}

pub const BANDS: [Band; 10] = [
    Band {
        label: BandLabel::Worse,
        lower: 0.0,
        upper: 0.1,
    },
    Band {
        label: BandLabel::VeryLow,
        lower: 0.1,
        upper: 0.2,
    },
    Band {
        label: BandLabel::Low,
        lower: 0.2,
        upper: 0.3,
    },
    Band {
        label: BandLabel::Normal,
        lower: 0.3,
        upper: 0.4,
    },
    Band {
        label: BandLabel::AboveNormal,
        lower: 0.4,
        upper: 0.5,
    },
    Band {
        label: BandLabel::High,
        lower: 0.5,
        upper: 0.6,
    },
    Band {
        label: BandLabel::VeryHigh,
        lower: 0.6,
        upper: 0.7,
    },
    Band {
        label: BandLabel::Best,
        lower: 0.7,
        upper: 0.8,
    },
    Band {
        label: BandLabel::Excellent,
        lower: 0.8,
        upper: 0.9,
    },
    Band {
        label: BandLabel::Ideal,
        lower: 0.9,
        upper: 1.0,
    },
];

/// Checks that [`BANDS`] is ordered and tiles `[0, 1]` without gaps.
pub fn check_band_tiling(bands: &[Band]) -> Result<(), String> {
    let first = bands.first().ok_or("band table is empty")?;
    if first.lower != 0.0 {
        return Err(format!("first band starts at {}, not 0", first.lower));
    }
    for pair in bands.windows(2) {
        if pair[0].upper != pair[1].lower {
            return Err(format!(
                "gap or overlap between {} and {}",
                pair[0].label, pair[1].label
            ));
        }
        if pair[0].label >= pair[1].label {
            return Err(format!("{} is out of order", pair[1].label));
        }
    }
    let last = bands.last().ok_or("band table is empty")?;
    if last.upper != 1.0 {
        return Err(format!("last band ends at {}, not 1", last.upper));
    }
    Ok(())
}

pub fn compute_di(counts: DefectCounts) -> Result<f64, MetricsError> {
    counts.validate()?;
    if counts.total_found == 0 {
        return Err(MetricsError::UndefinedMetric(
            "DI needs at least one captured defect (total_found = 0)".to_string(),
        ));
    }
    Ok(counts.inspection_found as f64 / counts.total_found as f64)
}

pub fn compute_ipm(
    inspection_found: u64,
    session: &InspectionSession,
) -> Result<f64, MetricsError> {
    let effort = session.effort();
    if !(effort.is_finite() && effort > 0.0) {
        return Err(MetricsError::UndefinedMetric(format!(
            "IPM needs positive inspection effort, got {effort}"
        )));
    }
    session.validate()?;
    Ok(inspection_found as f64 / effort)
}

/// How phase-level metrics are rolled up to a project value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Unweighted mean of the phase values.
    #[default]
    MeanOfPhases,
    /// Sum of inspection-found defects over sum of all captured defects.
    PooledCounts,
}

pub fn aggregate_metric(
    values: &[f64],
    mode: AggregationMode,
    counts: Option<&[DefectCounts]>,
) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    match mode {
        AggregationMode::MeanOfPhases => Ok(values.iter().sum::<f64>() / values.len() as f64),
        AggregationMode::PooledCounts => {
            let counts = counts.unwrap_or(&[]);
            if counts.len() != values.len() {
                return Err(MetricsError::MissingCounts {
                    expected: values.len(),
                    found: counts.len(),
                });
            }
            let found: u64 = counts.iter().map(|c| c.inspection_found).sum();
            let total: u64 = counts.iter().map(|c| c.total_found).sum();
            compute_di(DefectCounts {
                inspection_found: found,
                total_found: total,
            })
        }
    }
}

pub fn classify_band(di: f64) -> Result<Band, MetricsError> {
    if !(0.0..=1.0).contains(&di) {
        return Err(MetricsError::OutOfDomain { value: di });
    }
    BANDS
        .iter()
        .copied()
        .find(|b| b.contains(di))
        .ok_or(MetricsError::OutOfDomain { value: di })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub di: Option<f64>,
    pub di_band: Option<BandLabel>,
    pub ipm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectReport {
    pub project_id: String,
    pub phases: Vec<PhaseReport>,
    pub avg_di: Option<f64>,
    pub avg_di_band: Option<BandLabel>,
    pub avg_ipm: f64,
    /// True when at least one phase had no DI value and was left out of the average.
    pub partial: bool,
    pub mode: AggregationMode,
}

/// Per-phase DI, IPM and bands for one project, plus project averages.
///
/// A phase with zero captured defects gets no DI; it is reported with a
/// warning and the DI average is taken over the remaining phases.
pub fn project_report(
    record: &ProjectRecord,
    mode: AggregationMode,
) -> Result<ProjectReport, MetricsError> {
    let annotate = |phase: Option<Phase>, e: MetricsError| MetricsError::InProject {
        project: record.id.clone(),
        phase,
        source: Box::new(e),
    };
    if record.phases.is_empty() {
        return Err(annotate(
            None,
            MetricsError::InvalidInput("record has no phase observations".to_string()),
        ));
    }

    let mut phases = Vec::with_capacity(record.phases.len());
    let mut di_values = Vec::new();
    let mut di_counts = Vec::new();
    let mut ipm_values = Vec::new();
    let (mut found_sum, mut effort_sum) = (0u64, 0.0f64);
    for obs in &record.phases {
        obs.counts
            .validate()
            .map_err(|e| annotate(Some(obs.phase), e))?;
        let ipm = compute_ipm(obs.counts.inspection_found, &obs.session)
            .map_err(|e| annotate(Some(obs.phase), e))?;
        ipm_values.push(ipm);
        found_sum += obs.counts.inspection_found;
        effort_sum += obs.session.effort();

        let (di, di_band, warning) = match compute_di(obs.counts) {
            Ok(di) => {
                di_values.push(di);
                di_counts.push(obs.counts);
                let band = classify_band(di).map_err(|e| annotate(Some(obs.phase), e))?;
                (Some(di), Some(band.label), None)
            }
            Err(e @ MetricsError::UndefinedMetric(_)) => (None, None, Some(e.to_string())),
            Err(e) => return Err(annotate(Some(obs.phase), e)),
        };
        phases.push(PhaseReport {
            phase: obs.phase,
            di,
            di_band,
            ipm,
            warning,
        });
    }

    let avg_di = if di_values.is_empty() {
        None
    } else {
        Some(aggregate_metric(&di_values, mode, Some(&di_counts)).map_err(|e| annotate(None, e))?)
    };
    let avg_di_band = match avg_di {
        Some(v) => Some(classify_band(v).map_err(|e| annotate(None, e))?.label),
        None => None,
    };
    let avg_ipm = match mode {
        AggregationMode::MeanOfPhases => {
            aggregate_metric(&ipm_values, mode, None).map_err(|e| annotate(None, e))?
        }
        AggregationMode::PooledCounts => found_sum as f64 / effort_sum,
    };

    Ok(ProjectReport {
        project_id: record.id.clone(),
        partial: di_values.len() < record.phases.len(),
        phases,
        avg_di,
        avg_di_band,
        avg_ipm,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(n: u32, it: f64, pt: f64) -> InspectionSession {
        InspectionSession {
            num_inspectors: n,
            inspection_time: it,
            prep_time: pt,
            experience_level: 3.0,
            function_points: 120.0,
        }
    }

    fn obs(phase: Phase, found: u64, total: u64) -> PhaseObservation {
        PhaseObservation {
            phase,
            counts: DefectCounts::new(found, total).unwrap(),
            session: session(3, 2.0, 2.0),
        }
    }

    #[test]
    fn di_examples() {
        assert_eq!(compute_di(DefectCounts::new(0, 10).unwrap()).unwrap(), 0.0);
        assert_eq!(compute_di(DefectCounts::new(10, 10).unwrap()).unwrap(), 1.0);
        assert_eq!(
            compute_di(DefectCounts::new(53, 100).unwrap()).unwrap(),
            0.53
        );
    }

    #[test]
    fn di_without_defects_is_undefined() {
        let err = compute_di(DefectCounts::new(0, 0).unwrap()).unwrap_err();
        assert!(matches!(err, MetricsError::UndefinedMetric(_)));
    }

    #[test]
    fn counts_reject_more_inspection_than_total() {
        assert!(DefectCounts::new(11, 10).is_err());
        let raw = DefectCounts {
            inspection_found: 11,
            total_found: 10,
        };
        assert!(matches!(
            compute_di(raw),
            Err(MetricsError::InvalidInput(_))
        ));
    }

    #[test]
    fn ipm_examples() {
        assert_eq!(compute_ipm(0, &session(3, 2.0, 2.0)).unwrap(), 0.0);
        assert_eq!(compute_ipm(12, &session(3, 2.0, 2.0)).unwrap(), 1.0);
        assert_eq!(compute_ipm(12, &session(6, 2.0, 2.0)).unwrap(), 0.5);
    }

    #[test]
    fn ipm_rejects_zero_effort() {
        let err = compute_ipm(3, &session(0, 2.0, 2.0)).unwrap_err();
        assert!(matches!(err, MetricsError::UndefinedMetric(_)));
        let err = compute_ipm(3, &session(2, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, MetricsError::UndefinedMetric(_)));
    }

    #[test]
    fn mean_of_phases_matches_published_averages() {
        let p1 =
            aggregate_metric(&[0.53, 0.50, 0.50], AggregationMode::MeanOfPhases, None).unwrap();
        assert!((p1 - 0.51).abs() < 1e-12);
        let p6 =
            aggregate_metric(&[0.48, 0.50, 0.21], AggregationMode::MeanOfPhases, None).unwrap();
        assert!((p6 - 0.396_666_666_666_666_7).abs() < 1e-12);
        assert_eq!(format!("{p6:.2}"), "0.40");
        assert_eq!(
            aggregate_metric(&[0.42], AggregationMode::MeanOfPhases, None).unwrap(),
            0.42
        );
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(
            aggregate_metric(&[], AggregationMode::MeanOfPhases, None),
            Err(MetricsError::EmptyInput)
        );
        assert_eq!(
            aggregate_metric(&[0.5, 0.4], AggregationMode::PooledCounts, None),
            Err(MetricsError::MissingCounts {
                expected: 2,
                found: 0
            })
        );
    }

    #[test]
    fn pooled_counts_use_summed_defects() {
        let counts = [
            DefectCounts::new(1, 2).unwrap(),
            DefectCounts::new(9, 18).unwrap(),
        ];
        let got =
            aggregate_metric(&[0.5, 0.5], AggregationMode::PooledCounts, Some(&counts)).unwrap();
        assert_eq!(got, 0.5);
        let counts = [
            DefectCounts::new(1, 4).unwrap(),
            DefectCounts::new(3, 4).unwrap(),
        ];
        let got =
            aggregate_metric(&[0.25, 0.75], AggregationMode::PooledCounts, Some(&counts)).unwrap();
        assert_eq!(got, 0.5);
    }

    #[test]
    fn band_examples() {
        assert_eq!(classify_band(0.35).unwrap().label, BandLabel::Normal);
        assert_eq!(classify_band(0.05).unwrap().label, BandLabel::Worse);
        assert_eq!(classify_band(1.0).unwrap().label, BandLabel::Ideal);
        assert_eq!(classify_band(0.4).unwrap().label, BandLabel::AboveNormal);
        assert_eq!(classify_band(0.0).unwrap().label, BandLabel::Worse);
        assert_eq!(classify_band(0.9).unwrap().label, BandLabel::Ideal);
    }

    #[test]
    fn band_rejects_out_of_domain() {
        for v in [-0.01, 1.0000001, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                classify_band(v),
                Err(MetricsError::OutOfDomain { .. })
            ));
        }
    }

    #[test]
    fn band_table_tiles_unit_interval() {
        check_band_tiling(&BANDS).unwrap();
        for (i, b) in BANDS.iter().enumerate() {
            assert_eq!(b.label as usize, i);
            assert_eq!(b.label.band(), *b);
            assert_eq!(b.label.name().parse::<BandLabel>().unwrap(), b.label);
        }
    }

    #[test]
    fn report_for_published_p1_values() {
        // DI 0.53 / 0.5 / 0.5 expressed as counts.
        let record = ProjectRecord {
            id: "P1".into(),
            total_person_hours: Some(250.0),
            total_captured_pct: Some(96.0),
            phases: vec![
                obs(Phase::Requirements, 53, 100),
                obs(Phase::Design, 50, 100),
                obs(Phase::Implementation, 50, 100),
            ],
        };
        let report = project_report(&record, AggregationMode::MeanOfPhases).unwrap();
        assert!((report.avg_di.unwrap() - 0.51).abs() < 1e-12);
        assert_eq!(report.avg_di_band, Some(BandLabel::High));
        assert!(!report.partial);
        assert_eq!(report.phases[0].di_band, Some(BandLabel::High));
        assert_eq!(report.phases[1].ipm, 50.0 / 12.0);
    }

    #[test]
    fn report_with_zero_defect_phase_is_partial() {
        let record = ProjectRecord {
            id: "Z".into(),
            total_person_hours: None,
            total_captured_pct: None,
            phases: vec![
                obs(Phase::Requirements, 4, 10),
                obs(Phase::Design, 0, 0),
                obs(Phase::Implementation, 6, 10),
            ],
        };
        let report = project_report(&record, AggregationMode::MeanOfPhases).unwrap();
        assert!(report.partial);
        assert_eq!(report.phases[1].di, None);
        assert!(report.phases[1]
            .warning
            .as_deref()
            .unwrap()
            .contains("undefined"));
        assert!((report.avg_di.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_with_equal_phases_averages_to_that_value() {
        let record = ProjectRecord {
            id: "E".into(),
            total_person_hours: None,
            total_captured_pct: None,
            phases: Phase::ALL.iter().map(|&p| obs(p, 37, 100)).collect(),
        };
        let report = project_report(&record, AggregationMode::MeanOfPhases).unwrap();
        assert!((report.avg_di.unwrap() - 0.37).abs() < 1e-15);
        let pooled = project_report(&record, AggregationMode::PooledCounts).unwrap();
        assert_eq!(pooled.avg_di, Some(0.37));
    }

    #[test]
    fn report_errors_carry_project_and_phase() {
        let mut record = ProjectRecord {
            id: "Bad".into(),
            total_person_hours: None,
            total_captured_pct: None,
            phases: vec![obs(Phase::Design, 1, 2)],
        };
        record.phases[0].session.num_inspectors = 0;
        let err = project_report(&record, AggregationMode::MeanOfPhases).unwrap_err();
        match &err {
            MetricsError::InProject { project, phase, .. } => {
                assert_eq!(project, "Bad");
                assert_eq!(*phase, Some(Phase::Design));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().starts_with("project Bad phase des"));

        record.phases.clear();
        assert!(project_report(&record, AggregationMode::MeanOfPhases).is_err());
    }

    #[test]
    fn record_violations_are_collected() {
        let mut record = ProjectRecord {
            id: "V".into(),
            total_person_hours: Some(-1.0),
            total_captured_pct: Some(101.0),
            phases: vec![obs(Phase::Design, 1, 2), obs(Phase::Design, 1, 2)],
        };
        record.phases[0].session.prep_time = -1.0;
        let v = record.violations();
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn phase_codes_parse() {
        for p in Phase::ALL {
            assert_eq!(p.code().parse::<Phase>().unwrap(), p);
        }
        assert_eq!("Design".parse::<Phase>().unwrap(), Phase::Design);
        assert!("test".parse::<Phase>().is_err());
    }

    proptest! {
        #[test]
        fn di_stays_in_unit_interval(total in 1u64..1_000_000, frac in 0.0f64..=1.0) {
            let found = ((total as f64) * frac).floor() as u64;
            let di = compute_di(DefectCounts::new(found, total).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&di));
        }

        #[test]
        fn ipm_is_homogeneous(n in 0u64..10_000, k in 0u64..50, inspectors in 1u32..20,
                              it in 0.1f64..40.0, pt in 0.0f64..40.0) {
            let s = session(inspectors, it, pt);
            let base = compute_ipm(n, &s).unwrap();
            let scaled = compute_ipm(k * n, &s).unwrap();
            prop_assert!((scaled - k as f64 * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }

        #[test]
        fn ipm_halves_when_effort_doubles(n in 1u64..10_000, inspectors in 1u32..20,
                                          it in 0.1f64..40.0, pt in 0.0f64..40.0) {
            let base = compute_ipm(n, &session(inspectors, it, pt)).unwrap();
            let more_people = compute_ipm(n, &session(2 * inspectors, it, pt)).unwrap();
            let more_time = compute_ipm(n, &session(inspectors, 2.0 * it, 2.0 * pt)).unwrap();
            prop_assert!((more_people - base / 2.0).abs() <= 1e-12 * base);
            prop_assert!((more_time - base / 2.0).abs() <= 1e-12 * base);
        }

        #[test]
        fn band_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let bl = classify_band(lo).unwrap().label;
            let bh = classify_band(hi).unwrap().label;
            prop_assert!(bl <= bh);
            prop_assert_eq!(BANDS.iter().filter(|band| band.contains(lo)).count(), 1);
        }

        #[test]
        fn mean_equals_pooled_for_shared_totals(total in 1u64..500,
                                                fracs in proptest::collection::vec(0.0f64..=1.0, 1..6)) {
            let counts: Vec<DefectCounts> = fracs.iter()
                .map(|f| DefectCounts::new((total as f64 * f).floor() as u64, total).unwrap())
                .collect();
            let values: Vec<f64> = counts.iter().map(|c| compute_di(*c).unwrap()).collect();
            let mean = aggregate_metric(&values, AggregationMode::MeanOfPhases, None).unwrap();
            let pooled = aggregate_metric(&values, AggregationMode::PooledCounts, Some(&counts)).unwrap();
            prop_assert!((mean - pooled).abs() < 1e-12);
        }
    }
}
