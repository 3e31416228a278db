//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fail.

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use inspectlens_core::datastore::{self, DatastoreError};
use inspectlens_core::linalg::norm2;
use inspectlens_core::metrics::{
    aggregate_metric, check_band_tiling, classify_band, project_report, AggregationMode, BandLabel,
    DefectCounts, InspectionSession, Phase, PhaseObservation, ProjectRecord, BANDS,
};
use inspectlens_core::planner::{solve_parameter, PlannerError, TuneRequest};
use inspectlens_core::regression::{
    build_design_matrix, fit_least_squares_at, linear_response, predict, CoefficientSet,
    FitWarning, ModelKind, Observation, PredictionResult, RegressionError, Regressor,
    RegressorVector,
};
use inspectlens_service::{router, ApiState, RegisterResponse, ServiceConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed < budget {
        Ok(())
    } else {
        Err(format!("took {elapsed:?}, budget {budget:?}"))
    }
}

fn published_di_averages() -> Check {
    let start = Instant::now();
    let rows = datastore::load_fixture().map_err(|e| e.to_string())?;
    ensure!(rows.len() == 15, "expected 15 projects, got {}", rows.len());
    let mut worst = 0.0f64;
    for row in &rows {
        let avg = aggregate_metric(&row.di_phases(), AggregationMode::MeanOfPhases, None)
            .map_err(|e| e.to_string())?;
        let report = project_report(&row.to_record(), AggregationMode::MeanOfPhases)
            .map_err(|e| e.to_string())?;
        let via_report = report.avg_di.ok_or("report has no average DI")?;
        for got in [avg, via_report] {
            let dev = (got - row.avg_di).abs();
            worst = worst.max(dev);
            ensure!(
                dev <= 0.005,
                "{}: mean DI {got} vs published {}",
                row.project_id,
                row.avg_di
            );
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("15 projects, max deviation {worst:.4}"))
}

fn published_ipm_averages() -> Check {
    let start = Instant::now();
    let rows = datastore::load_fixture().map_err(|e| e.to_string())?;
    ensure!(rows.len() == 15, "expected 15 projects, got {}", rows.len());
    let mut worst = 0.0f64;
    for row in &rows {
        let avg = aggregate_metric(&row.ipm_phases(), AggregationMode::MeanOfPhases, None)
            .map_err(|e| e.to_string())?;
        let report = project_report(&row.to_record(), AggregationMode::MeanOfPhases)
            .map_err(|e| e.to_string())?;
        for got in [avg, report.avg_ipm] {
            let dev = (got - row.avg_ipm).abs();
            worst = worst.max(dev);
            ensure!(
                dev <= 0.01,
                "{}: mean IPM {got} vs published {}",
                row.project_id,
                row.avg_ipm
            );
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("15 projects, max deviation {worst:.4}"))
}

/// The published band table, written out independently of the library constant.
const BAND_TABLE: [(BandLabel, f64, f64); 10] = [
    (BandLabel::Worse, 0.0, 0.1),
    (BandLabel::VeryLow, 0.1, 0.2),
    (BandLabel::Low, 0.2, 0.3),
    (BandLabel::Normal, 0.3, 0.4),
    (BandLabel::AboveNormal, 0.4, 0.5),
    (BandLabel::High, 0.5, 0.6),
    (BandLabel::VeryHigh, 0.6, 0.7),
    (BandLabel::Best, 0.7, 0.8),
    (BandLabel::Excellent, 0.8, 0.9),
    (BandLabel::Ideal, 0.9, 1.0),
];

fn expected_label(di: f64) -> BandLabel {
    BAND_TABLE
        .iter()
        .rev()
        .find(|(_, lower, _)| di >= *lower)
        .unwrap()
        .0
}

fn band_table() -> Check {
    for ((label, lower, upper), band) in BAND_TABLE.iter().zip(BANDS.iter()) {
        ensure!(
            band.label == *label && band.lower == *lower && band.upper == *upper,
            "band {band:?} differs from ({label}, {lower}, {upper})"
        );
        for probe in [*lower, (lower + upper) / 2.0] {
            let got = classify_band(probe).map_err(|e| e.to_string())?.label;
            ensure!(got == *label, "{probe} classified {got}, expected {label}");
        }
    }
    check_band_tiling(&BANDS)?;
    for (di, want) in [
        (0.67, BandLabel::VeryHigh),
        (0.21, BandLabel::Low),
        (0.4, BandLabel::AboveNormal),
        (1.0, BandLabel::Ideal),
        (0.0, BandLabel::Worse),
    ] {
        let got = classify_band(di).map_err(|e| e.to_string())?.label;
        ensure!(got == want, "{di} classified {got}, expected {want}");
    }
    let rows = datastore::load_fixture().map_err(|e| e.to_string())?;
    let mut count = 0;
    for row in &rows {
        for di in row.di_phases() {
            let got = classify_band(di).map_err(|e| e.to_string())?.label;
            ensure!(
                got == expected_label(di),
                "{}: {di} classified {got}",
                row.project_id
            );
            count += 1;
        }
    }
    ensure!(count == 45, "classified {count} phase values, expected 45");
    Ok("10 bands tile [0,1]; 45 phase DIs classified".to_string())
}

/// `(XᵀX) b = Xᵀy` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, yi) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let tail: f64 = (i + 1..p).map(|j| a[i][j] * b[j]).sum();
        b[i] = (a[i][p] - tail) / a[i][i];
    }
    b
}

fn random_x(rng: &mut ChaCha8Rng, model: ModelKind) -> RegressorVector {
    RegressorVector {
        x1: rng.gen_range(0.5..40.0),
        x2: rng.gen_range(0.0..20.0),
        x3: f64::from(rng.gen_range(1u32..=10)),
        x4: rng.gen_range(0.0..25.0),
        x5: (model == ModelKind::Team).then(|| rng.gen_range(1.0..4.0)),
    }
}

/// Observations with `y = planted · [1, x] + noise`, plus the raw design rows.
fn planted(
    rng: &mut ChaCha8Rng,
    model: ModelKind,
    n: usize,
    noise: f64,
) -> (Vec<Observation>, Vec<Vec<f64>>, Vec<f64>) {
    let betas: Vec<f64> = (0..model.coefficient_count())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut rows = Vec::with_capacity(n);
    let obs = (0..n)
        .map(|i| {
            let x = random_x(rng, model);
            let values = x.values(model).unwrap();
            let y = linear_response(&betas, &values) + noise * rng.gen_range(-1.0..1.0);
            rows.push(std::iter::once(1.0).chain(values).collect());
            Observation {
                source: format!("P{}", i + 1),
                x,
                y,
            }
        })
        .collect();
    (obs, rows, betas)
}

fn least_squares_recovery() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let at = chrono::DateTime::<chrono::Utc>::UNIX_EPOCH;
    let mut instances = 0;
    for model in [ModelKind::Process, ModelKind::Team] {
        for _ in 0..20 {
            let n = rng.gen_range(6..=30);
            let (obs, _, betas) = planted(&mut rng, model, n, 0.0);
            let dm = build_design_matrix(obs, model).map_err(|e| e.to_string())?;
            let fit = fit_least_squares_at(&dm, at).map_err(|e| e.to_string())?;
            for (got, want) in fit.betas.iter().zip(&betas) {
                ensure!(
                    (got - want).abs() < 1e-9,
                    "{model} n={n}: recovered {got}, planted {want}"
                );
            }

            // Noisy instance of the same size for the oracle and orthogonality checks.
            let n = n.max(model.coefficient_count() + 2);
            let (obs, rows_noisy, _) = planted(&mut rng, model, n, 0.05);
            let dm = build_design_matrix(obs, model).map_err(|e| e.to_string())?;
            let fit = fit_least_squares_at(&dm, at).map_err(|e| e.to_string())?;
            let oracle = normal_equations(&rows_noisy, &dm.y());
            for (got, want) in fit.betas.iter().zip(&oracle) {
                ensure!(
                    (got - want).abs() < 1e-8,
                    "{model} n={n}: QR {got} vs normal equations {want}"
                );
            }
            let r = &fit.diagnostics.residuals;
            let scale = dm.matrix().norm() * norm2(r);
            for g in dm.matrix().tr_mul_vec(r) {
                ensure!(
                    g.abs() <= 1e-8 * scale,
                    "{model} n={n}: Xᵀr component {g} (scale {scale})"
                );
            }
            instances += 1;
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "{instances} instances recovered; oracle and orthogonality hold"
    ))
}

fn fit_rows(model: ModelKind, n: usize, seed: u64) -> Result<CoefficientSet, RegressionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, _, _) = planted(&mut rng, model, n, 0.1);
    let dm = build_design_matrix(obs, model)?;
    fit_least_squares_at(&dm, chrono::DateTime::<chrono::Utc>::UNIX_EPOCH)
}

fn minimum_rows() -> Check {
    for (model, required) in [(ModelKind::Process, 5), (ModelKind::Team, 6)] {
        match fit_rows(model, required - 1, 1) {
            Err(RegressionError::InsufficientRows {
                required: r,
                provided: p,
                ..
            }) if r == required && p == required - 1 => {}
            other => return Err(format!("{model} with {} rows: {other:?}", required - 1)),
        }
        let fit = fit_rows(model, required, 1)
            .map_err(|e| format!("{model} with {required} rows: {e}"))?;
        ensure!(
            fit.diagnostics.degrees_of_freedom == 0,
            "{model}: expected zero degrees of freedom"
        );
        if model == ModelKind::Process {
            ensure!(
                fit.diagnostics
                    .warnings()
                    .contains(&FitWarning::ZeroDegreesOfFreedom),
                "process fit on 5 rows has no zero-dof warning"
            );
        }
    }
    Ok("process rejects 4/accepts 5 (zero-dof warning); team rejects 5/accepts 6".to_string())
}

fn random_tune(rng: &mut ChaCha8Rng) -> (CoefficientSet, TuneRequest) {
    let model = if rng.gen_bool(0.5) {
        ModelKind::Process
    } else {
        ModelKind::Team
    };
    let betas: Vec<f64> = (0..model.coefficient_count())
        .map(|_| {
            let b: f64 = rng.gen_range(-1.0..1.0);
            if b.abs() < 1e-3 {
                0.25
            } else {
                b
            }
        })
        .collect();
    let solve_for = *model.regressors().choose(rng).unwrap();
    let fixed = model
        .regressors()
        .iter()
        .filter(|r| **r != solve_for)
        .map(|r| (*r, rng.gen_range(0.0..30.0)))
        .collect();
    let req = TuneRequest {
        target_y: rng.gen_range(-1.0..3.0),
        solve_for,
        fixed,
    };
    (CoefficientSet::from_betas(model, betas).unwrap(), req)
}

fn vector_from(model: ModelKind, values: &BTreeMap<Regressor, f64>) -> RegressorVector {
    let mut x = RegressorVector {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
        x4: 0.0,
        x5: None,
    };
    for (r, v) in values {
        x.set(*r, *v);
    }
    if model == ModelKind::Process {
        x.x5 = None;
    }
    x
}

fn tune_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (coeffs, req) = random_tune(&mut rng);
        let solved = solve_parameter(&coeffs, &req).map_err(|e| e.to_string())?;
        let mut all = req.fixed.clone();
        all.insert(req.solve_for, solved.value);
        let y = predict(&coeffs, &vector_from(coeffs.model, &all))
            .map_err(|e| e.to_string())?
            .y_raw;
        worst = worst.max((y - req.target_y).abs());
        ensure!(
            (y - req.target_y).abs() < 1e-9,
            "prediction {y} at solution vs target {}",
            req.target_y
        );
    }
    for _ in 0..20 {
        let (mut coeffs, req) = random_tune(&mut rng);
        coeffs.betas[req.solve_for.index()] = 0.0;
        match solve_parameter(&coeffs, &req) {
            Err(PlannerError::UnsolvableParameter { regressor }) if regressor == req.solve_for => {}
            other => return Err(format!("zero coefficient for {}: {other:?}", req.solve_for)),
        }
    }
    Ok(format!(
        "100 requests, max |error| {worst:.1e}; 20 zero-slope cases rejected"
    ))
}

async fn service_call(app: &axum::Router, path: &str, body: String) -> Result<Vec<u8>, String> {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes()
        .to_vec();
    ensure!(
        status == StatusCode::OK,
        "{path}: {status} {}",
        String::from_utf8_lossy(&bytes)
    );
    Ok(bytes)
}

fn cross_interface() -> Check {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let app = router(Arc::new(ApiState::new()), &ServiceConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for i in 0..50 {
        let model = if i % 2 == 0 {
            ModelKind::Process
        } else {
            ModelKind::Team
        };
        let scale = if model == ModelKind::Process {
            0.05
        } else {
            0.5
        };
        let betas = (0..model.coefficient_count())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        let coeffs = CoefficientSet::from_betas(model, betas).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("c{i}.json"));
        datastore::save_coefficients(&coeffs, &path).map_err(|e| e.to_string())?;
        let x = random_x(&mut rng, model);

        let mut cmd = Command::new(env!("CARGO_BIN_EXE_inspectlens"));
        cmd.args(["--format", "json", "--quiet", "predict", "--coeffs"])
            .arg(&path);
        for r in model.regressors() {
            cmd.arg(format!("--{}", r.key()))
                .arg(x.get(*r).unwrap().to_string());
        }
        let out = cmd.output().map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "CLI failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let cli: PredictionResult =
            serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;

        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let svc: PredictionResult = runtime.block_on(async {
            let reg = service_call(&app, "/api/v1/coefficients", text).await?;
            let reg: RegisterResponse = serde_json::from_slice(&reg).map_err(|e| e.to_string())?;
            let body = serde_json::json!({ "coeff_id": reg.coeff_id, "x": x }).to_string();
            let bytes = service_call(&app, "/api/v1/predict", body).await?;
            serde_json::from_slice(&bytes).map_err(|e| e.to_string())
        })?;
        ensure!(
            cli.y_raw.to_bits() == svc.y_raw.to_bits() && cli.band == svc.band,
            "input {i}: CLI {cli:?} vs service {svc:?}"
        );
        ensure!(cli == svc, "input {i}: CLI {cli:?} vs service {svc:?}");
    }
    Ok("50 inputs, identical y_raw and band".to_string())
}

fn random_record(rng: &mut ChaCha8Rng, idx: usize, with_metadata: bool) -> ProjectRecord {
    let keep = rng.gen_range(1..=3);
    let phases = Phase::ALL[..keep]
        .iter()
        .map(|&phase| {
            let a = rng.gen_range(0..10_000u64);
            let b = rng.gen_range(0..10_000u64);
            PhaseObservation {
                phase,
                counts: DefectCounts {
                    inspection_found: a.min(b),
                    total_found: a.max(b),
                },
                session: InspectionSession {
                    num_inspectors: rng.gen_range(1..50),
                    inspection_time: rng.gen_range(1e-3..1e4),
                    prep_time: rng.gen_range(0.0..100.0),
                    experience_level: rng.gen_range(0.0..40.0),
                    function_points: rng.gen_range(1e-3..1e5),
                },
            }
        })
        .collect();
    ProjectRecord {
        id: format!("P{idx}"),
        total_person_hours: with_metadata.then(|| rng.gen_range(1.0..1e4)),
        total_captured_pct: with_metadata.then(|| rng.gen_range(0.0..=100.0)),
        phases,
    }
}

fn serialization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    for round in 0..50 {
        let n = rng.gen_range(1..6);
        let json_recs: Vec<ProjectRecord> =
            (0..n).map(|i| random_record(&mut rng, i, true)).collect();
        let text = datastore::records_to_json(&json_recs).map_err(|e| e.to_string())?;
        let back = datastore::parse_records_json(&text).map_err(|e| e.to_string())?;
        ensure!(
            back == json_recs,
            "JSON record round trip {round} changed the data"
        );

        let csv_recs: Vec<ProjectRecord> =
            (0..n).map(|i| random_record(&mut rng, i, false)).collect();
        let text = datastore::records_to_csv(&csv_recs).map_err(|e| e.to_string())?;
        let back = datastore::parse_records_csv(&text).map_err(|e| e.to_string())?;
        ensure!(
            back == csv_recs,
            "CSV record round trip {round} changed the data"
        );

        let model = if round % 2 == 0 {
            ModelKind::Process
        } else {
            ModelKind::Team
        };
        let fit = fit_rows(model, rng.gen_range(8..20), round).map_err(|e| e.to_string())?;
        let path = dir.path().join("c.json");
        datastore::save_coefficients(&fit, &path).map_err(|e| e.to_string())?;
        let back = datastore::load_coefficients(&path).map_err(|e| e.to_string())?;
        ensure!(
            back == fit,
            "coefficient round trip {round} changed the set"
        );
        let bits = |s: &CoefficientSet| s.betas.iter().map(|b| b.to_bits()).collect::<Vec<_>>();
        ensure!(
            bits(&back) == bits(&fit),
            "coefficient round trip {round} is not bit-exact"
        );
    }

    ensure!(
        datastore::FIXTURE_SHA256
            == "2eaeee910e0394804f66c4e22473316f8ca0e78dae8384c70f6d57bfa48e72c4",
        "pinned fixture checksum changed"
    );
    let bundled = datastore::bundled_fixture_text();
    datastore::parse_fixture(bundled.as_bytes()).map_err(|e| e.to_string())?;
    let tampered = bundled.replacen("0.51", "0.52", 1);
    ensure!(tampered != bundled, "could not tamper with the fixture");
    match datastore::parse_fixture(tampered.as_bytes()) {
        Err(DatastoreError::FixtureCorrupt(_)) => {}
        other => return Err(format!("tampered fixture accepted: {other:?}")),
    }
    Ok("50 record and coefficient round trips; fixture checksum pinned".to_string())
}

fn main() -> ExitCode {
    std::env::remove_var(datastore::FIXTURE_DIR_ENV);
    let criteria: [Criterion; 8] = [
        ("published DI averages", published_di_averages),
        ("published IPM averages", published_ipm_averages),
        ("band table", band_table),
        ("least-squares recovery", least_squares_recovery),
        ("minimum-rows enforcement", minimum_rows),
        ("tune round trip", tune_round_trip),
        ("cross-interface equivalence", cross_interface),
        ("serialization", serialization),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({ms} ms)");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
