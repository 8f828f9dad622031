//! Aggregation and report emission: success rates and error quantiles per
//! sweep point, trial tables in plot-ready long format, and the run
//! manifest. Output bytes are fully determined by (config, seed); wall
//! times go to the manifest only.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rse_core::{Error, Result};

use crate::runner::TrialResult;
use crate::scenario::{EstimatorKind, ScenarioConfig};

/// Aggregate for one (sweep point, estimator) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMetrics {
    pub point_idx: usize,
    pub point_label: String,
    pub estimator: EstimatorKind,
    pub trials: usize,
    pub success_rate: f64,
    /// min / 25% / median / 75% / max of the relative state error,
    /// linear-interpolation quantiles
    pub error_quantiles: [f64; 5],
    /// median of the per-trial targeted-state rms error, when targets exist
    pub median_target_rms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuccessMetrics {
    pub points: Vec<PointMetrics>,
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Groups results by (point, estimator) and aggregates rates and quantiles.
pub fn summarize(results: &[TrialResult]) -> Result<SuccessMetrics> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no trial results to summarize".into()));
    }
    let mut keys: Vec<(usize, EstimatorKind, String)> = Vec::new();
    for r in results {
        if !keys
            .iter()
            .any(|(p, e, _)| *p == r.point_idx && *e == r.estimator)
        {
            keys.push((r.point_idx, r.estimator, r.point_label.clone()));
        }
    }
    keys.sort_by(|a, b| (a.0, estimator_rank(a.1)).cmp(&(b.0, estimator_rank(b.1))));

    let mut points = Vec::with_capacity(keys.len());
    for (point_idx, estimator, point_label) in keys {
        let group: Vec<&TrialResult> = results
            .iter()
            .filter(|r| r.point_idx == point_idx && r.estimator == estimator)
            .collect();
        let trials = group.len();
        let successes = group.iter().filter(|r| r.success).count();
        let mut errors: Vec<f64> = group.iter().map(|r| r.rel_error).collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = [
            quantile_sorted(&errors, 0.0),
            quantile_sorted(&errors, 0.25),
            quantile_sorted(&errors, 0.5),
            quantile_sorted(&errors, 0.75),
            quantile_sorted(&errors, 1.0),
        ];
        let mut rms: Vec<f64> = group.iter().filter_map(|r| r.target_rms()).collect();
        rms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_target_rms = if rms.is_empty() {
            None
        } else {
            Some(quantile_sorted(&rms, 0.5))
        };
        points.push(PointMetrics {
            point_idx,
            point_label,
            estimator,
            trials,
            success_rate: successes as f64 / trials as f64,
            error_quantiles: q,
            median_target_rms,
        });
    }
    Ok(SuccessMetrics { points })
}

fn estimator_rank(e: EstimatorKind) -> usize {
    match e {
        EstimatorKind::LeastSquares => 0,
        EstimatorKind::ReweightedL1 => 1,
        EstimatorKind::ReweightedL1Prior => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("format: unknown `{other}` (csv|json)"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ScenarioConfig,
    master_seed: u64,
    success_threshold: f64,
    quantile_method: &'static str,
    versions: Versions,
    total_wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct Versions {
    rse_core: &'static str,
    rse_harness: &'static str,
}

/// Emitted file paths.
pub struct ReportFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `results.{csv|json}`, `summary.{csv|json}`, and `manifest.json`.
/// Fails before creating any file when `results` is empty. Per-trial wall
/// times are aggregated into the manifest and never appear in the tables.
pub fn emit_report(
    metrics: &SuccessMetrics,
    results: &[TrialResult],
    cfg: &ScenarioConfig,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<ReportFiles> {
    if results.is_empty() {
        return Err(Error::EmptyInput("refusing to emit an empty report".into()));
    }
    fs::create_dir_all(out_dir)?;

    let (results_path, summary_path) = match format {
        ReportFormat::Csv => (out_dir.join("results.csv"), out_dir.join("summary.csv")),
        ReportFormat::Json => (out_dir.join("results.json"), out_dir.join("summary.json")),
    };

    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(&results_path)?;
            w.write_record([
                "point_idx",
                "point_label",
                "trial",
                "estimator",
                "rel_error",
                "max_abs_rel_error",
                "target_rms_rel_error",
                "success",
            ])?;
            for r in results {
                w.write_record([
                    r.point_idx.to_string(),
                    r.point_label.clone(),
                    r.trial.to_string(),
                    r.estimator.name().to_string(),
                    r.rel_error.to_string(),
                    r.max_abs_rel_error.to_string(),
                    r.target_rms().map(|v| v.to_string()).unwrap_or_default(),
                    r.success.to_string(),
                ])?;
            }
            w.flush()?;

            let mut w = csv::Writer::from_path(&summary_path)?;
            w.write_record([
                "point_idx",
                "point_label",
                "estimator",
                "trials",
                "success_rate",
                "err_min",
                "err_q25",
                "err_median",
                "err_q75",
                "err_max",
                "median_target_rms",
            ])?;
            for p in &metrics.points {
                w.write_record([
                    p.point_idx.to_string(),
                    p.point_label.clone(),
                    p.estimator.name().to_string(),
                    p.trials.to_string(),
                    p.success_rate.to_string(),
                    p.error_quantiles[0].to_string(),
                    p.error_quantiles[1].to_string(),
                    p.error_quantiles[2].to_string(),
                    p.error_quantiles[3].to_string(),
                    p.error_quantiles[4].to_string(),
                    p.median_target_rms.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                point_idx: usize,
                point_label: &'a str,
                trial: usize,
                estimator: &'static str,
                rel_error: f64,
                max_abs_rel_error: f64,
                target_rms_rel_error: Option<f64>,
                success: bool,
            }
            let rows: Vec<Row> = results
                .iter()
                .map(|r| Row {
                    point_idx: r.point_idx,
                    point_label: &r.point_label,
                    trial: r.trial,
                    estimator: r.estimator.name(),
                    rel_error: r.rel_error,
                    max_abs_rel_error: r.max_abs_rel_error,
                    target_rms_rel_error: r.target_rms(),
                    success: r.success,
                })
                .collect();
            fs::write(&results_path, serde_json::to_string_pretty(&rows).unwrap())?;
            fs::write(&summary_path, serde_json::to_string_pretty(metrics).unwrap())?;
        }
    }

    let manifest = Manifest {
        config: cfg,
        master_seed: cfg.master_seed,
        success_threshold: cfg.success_threshold,
        quantile_method: "linear-interpolation",
        versions: Versions {
            rse_core: "0.1.0",
            rse_harness: env!("CARGO_PKG_VERSION"),
        },
        total_wall_time_s: results.iter().map(|r| r.wall_time_s).sum(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap())?;

    Ok(ReportFiles {
        results: results_path,
        summary: summary_path,
        manifest: manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn result(point: usize, trial: usize, est: EstimatorKind, err: f64, ok: bool) -> TrialResult {
        TrialResult {
            point_idx: point,
            point_label: format!("percent={}", 10 * (point + 1)),
            trial,
            estimator: est,
            rel_error: err,
            per_target_rel_errors: vec![],
            max_abs_rel_error: err,
            success: ok,
            wall_time_s: 0.01,
        }
    }

    #[test]
    fn quantiles_linear_interpolation() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&sorted, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&sorted, 0.25), 1.75);
    }

    #[test]
    fn summarize_rates() {
        let e = EstimatorKind::LeastSquares;
        let all = vec![
            result(0, 0, e, 0.01, true),
            result(0, 1, e, 0.02, true),
            result(1, 0, e, 0.5, false),
            result(1, 1, e, 0.01, true),
        ];
        let m = summarize(&all).unwrap();
        assert_eq!(m.points.len(), 2);
        assert_relative_eq!(m.points[0].success_rate, 1.0);
        assert_relative_eq!(m.points[1].success_rate, 0.5);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn emit_refuses_empty_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = crate::scenario::tests_support::small_config();
        let e = EstimatorKind::ReweightedL1;
        let results = vec![result(0, 0, e, 0.01, true), result(0, 1, e, 0.2, false)];
        let metrics = summarize(&results).unwrap();
        assert!(emit_report(&metrics, &[], &cfg, ReportFormat::Csv, dir.path()).is_err());
        let files = emit_report(&metrics, &results, &cfg, ReportFormat::Csv, dir.path()).unwrap();

        // ingest the emitted CSV back and compare the numeric columns
        let mut rd = csv::Reader::from_path(&files.results).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].get(4).unwrap(), "0.01");
        assert_eq!(rows[1].get(7).unwrap(), "false");
        let manifest = std::fs::read_to_string(&files.manifest).unwrap();
        assert!(manifest.contains("\"master_seed\": 7"));
    }
}
