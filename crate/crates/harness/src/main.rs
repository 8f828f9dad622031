//! Command-line frontend: attack-sweep simulation, recoverability
//! certification, and single-shot decoding.
//!
//! Exit codes: 0 success, 1 validation error (bad arguments, config, or
//! problem sizes), 2 runtime error (solver, numerical, IO).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use rse_core::decoder::{l1_decode, resilient_estimate, DecoderConfig, EstimateReport};
use rse_core::gpr::{AuxDataset, GprModel, KernelParams};
use rse_core::model::{build_dc_grid_model, ingest_auxiliary_csv, GridSpec, MeasurementModel};
use rse_core::sparsity::{nsp_check_with, rip_exact, FalsifierOpts, NspNorm};
use rse_core::Error;

use rse_harness::report::{emit_report, summarize, ReportFormat};
use rse_harness::runner::run_monte_carlo;
use rse_harness::scenario::{EstimatorKind, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "rse",
    about = "Resilient state estimation under sparse measurement attacks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo attack sweep and emit report tables.
    Simulate {
        /// Scenario config JSON
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results.csv, summary.csv, manifest.json
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override trials per sweep point
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated estimator subset
        #[arg(long)]
        estimators: Option<String>,
        /// Report format: csv or json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Certify recoverability of a matrix read from CSV (no header,
    /// one row per line).
    Certify {
        #[arg(long)]
        matrix: PathBuf,
        /// Sparsity level k
        #[arg(long)]
        k: usize,
        /// Nullspace property gamma
        #[arg(long)]
        gamma: f64,
        /// Norm index (1 or 2)
        #[arg(long)]
        q: u8,
        /// Also compute the exact restricted isometry constant delta_k
        #[arg(long)]
        rip: bool,
        /// Random directions for the sampled falsifier
        #[arg(long, default_value_t = 10_000)]
        directions: usize,
        /// Falsifier seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode one measurement vector with the ℓ1 decoder, optionally
    /// constrained by a trained measurement prior.
    Decode {
        /// Model JSON (see README for the schema)
        #[arg(long)]
        model: PathBuf,
        /// Measurement CSV with header `timestamp,<ch1>,...`; the last row
        /// is decoded
        #[arg(long)]
        measurements: PathBuf,
        /// Likelihood level for the prior ellipsoids
        #[arg(long, default_value_t = 0.95)]
        tau: f64,
        /// Write the report JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are success paths
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Shape(_)
        | Error::Topology(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::EmptyInput(_)
        | Error::TooLarge(_, _)
        | Error::Domain(_) => 1,
        Error::RankDeficient(_)
        | Error::Numerical(_)
        | Error::Infeasible(_)
        | Error::NoFeasibleSupport(_)
        | Error::Io(_)
        | Error::Csv(_) => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out, seed, trials, estimators, format } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ScenarioConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(list) = estimators {
                let parsed: Result<Vec<EstimatorKind>, Error> =
                    list.split(',').map(|s| EstimatorKind::parse(s.trim())).collect();
                cfg.estimators = parsed?;
            }
            cfg.validate()?;
            let format = ReportFormat::parse(&format)?;
            let results = run_monte_carlo(&cfg)?;
            let metrics = summarize(&results)?;
            let files = emit_report(&metrics, &results, &cfg, format, &out)?;
            for p in &metrics.points {
                println!(
                    "{:<14} {:<22} success_rate={:.3} median_err={:.4}",
                    p.point_label,
                    p.estimator.name(),
                    p.success_rate,
                    p.error_quantiles[2]
                );
            }
            println!(
                "wrote {} / {} / {}",
                files.results.display(),
                files.summary.display(),
                files.manifest.display()
            );
            Ok(())
        }
        Command::Certify { matrix, k, gamma, q, rip, directions, seed } => {
            let a = read_matrix_csv(&matrix)?;
            let norm = match q {
                1 => NspNorm::L1,
                2 => NspNorm::L2,
                other => {
                    return Err(Error::Domain(format!("q must be 1 or 2, got {other}")));
                }
            };
            let cert = nsp_check_with(&a, k, gamma, norm, &FalsifierOpts { directions, seed })?;
            let rip_est = if rip { Some(rip_exact(&a, k)?) } else { None };
            #[derive(serde::Serialize)]
            struct Out {
                nsp: rse_core::sparsity::NspCertificate,
                #[serde(skip_serializing_if = "Option::is_none")]
                rip: Option<rse_core::sparsity::RipEstimate>,
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&Out { nsp: cert, rip: rip_est }).unwrap()
            );
            Ok(())
        }
        Command::Decode { model, measurements, tau, out } => {
            let spec: DecodeModelFile =
                serde_json::from_str(&std::fs::read_to_string(&model)?)
                    .map_err(|e| Error::Config(format!("model file: {e}")))?;
            let meas = ingest_auxiliary_csv(std::fs::File::open(&measurements)?)?;
            let last = meas.z.ncols() - 1;
            let y = DVector::from_fn(meas.z.nrows(), |ch, _| meas.z[(ch, last)]);

            let model = spec.build_model()?;
            if y.len() != model.m() {
                return Err(Error::Shape(format!(
                    "measurement CSV has {} channels, model expects {}",
                    y.len(),
                    model.m()
                )));
            }
            let report = spec.decode(&model, &y, tau)?;
            let text = serde_json::to_string_pretty(&report).unwrap();
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn read_matrix_csv(path: &PathBuf) -> Result<DMatrix<f64>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, Error> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: (i + 1) as u64,
                    msg: format!("bad cell `{cell}`"),
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix CSV has no rows".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse { line: 0, msg: "ragged matrix rows".into() });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Schema of the `decode --model` JSON file.
#[derive(serde::Deserialize)]
struct DecodeModelFile {
    model: ModelSection,
    #[serde(default)]
    prior: Option<PriorSection>,
    #[serde(default)]
    decoder: Option<DecoderSection>,
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum ModelSection {
    Grid { grid: GridSpec, noise_std: NoiseField },
    Matrix { h: Vec<Vec<f64>>, noise_std: NoiseField },
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum NoiseField {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl NoiseField {
    fn resolve(&self, m: usize) -> Result<Vec<f64>, Error> {
        match self {
            NoiseField::Scalar(s) => Ok(vec![*s; m]),
            NoiseField::PerChannel(v) => {
                if v.len() != m {
                    return Err(Error::Config(format!(
                        "model.noise_std: expected {m} entries, found {}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(serde::Deserialize)]
struct PriorSection {
    amplitude: f64,
    lengthscale: f64,
    #[serde(default)]
    noise_std: Option<f64>,
    training: TrainingSection,
    query_z: Vec<f64>,
}

#[derive(serde::Deserialize)]
struct TrainingSection {
    /// p rows × N columns, row-major nested arrays
    z: Vec<Vec<f64>>,
    /// m rows × N columns
    y: Vec<Vec<f64>>,
}

#[derive(serde::Deserialize)]
struct DecoderSection {
    damping: Option<f64>,
    max_reweight_iters: Option<usize>,
    convergence_tol: Option<f64>,
}

fn nested_to_matrix(v: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Error> {
    if v.is_empty() {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    let cols = v[0].len();
    if cols == 0 || v.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{what}: ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(v.len(), cols, |i, j| v[i][j]))
}

impl DecodeModelFile {
    fn build_model(&self) -> Result<MeasurementModel, Error> {
        match &self.model {
            ModelSection::Grid { grid, noise_std } => {
                let m = grid.sensors.len();
                build_dc_grid_model(grid, &noise_std.resolve(m)?)
            }
            ModelSection::Matrix { h, noise_std } => {
                let h = nested_to_matrix(h, "model.h")?;
                let noise = noise_std.resolve(h.nrows())?;
                MeasurementModel::new(h, DVector::from_column_slice(&noise))
            }
        }
    }

    fn decode(
        &self,
        model: &MeasurementModel,
        y: &DVector<f64>,
        tau: f64,
    ) -> Result<EstimateReport, Error> {
        match &self.prior {
            None => {
                let (x, e) = l1_decode(model, y)?;
                let eps = DVector::zeros(model.m());
                let support: Vec<usize> = (0..e.len())
                    .filter(|&j| e[j].abs() > 1e-6 * 1.0_f64.max(y.amax()))
                    .collect();
                Ok(EstimateReport {
                    x_hat: x,
                    eps_hat: eps,
                    e_hat: e,
                    support,
                    iterations: 1,
                    objective_trace: vec![],
                    status: rse_core::solver::SolveStatus::Optimal,
                })
            }
            Some(prior) => {
                let z = nested_to_matrix(&prior.training.z, "prior.training.z")?;
                let ymat = nested_to_matrix(&prior.training.y, "prior.training.y")?;
                if ymat.nrows() != model.m() {
                    return Err(Error::Config(format!(
                        "prior.training.y: {} rows but model has {} channels",
                        ymat.nrows(),
                        model.m()
                    )));
                }
                let gp_noise = prior.noise_std.unwrap_or(1e-2);
                let params = KernelParams::new(
                    prior.amplitude,
                    prior.lengthscale,
                    vec![gp_noise; model.m()],
                )?;
                let ds = AuxDataset::new(z, ymat)?;
                let gp = GprModel::train_with_jitter(&ds, &params, None)?;
                if prior.query_z.len() != ds.z.nrows() {
                    return Err(Error::Config(format!(
                        "prior.query_z: expected {} entries, found {}",
                        ds.z.nrows(),
                        prior.query_z.len()
                    )));
                }
                let zq = DVector::from_column_slice(&prior.query_z);

                let dec = self.decoder.as_ref();
                let damping = dec
                    .and_then(|d| d.damping)
                    .unwrap_or_else(|| (1e-4 * y.amax()).max(1e-12));
                let cfg = DecoderConfig::new(
                    tau,
                    damping,
                    dec.and_then(|d| d.max_reweight_iters).unwrap_or(10),
                    dec.and_then(|d| d.convergence_tol).unwrap_or(1e-6),
                )?;
                resilient_estimate(model, &gp, &zq, y, &cfg)
            }
        }
    }
}
