//! Per-channel Gaussian-process measurement prior: squared-exponential
//! kernel, training (one SPD factorization per distinct noise level),
//! posterior queries, and the likelihood ellipsoid the estimator consumes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::chi2_quantile;

/// Squared-exponential hyperparameters and per-channel noise levels.
///
/// `noise_std` entries may be zero (exact interpolation); training then
/// fails with a factorization error when the kernel matrix is singular.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelParams {
    pub amplitude: f64,
    pub lengthscale: f64,
    pub noise_std: Vec<f64>,
}

impl KernelParams {
    pub fn new(amplitude: f64, lengthscale: f64, noise_std: Vec<f64>) -> Result<Self> {
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::Domain(format!("amplitude must be > 0, got {amplitude}")));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::Domain(format!(
                "lengthscale must be > 0, got {lengthscale}"
            )));
        }
        if noise_std.is_empty() {
            return Err(Error::Domain("noise_std must be non-empty".into()));
        }
        if noise_std.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::Domain(
                "noise standard deviations must be finite and >= 0".into(),
            ));
        }
        Ok(Self { amplitude, lengthscale, noise_std })
    }
}

/// k(z, z') = A·exp(−‖z−z'‖²/(2l)).
pub fn kernel_se(z1: &DVector<f64>, z2: &DVector<f64>, params: &KernelParams) -> f64 {
    let d2 = (z1 - z2).norm_squared();
    params.amplitude * (-d2 / (2.0 * params.lengthscale)).exp()
}

/// Training data: auxiliary inputs `z` (p×N) and sensor outputs `y` (m×N),
/// column i of each belonging to the same time step.
#[derive(Debug, Clone)]
pub struct AuxDataset {
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl AuxDataset {
    pub fn new(z: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if z.ncols() == 0 {
            return Err(Error::EmptyInput("dataset needs N >= 1 points".into()));
        }
        if z.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "z has {} columns, y has {}",
                z.ncols(),
                y.ncols()
            )));
        }
        Ok(Self { z, y })
    }

    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trained prior. Channels sharing a noise level share one factorization
/// of K + σ²I; the per-channel mean weights are cached at train time.
#[derive(Debug, Clone)]
pub struct GprModel {
    z_train: DMatrix<f64>,
    params: KernelParams,
    /// one factorization per distinct σ², indexed by `chol_of_channel`
    chols: Vec<Cholesky<f64, Dyn>>,
    chol_of_channel: Vec<usize>,
    /// alpha_j = (K + σ_j²I)⁻¹ Y_j'
    alphas: Vec<DVector<f64>>,
}

/// Builds the kernel Gram matrix K with K_ij = k(z_i, z_j).
pub fn kernel_matrix(z: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
    let n = z.ncols();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.amplitude;
        for j in (i + 1)..n {
            let v = kernel_se(&z.column(i).into_owned(), &z.column(j).into_owned(), params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

impl GprModel {
    /// Trains without jitter; a numerically non-positive-definite
    /// K + σ_j²I is an error suggesting `train_with_jitter`.
    pub fn train(dataset: &AuxDataset, params: &KernelParams) -> Result<Self> {
        Self::train_impl(dataset, params, None)
    }

    /// Trains, retrying each failed factorization once with `jitter`
    /// (defaulting to 1e-10·A) added to the diagonal.
    pub fn train_with_jitter(
        dataset: &AuxDataset,
        params: &KernelParams,
        jitter: Option<f64>,
    ) -> Result<Self> {
        let jitter = jitter.unwrap_or(1e-10 * params.amplitude);
        Self::train_impl(dataset, params, Some(jitter))
    }

    fn train_impl(dataset: &AuxDataset, params: &KernelParams, jitter: Option<f64>) -> Result<Self> {
        let m = params.noise_std.len();
        if dataset.y.nrows() != m {
            return Err(Error::Shape(format!(
                "dataset has {} output channels but params carry {m} noise levels",
                dataset.y.nrows()
            )));
        }
        let n = dataset.len();
        let kmat = kernel_matrix(&dataset.z, params);

        // factor once per distinct noise variance
        let mut variances: Vec<f64> = Vec::new();
        let mut chol_of_channel = Vec::with_capacity(m);
        for j in 0..m {
            let var = params.noise_std[j] * params.noise_std[j];
            let idx = variances.iter().position(|&v| v == var).unwrap_or_else(|| {
                variances.push(var);
                variances.len() - 1
            });
            chol_of_channel.push(idx);
        }

        let mut chols = Vec::with_capacity(variances.len());
        for &var in &variances {
            let mut kk = kmat.clone();
            for i in 0..n {
                kk[(i, i)] += var;
            }
            let attempt = Cholesky::new(kk.clone()).or_else(|| {
                jitter.and_then(|eps| {
                    let mut kj = kk.clone();
                    for i in 0..n {
                        kj[(i, i)] += eps;
                    }
                    Cholesky::new(kj)
                })
            });
            match attempt {
                Some(c) => chols.push(c),
                None => {
                    return Err(Error::Numerical(format!(
                        "K + {var}·I is not positive definite; \
                         consider train_with_jitter or a larger noise level"
                    )))
                }
            }
        }

        let mut alphas = Vec::with_capacity(m);
        for j in 0..m {
            let yj = dataset.y.row(j).transpose();
            alphas.push(chols[chol_of_channel[j]].solve(&yj));
        }

        Ok(Self {
            z_train: dataset.z.clone(),
            params: params.clone(),
            chols,
            chol_of_channel,
            alphas,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Number of output channels.
    pub fn channels(&self) -> usize {
        self.alphas.len()
    }

    /// Posterior mean and variance per channel at a query point.
    pub fn posterior(&self, z: &DVector<f64>) -> GprPosterior {
        let n = self.z_train.ncols();
        let kvec = DVector::from_fn(n, |i, _| {
            kernel_se(&self.z_train.column(i).into_owned(), z, &self.params)
        });
        let kzz = self.params.amplitude;

        // one solve per distinct noise level
        let solved: Vec<DVector<f64>> = self.chols.iter().map(|c| c.solve(&kvec)).collect();

        let m = self.channels();
        let mut mu = DVector::zeros(m);
        let mut sigma = DVector::zeros(m);
        for j in 0..m {
            mu[j] = kvec.dot(&self.alphas[j]);
            let var = kzz - kvec.dot(&solved[self.chol_of_channel[j]]);
            sigma[j] = var.max(0.0);
        }
        GprPosterior { mu, sigma }
    }
}

/// Posterior over the measurement vector at one query point: mean `mu`
/// and per-channel variances `sigma` (the cross-channel covariance is
/// diagonal by construction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GprPosterior {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

/// The set {v : ‖v − center‖²_diag(inv_weights) ≤ radius_sq} containing the
/// true measurement with probability τ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidConstraint {
    pub center: DVector<f64>,
    /// diagonal of Σ⁻¹
    pub inv_weights: DVector<f64>,
    /// χ²_m(τ)
    pub radius_sq: f64,
}

impl EllipsoidConstraint {
    /// Membership margin: radius_sq − ‖v−center‖²_W; nonnegative inside.
    pub fn margin(&self, v: &DVector<f64>) -> f64 {
        let d = v - &self.center;
        let q: f64 = d
            .iter()
            .zip(self.inv_weights.iter())
            .map(|(&di, &wi)| di * di * wi)
            .sum();
        self.radius_sq - q
    }
}

/// Likelihood ellipsoid at level τ for a diagonal Gaussian posterior.
pub fn likelihood_ellipsoid(posterior: &GprPosterior, tau: f64) -> Result<EllipsoidConstraint> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!(
            "tau must be in (0,1); tau = {tau} gives an unbounded or empty set"
        )));
    }
    let m = posterior.mu.len();
    if posterior.sigma.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Numerical(
            "posterior variance not strictly positive; ellipsoid undefined".into(),
        ));
    }
    let inv_weights = DVector::from_fn(m, |j, _| 1.0 / posterior.sigma[j]);
    Ok(EllipsoidConstraint {
        center: posterior.mu.clone(),
        inv_weights,
        radius_sq: chi2_quantile(m, tau)?,
    })
}
