//! Resilient decoders: exhaustive smallest-support decoding, ℓ1 decoding,
//! the prior-constrained re-weighted ℓ1 estimator, and the reconstruction
//! error bounds that govern them.

use itertools::Itertools;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{likelihood_ellipsoid, EllipsoidConstraint, GprModel};
use crate::model::MeasurementModel;
use crate::solver::{
    solve_l1_equality, solve_weighted_l1, ConeSpec, ConicProblem, ConicStatus, EllipsoidTarget,
    SolveOptions, SolveStatus, WeightedL1Problem,
};
use crate::sparsity::SUBSET_GUARD;
use crate::stats::chi2_quantile;

/// Clamps a scalar to [−delta, delta].
pub fn sat(x: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    x.clamp(-delta, delta)
}

/// Keeps the k largest-magnitude entries, zeroing the rest. Ties broken by
/// lower index; the result minimizes ‖e − f‖₁ over all k-sparse f.
pub fn best_k_term(e: &DVector<f64>, k: usize) -> DVector<f64> {
    let m = e.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| e[j].abs().partial_cmp(&e[i].abs()).unwrap().then(i.cmp(&j)));
    let mut out = DVector::zeros(m);
    for &i in idx.iter().take(k.min(m)) {
        out[i] = e[i];
    }
    out
}

/// ‖e − e[k]‖₁: the mass outside the k largest magnitudes.
pub fn l1_tail(e: &DVector<f64>, k: usize) -> f64 {
    let m = e.len();
    if k >= m {
        return 0.0;
    }
    let mut mags: Vec<f64> = e.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    mags[k..].iter().sum()
}

/// w_j = 1/(|r_j| + damping).
pub fn reweight(r: &DVector<f64>, damping: f64) -> DVector<f64> {
    assert!(damping > 0.0, "damping must be positive");
    DVector::from_fn(r.len(), |j, _| 1.0 / (r[j].abs() + damping))
}

/// Re-weighting loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// likelihood level in (0,1) for both ellipsoids
    pub tau: f64,
    /// re-weighting damping added to |r_j|
    pub damping: f64,
    pub max_reweight_iters: usize,
    pub convergence_tol: f64,
}

impl DecoderConfig {
    pub fn new(
        tau: f64,
        damping: f64,
        max_reweight_iters: usize,
        convergence_tol: f64,
    ) -> Result<Self> {
        let cfg = Self { tau, damping, max_reweight_iters, convergence_tol };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scale-aware defaults: damping = 1e-4·‖y‖∞ (floored away from zero),
    /// ten re-weighting passes, relative convergence 1e-6.
    pub fn default_for(y: &DVector<f64>) -> Self {
        let scale = y.amax();
        Self {
            tau: 0.95,
            damping: (1e-4 * scale).max(1e-12),
            max_reweight_iters: 10,
            convergence_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Domain(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Domain("damping must be positive".into()));
        }
        if self.max_reweight_iters == 0 {
            return Err(Error::Domain("max_reweight_iters must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Domain("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Decoded estimate with the attack residual and its support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub x_hat: DVector<f64>,
    pub eps_hat: DVector<f64>,
    /// y − Hx̂ − ε̂
    pub e_hat: DVector<f64>,
    /// channels whose residual magnitude exceeds 1e-6·max(1, ‖y‖∞)
    pub support: Vec<usize>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub status: SolveStatus,
}

fn support_of(e: &DVector<f64>, y: &DVector<f64>) -> Vec<usize> {
    let thresh = 1e-6 * 1.0_f64.max(y.amax());
    (0..e.len()).filter(|&j| e[j].abs() > thresh).collect()
}

/// Smallest-support decoder by exhaustive enumeration: finds the sparsest
/// e with Q2'(y − e) = 0 over supports of size 0..=k_max, then recovers
/// the state from the cleaned measurement. Noiseless model.
pub fn l0_bruteforce_decode(
    model: &MeasurementModel,
    y: &DVector<f64>,
    k_max: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = model.m();
    if y.len() != m {
        return Err(Error::Shape(format!("y has {} entries, expected {m}", y.len())));
    }
    let mut total: u128 = 0;
    for s in 0..=k_max.min(m) {
        let mut c: u128 = 1;
        for i in 0..s {
            c = c.saturating_mul((m - i) as u128) / (i as u128 + 1);
        }
        total = total.saturating_add(c);
    }
    if total > SUBSET_GUARD {
        return Err(Error::TooLarge(total, SUBSET_GUARD));
    }

    let q2t = model.qr().q2.transpose();
    let rhs = &q2t * y;
    let tol = 1e-9 * (1.0 + y.norm());

    if rhs.norm() <= tol {
        let e = DVector::zeros(m);
        let x = model.qr().state_from_clean(y);
        return Ok((x, e));
    }
    for s in 1..=k_max.min(m) {
        for supp in (0..m).combinations(s) {
            let sub = q2t.select_columns(supp.iter());
            let svd = sub.clone().svd(true, true);
            let sol = match svd.solve(&rhs, 1e-12) {
                Ok(v) => v,
                Err(_) => continue,
            };
            if (&sub * &sol - &rhs).norm() <= tol {
                let mut e = DVector::zeros(m);
                for (i, &j) in supp.iter().enumerate() {
                    e[j] = sol[i];
                }
                let x = model.qr().state_from_clean(&(y - &e));
                return Ok((x, e));
            }
        }
    }
    Err(Error::NoFeasibleSupport(k_max))
}

/// ℓ1 decoder: e from the equality-constrained ℓ1 program, state from the
/// cleaned measurement.
pub fn l1_decode(model: &MeasurementModel, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let q2t = model.qr().q2.transpose();
    let e = solve_l1_equality(&q2t, y)?;
    let x = model.qr().state_from_clean(&(y - &e));
    Ok((x, e))
}

/// ℓ1 decoder with a bounded prior set: min ‖e‖₁ subject to
/// Q2'(y − e) = 0 and ‖y − e‖₁ ≤ delta.
pub fn l1_decode_bounded(
    model: &MeasurementModel,
    y: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let m = model.m();
    if y.len() != m {
        return Err(Error::Shape(format!("y has {} entries, expected {m}", y.len())));
    }
    let q2t = model.qr().q2.transpose();
    let d = q2t.nrows();

    // variables: e (m) | t (m) | u (m)
    let mut prob = ConicProblem::new(3 * m);
    for j in 0..m {
        prob.set_objective(m + j, 1.0);
    }
    let rhs = &q2t * y;
    for r in 0..d {
        let coeffs: Vec<(usize, f64)> = (0..m)
            .map(|c| (c, q2t[(r, c)]))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        prob.push_row(coeffs, rhs[r]);
    }
    prob.push_cone(ConeSpec::Zero(d));
    for j in 0..m {
        // |e_j| <= t_j
        prob.push_row(vec![(j, 1.0), (m + j, -1.0)], 0.0);
        prob.push_row(vec![(j, -1.0), (m + j, -1.0)], 0.0);
        // |y_j − e_j| <= u_j
        prob.push_row(vec![(j, -1.0), (2 * m + j, -1.0)], -y[j]);
        prob.push_row(vec![(j, 1.0), (2 * m + j, -1.0)], y[j]);
    }
    let budget: Vec<(usize, f64)> = (0..m).map(|j| (2 * m + j, 1.0)).collect();
    prob.push_row(budget, delta);
    prob.push_cone(ConeSpec::Nonneg(4 * m + 1));

    let out = prob.solve(1e-9, 200)?;
    if out.status == ConicStatus::PrimalInfeasible {
        return Err(Error::Infeasible(format!(
            "no corruption pattern keeps ‖y − e‖₁ within {delta}"
        )));
    }
    let e = DVector::from_fn(m, |j, _| out.x[j]);
    let x = model.qr().state_from_clean(&(y - &e));
    Ok((x, e))
}

/// Measurement-noise ellipsoid ‖ε‖²_{Σ_ε⁻¹} ≤ χ²_m(τ).
pub fn noise_ellipsoid(model: &MeasurementModel, tau: f64) -> Result<EllipsoidConstraint> {
    let m = model.m();
    let inv_weights = DVector::from_fn(m, |j, _| {
        let s = model.noise_std()[j];
        1.0 / (s * s)
    });
    Ok(EllipsoidConstraint {
        center: DVector::zeros(m),
        inv_weights,
        radius_sq: chi2_quantile(m, tau)?,
    })
}

/// Re-weighted ℓ1 minimization over an explicit ellipsoid list: weights
/// start at identity and are refreshed from the running residual until the
/// objective stalls or the iteration budget runs out.
pub fn reweighted_l1_estimate(
    model: &MeasurementModel,
    ellipsoids: Vec<(EllipsoidTarget, EllipsoidConstraint)>,
    y: &DVector<f64>,
    cfg: &DecoderConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let m = model.m();
    if y.len() != m {
        return Err(Error::Shape(format!("y has {} entries, expected {m}", y.len())));
    }
    let mut weights = DVector::from_element(m, 1.0);
    let mut trace: Vec<f64> = Vec::new();
    let mut last: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut status = SolveStatus::MaxIter;
    let opts = SolveOptions::default();

    for _ in 0..cfg.max_reweight_iters {
        let prob = WeightedL1Problem {
            h: model.h().clone(),
            y: y.clone(),
            weights: weights.clone(),
            ellipsoids: ellipsoids.clone(),
        };
        let sol = solve_weighted_l1(&prob, &opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(
                "constraint set empty: tau too tight or prior inconsistent with data".into(),
            ));
        }
        let r = y - model.h() * &sol.x - &sol.eps;
        let obj = sol.objective;
        let converged = trace
            .last()
            .is_some_and(|&prev| (prev - obj).abs() <= cfg.convergence_tol * prev.abs().max(1.0));
        trace.push(obj);
        last = Some((sol.x, sol.eps));
        if sol.status == SolveStatus::MaxIter {
            status = SolveStatus::MaxIter;
            break;
        }
        if converged {
            status = SolveStatus::Optimal;
            break;
        }
        weights = reweight(&r, cfg.damping);
    }
    if status != SolveStatus::Optimal && trace.len() == cfg.max_reweight_iters {
        status = SolveStatus::MaxIter;
    }

    let (x_hat, eps_hat) = last.ok_or_else(|| Error::Numerical("no iterations ran".into()))?;
    let e_hat = y - model.h() * &x_hat - &eps_hat;
    Ok(EstimateReport {
        support: support_of(&e_hat, y),
        x_hat,
        eps_hat,
        e_hat,
        iterations: trace.len(),
        objective_trace: trace,
        status,
    })
}

/// Prior-constrained resilient estimator: queries the trained prior at the
/// auxiliary point, wraps the posterior in a likelihood ellipsoid plus the
/// noise ellipsoid, and runs the re-weighted ℓ1 loop.
pub fn resilient_estimate(
    model: &MeasurementModel,
    prior: &GprModel,
    z: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &DecoderConfig,
) -> Result<EstimateReport> {
    let posterior = prior.posterior(z);
    let ell_y = likelihood_ellipsoid(&posterior, cfg.tau)?;
    let ell_eps = noise_ellipsoid(model, cfg.tau)?;
    reweighted_l1_estimate(
        model,
        vec![
            (EllipsoidTarget::ModelOutput, ell_y),
            (EllipsoidTarget::Noise, ell_eps),
        ],
        y,
        cfg,
    )
}

/// 2·sat_δ((1+γ)/(1−γ)·‖e−e[k]‖₁): the reconstruction error bound under
/// the subspace property with a bounded prior set.
pub fn bound_main(gamma: f64, delta: f64, e: &DVector<f64>, k: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must be in (0,1), got {gamma}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let tail = l1_tail(e, k);
    Ok(2.0 * sat((1.0 + gamma) / (1.0 - gamma) * tail, delta))
}

/// Restricted-isometry error bound, valid for δ_{2k} < 1/√2.
pub fn bound_rip(delta2k: f64, k: usize, e: &DVector<f64>) -> Result<f64> {
    let half_inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    if !(delta2k >= 0.0 && delta2k < half_inv_sqrt2) {
        return Err(Error::Domain(format!(
            "bound requires delta_2k in [0, 1/sqrt(2)), got {delta2k}"
        )));
    }
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    let gap = half_inv_sqrt2 - delta2k;
    let factor = (delta2k + (delta2k * gap).sqrt()) / (2.0_f64.sqrt() * gap) + 1.0;
    Ok(2.0 / (k as f64).sqrt() * factor * l1_tail(e, k))
}

/// Nullspace-property error bound (m/√2)·(4(1+γ)/(m(1−γ)))^{1/q}·tail.
pub fn bound_nsp(gamma: f64, q: f64, m: usize, e: &DVector<f64>, k: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must be in (0,1), got {gamma}")));
    }
    if !(q > 1.0) {
        return Err(Error::Domain(format!("bound requires q > 1, got {q}")));
    }
    if m == 0 {
        return Err(Error::Domain("m must be >= 1".into()));
    }
    let ratio = 4.0 * (1.0 + gamma) / (m as f64 * (1.0 - gamma));
    Ok(m as f64 / 2.0_f64.sqrt() * ratio.powf(1.0 / q) * l1_tail(e, k))
}

/// Tail bound under an ℓ2 budget: any ‖ε‖₂ ≤ δ has ‖ε−ε[k]‖₁ ≤ (m−k)δ/√m.
pub fn bound_kth_term(delta: f64, m: usize, k: usize) -> Result<f64> {
    if k >= m {
        return Err(Error::Domain(format!("needs k < m, got k={k}, m={m}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    Ok((m - k) as f64 / (m as f64).sqrt() * delta)
}

/// State reconstruction error bound of the prior-constrained estimator:
/// C1·sat_{δ(τ)}(C2‖ê−ê[k]‖₁ + C3δ(τ)) + C1·sat_{δ(τ)}(C3δ(τ)) with
/// δ(τ) = Σ̄^{1/2}·χ_m(τ), C1 = 2/σ_min(H), C2 = (1+γ)/(1−γ),
/// C3 = C2·(m−k)·σ̄/√m.
#[allow(clippy::too_many_arguments)]
pub fn bound_state(
    gamma: f64,
    tau: f64,
    m: usize,
    k: usize,
    sigma_bar: f64,
    big_sigma_bar: f64,
    sigma_h_min: f64,
    e_hat: &DVector<f64>,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must be in (0,1), got {gamma}")));
    }
    if !(sigma_h_min > 0.0) {
        return Err(Error::Domain("smallest singular value must be positive".into()));
    }
    if k >= m {
        return Err(Error::Domain(format!("needs k < m, got k={k}, m={m}")));
    }
    if !(sigma_bar >= 0.0 && big_sigma_bar >= 0.0) {
        return Err(Error::Domain("deviation scales must be nonnegative".into()));
    }
    let delta_tau = big_sigma_bar.sqrt() * chi2_quantile(m, tau)?.sqrt();
    if delta_tau <= 0.0 {
        return Ok(0.0);
    }
    let c1 = 2.0 / sigma_h_min;
    let c2 = (1.0 + gamma) / (1.0 - gamma);
    let c3 = c2 * (m - k) as f64 / (m as f64).sqrt() * sigma_bar;
    let tail = l1_tail(e_hat, k);
    Ok(c1 * sat(c2 * tail + c3 * delta_tau, delta_tau) + c1 * sat(c3 * delta_tau, delta_tau))
}
