//! Recoverability certification: exact restricted-isometry constants on
//! small instances, nullspace-property checks (exact where tractable,
//! sampled falsification otherwise), sufficient conditions, and the
//! combinatorial sparsity bounds.

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::nullspace_basis;

/// Hard cap on combinatorial enumeration; larger instances must fall back
/// to the sufficient conditions.
pub const SUBSET_GUARD: u128 = 1_000_000;

/// All paper inequalities are strict; "holds" requires this much relative
/// margin on the strict side.
const STRICT_REL_TOL: f64 = 1e-12;

/// Which norm the nullspace property is stated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NspNorm {
    L1,
    L2,
}

/// How a certificate was established, in decreasing order of guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NspMethod {
    /// Nullspace is one-dimensional; the single basis direction was checked
    /// over all supports exactly.
    ExactDim1,
    /// q=2 generalized-eigenvalue check per support; exact.
    ExactQ2Eig,
    /// Trivial nullspace; the property holds vacuously.
    TrivialNullspace,
    SufficientThm,
    SufficientCorollary,
    /// Random-direction falsifier; `holds=true` means "not falsified".
    SampledFalsifier,
}

impl NspMethod {
    /// True when a positive certificate is an exact guarantee rather than
    /// "not falsified".
    pub fn is_exact(self) -> bool {
        matches!(
            self,
            NspMethod::ExactDim1 | NspMethod::ExactQ2Eig | NspMethod::TrivialNullspace
        )
    }
}

/// Outcome of a nullspace-property query NSP_q(k, γ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NspCertificate {
    pub k: usize,
    pub gamma: f64,
    pub q: NspNorm,
    pub holds: bool,
    /// A violating nullspace element when `holds` is false and the method
    /// is exact or sampled.
    pub witness: Option<DVector<f64>>,
    pub method: NspMethod,
}

impl NspCertificate {
    /// Re-evaluates a stored witness: it must lie in the nullspace of `a`
    /// (residual ≤ 1e-8 after normalization) and violate the property on
    /// its worst support.
    pub fn verify_witness(&self, a: &DMatrix<f64>) -> bool {
        let Some(w) = &self.witness else { return false };
        let norm = w.norm();
        if !(norm > 0.0) {
            return false;
        }
        let v = w / norm;
        if (a * &v).norm() > 1e-8 {
            return false;
        }
        let (lhs, rhs, _) = worst_support(&v, self.k, self.q);
        lhs >= self.gamma * rhs * (1.0 - STRICT_REL_TOL)
    }
}

/// Restricted isometry constant δ_k with the support attaining it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RipEstimate {
    pub k: usize,
    pub delta: f64,
    pub argmax_support: Vec<usize>,
}

fn binomial_capped(n: usize, k: usize, cap: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > cap {
            return cap + 1;
        }
    }
    acc
}

fn guard_subsets(count: u128) -> Result<()> {
    if count > SUBSET_GUARD {
        Err(Error::TooLarge(count, SUBSET_GUARD))
    } else {
        Ok(())
    }
}

/// Exact δ_k by enumerating k-column submatrices. Extreme singular values
/// are monotone under column inclusion, so size-k subsets dominate all
/// |T| ≤ k.
pub fn rip_exact(a: &DMatrix<f64>, k: usize) -> Result<RipEstimate> {
    let cols = a.ncols();
    if k == 0 || k > cols {
        return Err(Error::Domain(format!(
            "rip_exact needs 1 <= k <= {cols}, got {k}"
        )));
    }
    guard_subsets(binomial_capped(cols, k, SUBSET_GUARD))?;

    let mut delta = 0.0_f64;
    let mut argmax: Vec<usize> = Vec::new();
    for supp in (0..cols).combinations(k) {
        let sub = a.select_columns(supp.iter());
        let sv = sub.singular_values();
        let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
        let smin = if k <= a.nrows() {
            sv.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            0.0
        };
        let cand = (smax * smax - 1.0).max(1.0 - smin * smin);
        if cand > delta {
            delta = cand;
            argmax = supp;
        }
    }
    Ok(RipEstimate { k, delta, argmax_support: argmax })
}

/// Worst support of size ≤ k for a single direction: the k largest
/// magnitudes maximize the on-support mass and minimize the off-support
/// mass simultaneously. Returns (‖v_T‖_q, ‖v_{T^c}‖_q, T).
fn worst_support(v: &DVector<f64>, k: usize, q: NspNorm) -> (f64, f64, Vec<usize>) {
    let m = v.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| v[j].abs().partial_cmp(&v[i].abs()).unwrap());
    let kk = k.min(m);
    let (t, tc) = idx.split_at(kk);
    let mass = |ids: &[usize]| -> f64 {
        match q {
            NspNorm::L1 => ids.iter().map(|&i| v[i].abs()).sum(),
            NspNorm::L2 => ids.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt(),
        }
    };
    (mass(t), mass(tc), t.to_vec())
}

/// Options for the sampled falsifier used when no exact method applies.
#[derive(Debug, Clone)]
pub struct FalsifierOpts {
    pub directions: usize,
    pub seed: u64,
}

impl Default for FalsifierOpts {
    fn default() -> Self {
        Self { directions: 10_000, seed: 0 }
    }
}

/// Checks A ∈ NSP_q(k, γ) with the strongest method available:
/// trivial/one-dimensional nullspaces and q=2 are exact; q=1 with a
/// multi-dimensional nullspace falls back to a seeded random falsifier
/// whose positive answer only means "not falsified".
pub fn nsp_check(a: &DMatrix<f64>, k: usize, gamma: f64, q: NspNorm) -> Result<NspCertificate> {
    nsp_check_with(a, k, gamma, q, &FalsifierOpts::default())
}

pub fn nsp_check_with(
    a: &DMatrix<f64>,
    k: usize,
    gamma: f64,
    q: NspNorm,
    opts: &FalsifierOpts,
) -> Result<NspCertificate> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("nsp_check needs gamma > 0, got {gamma}")));
    }
    let m = a.ncols();
    if k > m {
        return Err(Error::Domain(format!("k = {k} exceeds column count {m}")));
    }
    let basis = nullspace_basis(a);
    let d = basis.ncols();

    if d == 0 {
        return Ok(NspCertificate {
            k,
            gamma,
            q,
            holds: true,
            witness: None,
            method: NspMethod::TrivialNullspace,
        });
    }

    if d == 1 {
        let v = basis.column(0).into_owned();
        let (lhs, rhs, _) = worst_support(&v, k, q);
        let violated = lhs >= gamma * rhs * (1.0 - STRICT_REL_TOL);
        return Ok(NspCertificate {
            k,
            gamma,
            q,
            holds: !violated,
            witness: violated.then_some(v),
            method: NspMethod::ExactDim1,
        });
    }

    match q {
        NspNorm::L2 => nsp_exact_q2(&basis, k, gamma),
        NspNorm::L1 => Ok(nsp_sampled(&basis, k, gamma, q, opts)),
    }
}

/// Exact q=2 check: per support T, the property holds for every nullspace
/// element iff λ_max(N_T'N_T, γ²N_{T^c}'N_{T^c}) < 1. A rank-deficient
/// off-support Gram matrix means some nullspace element vanishes off T,
/// which is itself a violation.
fn nsp_exact_q2(basis: &DMatrix<f64>, k: usize, gamma: f64) -> Result<NspCertificate> {
    let m = basis.nrows();
    let d = basis.ncols();
    guard_subsets(binomial_capped(m, k.min(m), SUBSET_GUARD))?;
    let gram = basis.transpose() * basis;

    for supp in (0..m).combinations(k.min(m)) {
        let nt = basis.select_rows(supp.iter());
        let mt = nt.transpose() * &nt;
        let b = (&gram - &mt) * (gamma * gamma);

        let witness_from = |c: &DVector<f64>| -> DVector<f64> {
            let v = basis * c;
            let norm = v.norm();
            if norm > 0.0 { v / norm } else { v }
        };

        match Cholesky::new(b.clone()) {
            None => {
                // off-support Gram singular: pick its flattest direction
                let eig = SymmetricEigen::new(b);
                let mut best = 0;
                for i in 0..d {
                    if eig.eigenvalues[i] < eig.eigenvalues[best] {
                        best = i;
                    }
                }
                let c = eig.eigenvectors.column(best).into_owned();
                return Ok(NspCertificate {
                    k,
                    gamma,
                    q: NspNorm::L2,
                    holds: false,
                    witness: Some(witness_from(&c)),
                    method: NspMethod::ExactQ2Eig,
                });
            }
            Some(chol) => {
                let linv = chol
                    .l()
                    .try_inverse()
                    .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
                let s = &linv * &mt * linv.transpose();
                let s = (&s + s.transpose()) * 0.5;
                let eig = SymmetricEigen::new(s);
                let mut best = 0;
                for i in 0..d {
                    if eig.eigenvalues[i] > eig.eigenvalues[best] {
                        best = i;
                    }
                }
                let lam = eig.eigenvalues[best];
                if lam >= 1.0 - STRICT_REL_TOL {
                    let y = eig.eigenvectors.column(best).into_owned();
                    let c = linv.transpose() * y;
                    return Ok(NspCertificate {
                        k,
                        gamma,
                        q: NspNorm::L2,
                        holds: false,
                        witness: Some(witness_from(&c)),
                        method: NspMethod::ExactQ2Eig,
                    });
                }
            }
        }
    }
    Ok(NspCertificate {
        k,
        gamma,
        q: NspNorm::L2,
        holds: true,
        witness: None,
        method: NspMethod::ExactQ2Eig,
    })
}

fn nsp_sampled(
    basis: &DMatrix<f64>,
    k: usize,
    gamma: f64,
    q: NspNorm,
    opts: &FalsifierOpts,
) -> NspCertificate {
    let d = basis.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.directions {
        let c = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = basis * c;
        let norm = v.norm();
        if norm < 1e-14 {
            continue;
        }
        let v = v / norm;
        let (lhs, rhs, _) = worst_support(&v, k, q);
        if lhs >= gamma * rhs * (1.0 - STRICT_REL_TOL) {
            return NspCertificate {
                k,
                gamma,
                q,
                holds: false,
                witness: Some(v),
                method: NspMethod::SampledFalsifier,
            };
        }
    }
    NspCertificate {
        k,
        gamma,
        q,
        holds: true,
        witness: None,
        method: NspMethod::SampledFalsifier,
    }
}

fn check_orthonormal_columns(q1: &DMatrix<f64>) -> Result<()> {
    let n = q1.ncols();
    let g = q1.transpose() * q1;
    if (g - DMatrix::identity(n, n)).norm() > 1e-8 {
        return Err(Error::Domain("matrix does not have orthonormal columns".into()));
    }
    Ok(())
}

/// Induced q-norm of a small matrix: exact for q=2 (spectral norm); for
/// q>2 an interpolation upper bound ‖M‖_q ≤ ‖M‖₁^{1/q}·‖M‖_∞^{1−1/q},
/// which keeps the sufficient condition sound.
fn induced_q_norm_upper(m: &DMatrix<f64>, q: u32) -> f64 {
    if q == 2 {
        return m.clone().singular_values().iter().cloned().fold(0.0, f64::max);
    }
    let col_sum_max = (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let row_sum_max = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let t = 1.0 / q as f64;
    col_sum_max.powf(t) * row_sum_max.powf(1.0 - t)
}

/// Sufficient condition for Q2' ∈ NSP_1(k,1): every k-row submatrix of Q1
/// must have induced q-norm below ½·k^{1/q−1}. For q=2 this is
/// σ̄(Q1_T) < 1/(2√k).
pub fn nsp_sufficient_thm(q1: &DMatrix<f64>, k: usize, q: u32) -> Result<bool> {
    if q < 2 {
        return Err(Error::Domain(format!("theorem requires q >= 2, got {q}")));
    }
    check_orthonormal_columns(q1)?;
    let m = q1.nrows();
    if k == 0 || 2 * k >= m {
        return Err(Error::Domain(format!(
            "theorem requires 0 < k < m/2, got k={k}, m={m}"
        )));
    }
    guard_subsets(binomial_capped(m, k, SUBSET_GUARD))?;
    let bound = 0.5 * (k as f64).powf(1.0 / q as f64 - 1.0);
    // the induced norm grows with added rows, so size-k supports dominate
    for supp in (0..m).combinations(k) {
        let sub = q1.select_rows(supp.iter());
        if induced_q_norm_upper(&sub, q) >= bound {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Row-∞-norm corollary: with v_i = max_j |Q1_{ij}|, the property
/// Q2' ∈ NSP_1(k,1) follows when the k largest v_i sum below 1/(2√n).
pub fn nsp_sufficient_corollary(q1: &DMatrix<f64>, k: usize) -> Result<bool> {
    check_orthonormal_columns(q1)?;
    let m = q1.nrows();
    if k == 0 || k > m {
        return Err(Error::Domain(format!("corollary needs 0 < k <= m, got k={k}")));
    }
    let n = q1.ncols();
    let mut v: Vec<f64> = (0..m)
        .map(|i| q1.row(i).iter().map(|x| x.abs()).fold(0.0_f64, f64::max))
        .collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sum: f64 = v.iter().take(k).sum();
    Ok(sum < 0.5 / (n as f64).sqrt())
}

/// Largest number of corruptions consistent with the strict nullspace
/// inequality: the largest integer strictly below γ^q·m/(1+γ^q), floored
/// at zero.
pub fn max_correctable_errors(gamma: f64, q: f64, m: usize) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must be in (0,1), got {gamma}")));
    }
    if q < 1.0 {
        return Err(Error::Domain(format!("q must be >= 1, got {q}")));
    }
    if m == 0 {
        return Err(Error::Domain("m must be >= 1".into()));
    }
    let gq = gamma.powf(q);
    let bound = gq / (1.0 + gq) * m as f64;
    let floor = bound.floor();
    let k = if (bound - floor).abs() < 1e-9 * bound.max(1.0) {
        // bound is (numerically) an integer; strictly below means one less
        floor - 1.0
    } else {
        floor
    };
    Ok(k.max(0.0) as usize)
}

/// Lower bound on admissible γ for correcting k errors out of m:
/// (k/(m−k))^{1/q}. A value ≥ 1 means no admissible γ in (0,1) exists.
pub fn min_admissible_gamma(k: usize, m: usize, q: f64) -> Result<f64> {
    if k == 0 || k >= m {
        return Err(Error::Domain(format!("needs 0 < k < m, got k={k}, m={m}")));
    }
    if q < 1.0 {
        return Err(Error::Domain(format!("q must be >= 1, got {q}")));
    }
    Ok((k as f64 / (m - k) as f64).powf(1.0 / q))
}

/// Uniqueness of the sparsest corruption explaining `y`: every 2k columns
/// of Q2' must be independent, and some p-sparse feasible corruption with
/// p ≤ k must exist.
pub fn uniqueness_check(q2t: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<bool> {
    let m = q2t.ncols();
    if y.len() != m {
        return Err(Error::Shape(format!(
            "y has {} entries, expected {m}",
            y.len()
        )));
    }
    if 2 * k > m {
        return Err(Error::Domain(format!("needs 2k <= m, got k={k}, m={m}")));
    }
    let rows = q2t.nrows();

    // independence leg
    if k > 0 {
        if 2 * k > rows {
            return Ok(false);
        }
        guard_subsets(binomial_capped(m, 2 * k, SUBSET_GUARD))?;
        for supp in (0..m).combinations(2 * k) {
            let sub = q2t.select_columns(supp.iter());
            let sv = sub.singular_values();
            let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
            let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            if smin <= smax * 1e-10 {
                return Ok(false);
            }
        }
    }

    // existence leg: enumerate supports of size 0..=k
    let mut total: u128 = 0;
    for s in 0..=k {
        total = total.saturating_add(binomial_capped(m, s, SUBSET_GUARD));
    }
    guard_subsets(total)?;

    let rhs = q2t * y;
    let tol = 1e-9 * (1.0 + rhs.norm());
    if rhs.norm() <= tol {
        return Ok(true); // e = 0 is feasible
    }
    for s in 1..=k {
        for supp in (0..m).combinations(s) {
            let sub = q2t.select_columns(supp.iter());
            let svd = sub.clone().svd(true, true);
            let sol = svd.solve(&rhs, 1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
            if (sub * sol - &rhs).norm() <= tol {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_split;
    use approx::assert_relative_eq;

    fn q2t_of_ones(m: usize) -> DMatrix<f64> {
        let h = DMatrix::from_element(m, 1, 1.0);
        let f = qr_split(&h).unwrap();
        f.q2.transpose()
    }

    #[test]
    fn rip_identity_is_zero() {
        let est = rip_exact(&DMatrix::identity(3, 3), 2).unwrap();
        assert!(est.delta.abs() < 1e-12);
    }

    #[test]
    fn rip_column_norm_two() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let est = rip_exact(&a, 1).unwrap();
        assert_relative_eq!(est.delta, 1.0, epsilon = 1e-12);
        assert_eq!(est.argmax_support, vec![1]);
    }

    /// Independent enumeration: Rayleigh extremes of the Gram matrices over
    /// all |T| <= k, built separately from the production path.
    fn rip_oracle(a: &DMatrix<f64>, k: usize) -> f64 {
        let cols = a.ncols();
        let mut delta = 0.0_f64;
        for size in 1..=k {
            for supp in (0..cols).combinations(size) {
                let sub = a.select_columns(supp.iter());
                let gram = sub.transpose() * &sub;
                let eig = SymmetricEigen::new(gram);
                for &lam in eig.eigenvalues.iter() {
                    delta = delta.max((lam - 1.0).abs());
                }
            }
        }
        delta
    }

    #[test]
    fn rip_matches_oracle_on_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut a = DMatrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0_f64));
            for j in 0..4 {
                let norm = a.column(j).norm();
                for i in 0..8 {
                    a[(i, j)] /= norm;
                }
            }
            let est = rip_exact(&a, 2).unwrap();
            assert_relative_eq!(est.delta, rip_oracle(&a, 2), epsilon = 1e-10);
        }
    }

    #[test]
    fn rip_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = DMatrix::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0_f64));
        let mut prev = 0.0;
        for k in 1..=4 {
            let est = rip_exact(&a, k).unwrap();
            assert!(est.delta >= prev - 1e-12);
            prev = est.delta;
        }
    }

    #[test]
    fn rip_guard_trips() {
        let a = DMatrix::<f64>::identity(60, 60);
        assert!(matches!(rip_exact(&a, 30), Err(Error::TooLarge(_, _))));
    }

    #[test]
    fn nsp_dim1_ratio_exactly_one_fails() {
        let s = 1.0 / 2.0_f64.sqrt();
        let a = DMatrix::from_row_slice(1, 2, &[s, -s]);
        let cert = nsp_check(&a, 1, 1.0, NspNorm::L1).unwrap();
        assert!(!cert.holds);
        assert_eq!(cert.method, NspMethod::ExactDim1);
        assert!(cert.verify_witness(&a));
    }

    #[test]
    fn nsp_dim1_examples_from_ones() {
        let a = q2t_of_ones(3); // nullspace span{[1,1,1]}
        let cert = nsp_check(&a, 1, 0.6, NspNorm::L1).unwrap();
        assert!(cert.holds, "ratio 1/2 < 0.6");
        assert_eq!(cert.method, NspMethod::ExactDim1);

        let cert = nsp_check(&a, 2, 0.6, NspNorm::L1).unwrap();
        assert!(!cert.holds, "ratio 2/1 > 0.6");
        assert!(cert.verify_witness(&a));
    }

    #[test]
    fn nsp_gamma_must_be_positive() {
        let a = q2t_of_ones(3);
        assert!(nsp_check(&a, 1, 0.0, NspNorm::L1).is_err());
        assert!(nsp_check(&a, 1, -1.0, NspNorm::L2).is_err());
    }

    #[test]
    fn nsp_trivial_nullspace_holds() {
        // full column rank square-ish: trivial nullspace
        let a = DMatrix::<f64>::identity(3, 3);
        let cert = nsp_check(&a, 2, 0.1, NspNorm::L1).unwrap();
        assert!(cert.holds);
        assert_eq!(cert.method, NspMethod::TrivialNullspace);
    }

    #[test]
    fn nsp_q2_exact_agrees_with_dim1_on_dim1_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = rng.gen_range(4..9);
            let h = DMatrix::from_fn(m, 1, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let a = f.q2.transpose();
            let gamma = rng.gen_range(0.2..1.5);
            let k = rng.gen_range(1..3);
            let dim1 = nsp_check(&a, k, gamma, NspNorm::L2).unwrap();
            // force the eigen path through a 2-dim nullspace built by
            // duplicating the direction? instead: compare against brute
            // ratio of the single basis vector
            let v = nullspace_basis(&a).column(0).into_owned();
            let (lhs, rhs, _) = worst_support(&v, k, NspNorm::L2);
            assert_eq!(dim1.holds, lhs < gamma * rhs * (1.0 - STRICT_REL_TOL));
        }
    }

    #[test]
    fn nsp_q2_eigen_path_multi_dim() {
        // H with n=2 gives a 2-dim nullspace for Q2'
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut exercised_true = false;
        let mut exercised_false = false;
        for _ in 0..40 {
            let m = rng.gen_range(6..10);
            let h = DMatrix::from_fn(m, 2, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let a = f.q2.transpose();
            for &gamma in &[0.3, 0.9, 2.0] {
                let cert = nsp_check(&a, 1, gamma, NspNorm::L2).unwrap();
                assert_eq!(cert.method, NspMethod::ExactQ2Eig);
                if cert.holds {
                    exercised_true = true;
                    // spot check against sampling
                    let mut rng2 = ChaCha8Rng::seed_from_u64(99);
                    let basis = nullspace_basis(&a);
                    for _ in 0..200 {
                        let c = DVector::from_fn(basis.ncols(), |_, _| {
                            rng2.sample::<f64, _>(StandardNormal)
                        });
                        let v = (&basis * c).normalize();
                        let (lhs, rhs, _) = worst_support(&v, 1, NspNorm::L2);
                        assert!(lhs < gamma * rhs + 1e-9);
                    }
                } else {
                    exercised_false = true;
                    assert!(cert.verify_witness(&a), "witness must reproduce violation");
                }
            }
        }
        assert!(exercised_true && exercised_false);
    }

    #[test]
    fn nsp_monotone_in_k_and_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let m = rng.gen_range(5..9);
            let n = rng.gen_range(1..3);
            let h = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let a = f.q2.transpose();
            for &gamma in &[0.4, 0.8] {
                let mut prev_holds = true;
                for k in 1..m / 2 {
                    let cert = nsp_check(&a, k, gamma, NspNorm::L2).unwrap();
                    if !prev_holds {
                        assert!(!cert.holds, "holds must be monotone decreasing in k");
                    }
                    prev_holds = cert.holds;
                }
            }
            let k = 1;
            let mut prev_holds = false;
            for &gamma in &[0.2, 0.5, 1.0, 2.0] {
                let cert = nsp_check(&a, k, gamma, NspNorm::L2).unwrap();
                if prev_holds {
                    assert!(cert.holds, "holds must be monotone increasing in gamma");
                }
                prev_holds = cert.holds;
            }
        }
    }

    #[test]
    fn sufficient_thm_row_norm_cases() {
        // single unit column: rows are scalars 1/sqrt(m)
        let q1 = DMatrix::from_element(3, 1, 1.0 / 3.0_f64.sqrt());
        assert!(!nsp_sufficient_thm(&q1, 1, 2).unwrap(), "0.577 >= 0.5");
        let q1 = DMatrix::from_element(9, 1, 1.0 / 3.0);
        assert!(nsp_sufficient_thm(&q1, 1, 2).unwrap(), "1/3 < 0.5");
    }

    #[test]
    fn sufficient_corollary_cases() {
        let q1 = DMatrix::from_element(9, 1, 1.0 / 3.0);
        assert!(nsp_sufficient_corollary(&q1, 1).unwrap());
        let q1 = DMatrix::from_element(3, 1, 1.0 / 3.0_f64.sqrt());
        assert!(!nsp_sufficient_corollary(&q1, 1).unwrap());
        // monotone in k: once false, stays false
        let q1 = DMatrix::from_element(16, 1, 0.25);
        let mut was_false = false;
        for k in 1..16 {
            let ok = nsp_sufficient_corollary(&q1, k).unwrap();
            if was_false {
                assert!(!ok);
            }
            if !ok {
                was_false = true;
            }
        }
        assert!(was_false);
    }

    #[test]
    fn sufficient_implies_not_falsified() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut found = 0;
        for _ in 0..30 {
            let m = rng.gen_range(12..20);
            let n = rng.gen_range(1..3);
            let h = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let ok = nsp_sufficient_thm(&f.q1, 1, 2).unwrap_or(false)
                || nsp_sufficient_corollary(&f.q1, 1).unwrap_or(false);
            if !ok {
                continue;
            }
            found += 1;
            let a = f.q2.transpose();
            let cert = nsp_check_with(
                &a,
                1,
                1.0 - 1e-12,
                NspNorm::L1,
                &FalsifierOpts { directions: 2000, seed: 7 },
            )
            .unwrap();
            assert!(cert.holds, "sufficient condition contradicted by falsifier");
        }
        assert!(found > 0, "corpus never satisfied the sufficient conditions");
    }

    #[test]
    fn max_correctable_formula() {
        assert_eq!(max_correctable_errors(0.5, 1.0, 12).unwrap(), 3);
        assert_eq!(max_correctable_errors(0.9, 2.0, 100).unwrap(), 44);
        assert_eq!(max_correctable_errors(1e-6, 1.0, 1000).unwrap(), 0);
        assert!(max_correctable_errors(1.0, 1.0, 10).is_err());
        assert!(max_correctable_errors(0.0, 1.0, 10).is_err());
    }

    #[test]
    fn min_gamma_formula() {
        assert_relative_eq!(min_admissible_gamma(3, 12, 1.0).unwrap(), 1.0 / 3.0);
        assert_relative_eq!(min_admissible_gamma(2, 10, 2.0).unwrap(), 0.5);
        assert_relative_eq!(min_admissible_gamma(5, 10, 1.0).unwrap(), 1.0);
        assert!(min_admissible_gamma(10, 10, 1.0).is_err());
    }

    #[test]
    fn exact_holds_consistent_with_max_correctable() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..30 {
            let m = rng.gen_range(5..10);
            let n = rng.gen_range(1..3);
            let h = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let a = f.q2.transpose();
            for k in 1..=2 {
                for &gamma in &[0.3, 0.6, 0.9] {
                    let cert = nsp_check(&a, k, gamma, NspNorm::L2).unwrap();
                    if cert.holds && cert.method.is_exact()
                        && cert.method != NspMethod::TrivialNullspace
                    {
                        let bound = gamma.powf(2.0) / (1.0 + gamma.powf(2.0)) * m as f64;
                        assert!(
                            (k as f64) < bound,
                            "NSP held but k={k} >= {bound} (m={m}, gamma={gamma})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn uniqueness_three_ones() {
        let a = q2t_of_ones(3);
        let y = DVector::from_column_slice(&[2.0, 2.0, 7.0]);
        assert!(uniqueness_check(&a, &y, 1).unwrap());
        let y = DVector::from_column_slice(&[2.0, 3.0, 7.0]);
        assert!(!uniqueness_check(&a, &y, 1).unwrap());
    }

    #[test]
    fn uniqueness_repeated_column_fails() {
        // duplicate a column: some 2-subset is dependent
        let a = q2t_of_ones(4);
        let mut dup = a.clone();
        dup.set_column(1, &a.column(0).into_owned());
        let y = DVector::zeros(4);
        assert!(!uniqueness_check(&dup, &y, 1).unwrap());
    }
}
