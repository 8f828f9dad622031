//! Dense linear algebra for the measurement model: Householder QR with an
//! explicit orthogonal complement, singular values, and nullspace bases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Frobenius-level tolerance the factor invariants are validated against.
pub const QR_TOL: f64 = 1e-10;

/// QR split of a tall full-column-rank matrix `H = Q1 R1`, with `Q2` an
/// orthonormal basis of the left nullspace (`Q2' H = 0`).
#[derive(Debug, Clone)]
pub struct QrFactors {
    /// m×n orthonormal columns spanning range(H).
    pub q1: DMatrix<f64>,
    /// m×(m−n) orthonormal columns spanning range(H)⊥.
    pub q2: DMatrix<f64>,
    /// n×n upper triangular with nonnegative diagonal.
    pub r1: DMatrix<f64>,
}

impl QrFactors {
    pub fn m(&self) -> usize {
        self.q1.nrows()
    }

    pub fn n(&self) -> usize {
        self.q1.ncols()
    }

    /// Applies `R1⁻¹ Q1'` to a clean (attack-free) measurement vector,
    /// recovering the state by back substitution.
    pub fn state_from_clean(&self, v: &DVector<f64>) -> DVector<f64> {
        let rhs = self.q1.transpose() * v;
        solve_upper_triangular(&self.r1, &rhs)
    }
}

fn solve_upper_triangular(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.ncols();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Householder QR of a tall matrix, returning the thin factor, its
/// orthogonal complement, and the triangular factor.
///
/// The diagonal of `R1` is made nonnegative by flipping signs into the
/// corresponding columns of `Q`.
pub fn qr_split(h: &DMatrix<f64>) -> Result<QrFactors> {
    let (m, n) = h.shape();
    if m <= n {
        return Err(Error::Shape(format!(
            "qr_split needs m > n, got {m}x{n}"
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }

    let mut r = h.clone();
    // Householder vectors, one per column.
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(n);
    let scale = h.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);

    for j in 0..n {
        let mut v = DVector::zeros(m - j);
        for i in j..m {
            v[i - j] = r[(i, j)];
        }
        let alpha = v.norm();
        if alpha <= f64::EPSILON * (m as f64) * scale {
            return Err(Error::RankDeficient(format!(
                "column {j} is dependent on the preceding columns"
            )));
        }
        // reflect onto -sign(v0) * alpha * e1 for stability
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        // apply I - 2 v v'/v'v to the trailing block of R
        for col in j..n {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i - j] * r[(i, col)];
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                r[(i, col)] -= f * v[i - j];
            }
        }
        vs.push(v);
    }

    // rank check on the triangular diagonal
    for j in 0..n {
        if r[(j, j)].abs() <= f64::EPSILON * (m as f64) * scale * 10.0 {
            return Err(Error::RankDeficient(format!(
                "R diagonal entry {j} is numerically zero"
            )));
        }
    }

    // accumulate Q = H_0 H_1 ... H_{n-1} by applying the reflectors to I
    let mut q = DMatrix::<f64>::identity(m, m);
    for j in (0..n).rev() {
        let v = &vs[j];
        let vnorm2 = v.norm_squared();
        for col in 0..m {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i - j] * q[(i, col)];
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                q[(i, col)] -= f * v[i - j];
            }
        }
    }

    // nonnegative diagonal convention: flip row of R and column of Q together
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for col in j..n {
                r[(j, col)] = -r[(j, col)];
            }
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }

    let q1 = q.columns(0, n).into_owned();
    let q2 = q.columns(n, m - n).into_owned();
    let mut r1 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r1[(i, j)] = r[(i, j)];
        }
    }
    Ok(QrFactors { q1, q2, r1 })
}

/// The residual projector `Q2'`: annihilates range(H), so `Q2' y` depends
/// only on the corruption and noise, never on the state.
pub fn residual_projector(f: &QrFactors) -> DMatrix<f64> {
    f.q2.transpose()
}

/// Smallest singular value of a dense matrix.
pub fn smallest_singular_value(h: &DMatrix<f64>) -> f64 {
    assert!(h.nrows() > 0 && h.ncols() > 0, "empty matrix");
    let sv = h.clone().singular_values();
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the (right) nullspace of `a`. Returns an m×d matrix
/// whose columns span {v : a v = 0}, d = m − rank(a).
pub fn nullspace_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, m) = a.shape();
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let tol = smax * f64::EPSILON * (rows.max(m) as f64) * 10.0;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let d = m - rank;
    if d == 0 {
        return DMatrix::zeros(m, 0);
    }
    // A wide matrix's thin SVD misses right singular vectors; zero-padding to
    // square exposes the full right basis. Tall inputs already carry it.
    let svd = if rows >= m {
        a.clone().svd(false, true)
    } else {
        let mut padded = DMatrix::<f64>::zeros(m, m);
        padded.view_mut((0, 0), (rows, m)).copy_from(a);
        padded.svd(false, true)
    };
    let vt = svd.v_t.expect("svd requested v_t");
    let mut pairs: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut basis = DMatrix::zeros(m, d);
    for (col, (_, i)) in pairs.iter().take(d).enumerate() {
        basis.set_column(col, &vt.row(*i).transpose());
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn check_factors(h: &DMatrix<f64>, f: &QrFactors) {
        let (m, n) = h.shape();
        let q1tq1 = f.q1.transpose() * &f.q1;
        let q2tq2 = f.q2.transpose() * &f.q2;
        let q1tq2 = f.q1.transpose() * &f.q2;
        assert!((q1tq1 - DMatrix::identity(n, n)).norm() < QR_TOL);
        assert!((q2tq2 - DMatrix::identity(m - n, m - n)).norm() < QR_TOL);
        assert!(q1tq2.norm() < QR_TOL);
        assert!((&f.q1 * &f.r1 - h).norm() < QR_TOL * h.norm().max(1.0));
        for j in 0..n {
            assert!(f.r1[(j, j)] >= 0.0);
        }
    }

    #[test]
    fn qr_of_two_ones() {
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let f = qr_split(&h).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert_relative_eq!(f.q1[(0, 0)], s, epsilon = 1e-12);
        assert_relative_eq!(f.q1[(1, 0)], s, epsilon = 1e-12);
        assert_relative_eq!(f.r1[(0, 0)], 2.0_f64.sqrt(), epsilon = 1e-12);
        // Q2 determined up to sign
        assert_relative_eq!(f.q2[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(f.q2[(1, 0)].abs(), s, epsilon = 1e-12);
        assert!(f.q2[(0, 0)] * f.q2[(1, 0)] < 0.0);
        check_factors(&h, &f);
    }

    #[test]
    fn qr_of_unit_column() {
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = qr_split(&h).unwrap();
        assert_relative_eq!(f.q1[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.q1[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.q2[(0, 0)].abs(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.q2[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.r1[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn qr_of_three_ones_annihilates() {
        let h = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let f = qr_split(&h).unwrap();
        let s = 1.0 / 3.0_f64.sqrt();
        for i in 0..3 {
            assert_relative_eq!(f.q1[(i, 0)], s, epsilon = 1e-12);
        }
        let resid = f.q2.transpose() * &h;
        assert!(resid.norm() < 1e-12);
        check_factors(&h, &f);
    }

    #[test]
    fn residual_projector_kills_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let h = random_matrix(&mut rng, 6, 2);
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let p = residual_projector(&f);
            let x = random_matrix(&mut rng, 2, 1);
            let hx = &h * &x;
            assert!((&p * &hx).norm() < 1e-10);
            // adding Hx to y leaves the projected residual unchanged
            let y = random_matrix(&mut rng, 6, 1);
            let r0 = &p * &y;
            let r1 = &p * (&y + &hx);
            assert!((r0 - r1).norm() < 1e-10);
        }
    }

    #[test]
    fn qr_rejects_wide_and_rank_deficient() {
        let wide = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(qr_split(&wide), Err(Error::Shape(_))));
        let rd = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(qr_split(&rd), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn qr_random_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let m = rng.gen_range(3..12);
            let n = rng.gen_range(1..m);
            let h = random_matrix(&mut rng, m, n);
            if let Ok(f) = qr_split(&h) {
                check_factors(&h, &f);
            }
        }
    }

    #[test]
    fn smallest_singular_values() {
        assert_relative_eq!(
            smallest_singular_value(&DMatrix::identity(3, 3)),
            1.0,
            epsilon = 1e-12
        );
        let col = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_relative_eq!(
            smallest_singular_value(&col),
            2.0_f64.sqrt(),
            epsilon = 1e-10
        );
        let d = DMatrix::from_partial_diagonal(2, 2, &[3.0, 0.5]);
        assert_relative_eq!(smallest_singular_value(&d), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn nullspace_of_wide_row() {
        let s = 1.0 / 2.0_f64.sqrt();
        let a = DMatrix::from_row_slice(1, 2, &[s, -s]);
        let n = nullspace_basis(&a);
        assert_eq!(n.shape(), (2, 1));
        assert!((&a * &n).norm() < 1e-10);
        assert_relative_eq!(n.column(0).norm(), 1.0, epsilon = 1e-10);
        // the nullspace is span{[1,1]}
        assert_relative_eq!(n[(0, 0)], n[(1, 0)], epsilon = 1e-10);
    }

    #[test]
    fn nullspace_dimension_matches_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.gen_range(4..10);
            let n = rng.gen_range(1..m);
            let h = random_matrix(&mut rng, m, n);
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let a = residual_projector(&f); // (m-n) x m, nullspace = range(H)
            let basis = nullspace_basis(&a);
            assert_eq!(basis.ncols(), n);
            assert!((&a * &basis).norm() < 1e-9);
        }
    }
}
