//! Weighted-ℓ1 convex engine: the ellipsoid-constrained program the
//! resilient estimator iterates, its equality-constrained special case,
//! and plain least squares.

mod conic;
pub mod reference;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub(crate) use conic::{ConeSpec, ConicProblem, ConicStatus};

use crate::error::{Error, Result};
use crate::gpr::EllipsoidConstraint;
use crate::linalg::qr_split;

/// Which expression an ellipsoid constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EllipsoidTarget {
    /// Constrains Hx + ε (the noiseless-plus-noise model output).
    ModelOutput,
    /// Constrains ε alone.
    Noise,
}

/// min ‖W(y − Hx − ε)‖₁ subject to ellipsoid constraints on Hx+ε and ε.
#[derive(Debug, Clone)]
pub struct WeightedL1Problem {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weights: DVector<f64>,
    pub ellipsoids: Vec<(EllipsoidTarget, EllipsoidConstraint)>,
}

impl WeightedL1Problem {
    pub fn validate(&self) -> Result<()> {
        let (m, _n) = self.h.shape();
        if self.y.len() != m {
            return Err(Error::Shape(format!(
                "y has {} entries, H has {m} rows",
                self.y.len()
            )));
        }
        if self.weights.len() != m {
            return Err(Error::Shape(format!(
                "weights has {} entries, expected {m}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain("weights must be positive and finite".into()));
        }
        for (_, ell) in &self.ellipsoids {
            if ell.center.len() != m || ell.inv_weights.len() != m {
                return Err(Error::Shape("ellipsoid dimension mismatch".into()));
            }
            if ell.radius_sq < 0.0 || !ell.radius_sq.is_finite() {
                return Err(Error::Domain("ellipsoid radius_sq must be >= 0".into()));
            }
            if ell.inv_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::Domain(
                    "ellipsoid inverse weights must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Weighted ℓ1 objective at a candidate point.
    pub fn objective(&self, x: &DVector<f64>, eps: &DVector<f64>) -> f64 {
        let r = &self.y - &self.h * x - eps;
        r.iter()
            .zip(self.weights.iter())
            .map(|(ri, wi)| wi * ri.abs())
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// An ε-suboptimal solution with independently computed KKT residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub x: DVector<f64>,
    pub eps: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Solves the ellipsoid-constrained weighted-ℓ1 program by epigraph
/// reformulation over (x, ε, t) with second-order-cone constraints.
/// Zero-radius ellipsoids become equality constraints.
pub fn solve_weighted_l1(p: &WeightedL1Problem, opts: &SolveOptions) -> Result<Solution> {
    p.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Domain("tol must be positive".into()));
    }
    let (m, n) = p.h.shape();
    // variables: x (n) | eps (m) | t (m)
    let nv = n + 2 * m;
    let x_of = |j: usize| j;
    let e_of = |j: usize| n + j;
    let t_of = |j: usize| n + m + j;

    let mut prob = ConicProblem::new(nv);
    for j in 0..m {
        prob.set_objective(t_of(j), 1.0);
    }

    // epigraph: ±w_j(y − Hx − ε)_j ≤ t_j
    for j in 0..m {
        let w = p.weights[j];
        let mut up: Vec<(usize, f64)> = (0..n).map(|c| (x_of(c), -w * p.h[(j, c)])).collect();
        up.push((e_of(j), -w));
        up.push((t_of(j), -1.0));
        prob.push_row(up, -w * p.y[j]);

        let mut dn: Vec<(usize, f64)> = (0..n).map(|c| (x_of(c), w * p.h[(j, c)])).collect();
        dn.push((e_of(j), w));
        dn.push((t_of(j), -1.0));
        prob.push_row(dn, w * p.y[j]);
    }
    prob.push_cone(ConeSpec::Nonneg(2 * m));

    for (target, ell) in &p.ellipsoids {
        let radius = ell.radius_sq.sqrt();
        // rows express D(u − center) with u the constrained expression
        let scaled_rows: Vec<(Vec<(usize, f64)>, f64)> = (0..m)
            .map(|i| {
                let d = ell.inv_weights[i].sqrt();
                let mut coeffs: Vec<(usize, f64)> = match target {
                    EllipsoidTarget::ModelOutput => {
                        let mut c: Vec<(usize, f64)> =
                            (0..n).map(|cc| (x_of(cc), d * p.h[(i, cc)])).collect();
                        c.push((e_of(i), d));
                        c
                    }
                    EllipsoidTarget::Noise => vec![(e_of(i), d)],
                };
                coeffs.retain(|&(_, v)| v != 0.0);
                (coeffs, d * ell.center[i])
            })
            .collect();

        if radius == 0.0 {
            for (coeffs, rhs) in scaled_rows {
                prob.push_row(coeffs, rhs);
            }
            prob.push_cone(ConeSpec::Zero(m));
        } else {
            prob.push_row(Vec::new(), radius);
            for (coeffs, rhs) in scaled_rows {
                prob.push_row(coeffs, rhs);
            }
            prob.push_cone(ConeSpec::Soc(m + 1));
        }
    }

    let out = prob.solve(opts.tol, opts.max_iter)?;
    match out.status {
        ConicStatus::PrimalInfeasible => Ok(Solution {
            x: DVector::zeros(n),
            eps: DVector::zeros(m),
            objective: f64::INFINITY,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            iterations: out.iterations,
        }),
        status => {
            let x = DVector::from_fn(n, |i, _| out.x[x_of(i)]);
            let eps = DVector::from_fn(m, |j, _| out.x[e_of(j)]);
            let objective = p.objective(&x, &eps);
            Ok(Solution {
                x,
                eps,
                objective,
                status: if status == ConicStatus::Solved {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::MaxIter
                },
                kkt_residual: out.kkt_residual,
                iterations: out.iterations,
            })
        }
    }
}

/// min ‖e‖₁ s.t. Q2'(y − e) = 0. Always feasible (e = y).
pub fn solve_l1_equality(q2t: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, m) = q2t.shape();
    if y.len() != m {
        return Err(Error::Shape(format!(
            "y has {} entries, projector has {m} columns",
            y.len()
        )));
    }
    // variables: e (m) | t (m)
    let mut prob = ConicProblem::new(2 * m);
    for j in 0..m {
        prob.set_objective(m + j, 1.0);
    }
    let rhs = q2t * y;
    for r in 0..rows {
        let coeffs: Vec<(usize, f64)> = (0..m)
            .map(|c| (c, q2t[(r, c)]))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        prob.push_row(coeffs, rhs[r]);
    }
    prob.push_cone(ConeSpec::Zero(rows));
    for j in 0..m {
        prob.push_row(vec![(j, 1.0), (m + j, -1.0)], 0.0);
        prob.push_row(vec![(j, -1.0), (m + j, -1.0)], 0.0);
    }
    prob.push_cone(ConeSpec::Nonneg(2 * m));

    let out = prob.solve(1e-9, 200)?;
    if out.status == ConicStatus::PrimalInfeasible {
        return Err(Error::Numerical(
            "equality-constrained l1 reported infeasible; projector is inconsistent".into(),
        ));
    }
    Ok(DVector::from_fn(m, |j, _| out.x[j]))
}

/// Least squares via the QR factors: x = R1⁻¹ Q1' y.
pub fn least_squares(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != h.nrows() {
        return Err(Error::Shape(format!(
            "y has {} entries, H has {} rows",
            y.len(),
            h.nrows()
        )));
    }
    let f = qr_split(h)?;
    Ok(f.state_from_clean(y))
}
