//! Internal bridge to the conic interior-point solver. Rows are assembled
//! cone-block by cone-block; KKT residuals of the returned primal/dual
//! pair are recomputed here rather than trusted from the solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) enum ConeSpec {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
}

/// Sparse row-oriented problem builder: min q'v s.t. b − Av ∈ K.
pub(crate) struct ConicProblem {
    nvars: usize,
    pub(crate) q: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    pub(crate) b: Vec<f64>,
    cones: Vec<ConeSpec>,
}

pub(crate) struct ConicOutcome {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub iterations: usize,
    /// max of scaled primal residual, dual residual, gap, and raw
    /// constraint violation
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConicStatus {
    Solved,
    PrimalInfeasible,
    ReducedAccuracy,
}

impl ConicProblem {
    pub fn new(nvars: usize) -> Self {
        Self {
            nvars,
            q: vec![0.0; nvars],
            rows: Vec::new(),
            b: Vec::new(),
            cones: Vec::new(),
        }
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.q[var] = coef;
    }

    /// Adds one row `sum coeffs·v (cone-relation) rhs`; call within a block
    /// opened by `begin_*`/closed by `finish_block` ordering: rows must be
    /// appended in cone order.
    pub fn push_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(coeffs);
        self.b.push(rhs);
    }

    pub fn push_cone(&mut self, cone: ConeSpec) {
        self.cones.push(cone);
    }

    fn assemble(&self) -> (CscMatrix<f64>, Vec<SupportedConeT<f64>>) {
        let nrows = self.rows.len();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        triplets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0usize; self.nvars + 1];
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            colptr[c + 1] += 1;
            rowval.push(r);
            nzval.push(v);
        }
        for c in 0..self.nvars {
            colptr[c + 1] += colptr[c];
        }
        let a = CscMatrix::new(nrows, self.nvars, colptr, rowval, nzval);
        let cones = self
            .cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(n) => SupportedConeT::ZeroConeT(n),
                ConeSpec::Nonneg(n) => SupportedConeT::NonnegativeConeT(n),
                ConeSpec::Soc(n) => SupportedConeT::SecondOrderConeT(n),
            })
            .collect();
        (a, cones)
    }

    /// Worst violation of `b − Av ∈ K` at a point, in the infinity norm.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        let mut row = 0usize;
        let s: Vec<f64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(r, coeffs)| {
                let av: f64 = coeffs.iter().map(|&(c, a)| a * v[c]).sum();
                self.b[r] - av
            })
            .collect();
        for cone in &self.cones {
            match *cone {
                ConeSpec::Zero(n) => {
                    for i in 0..n {
                        worst = worst.max(s[row + i].abs());
                    }
                    row += n;
                }
                ConeSpec::Nonneg(n) => {
                    for i in 0..n {
                        worst = worst.max(-s[row + i]);
                    }
                    row += n;
                }
                ConeSpec::Soc(n) => {
                    let head = s[row];
                    let tail: f64 = s[row + 1..row + n].iter().map(|t| t * t).sum::<f64>().sqrt();
                    worst = worst.max(tail - head);
                    row += n;
                }
            }
        }
        worst
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<ConicOutcome> {
        let (a, cones) = self.assemble();
        let p = CscMatrix::zeros((self.nvars, self.nvars));
        let inner_tol = (tol * 1e-2).max(1e-12);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(max_iter as u32)
            .tol_feas(inner_tol)
            .tol_gap_abs(inner_tol)
            .tol_gap_rel(inner_tol)
            .build()
            .map_err(|e| Error::Numerical(format!("solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &self.q, &a, &self.b, &cones, settings)
            .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved => ConicStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                return Err(Error::Numerical(
                    "objective certified unbounded below (dual infeasible)".into(),
                ))
            }
            SolverStatus::AlmostSolved
            | SolverStatus::MaxIterations
            | SolverStatus::MaxTime
            | SolverStatus::InsufficientProgress => ConicStatus::ReducedAccuracy,
            other => return Err(Error::Numerical(format!("solver failed: {other:?}"))),
        };

        if status == ConicStatus::PrimalInfeasible {
            return Ok(ConicOutcome {
                status,
                x: vec![0.0; self.nvars],
                iterations: sol.iterations as usize,
                kkt_residual: f64::INFINITY,
            });
        }

        let x = sol.x.clone();
        let z = sol.z.clone();
        let s = &sol.s;

        // independent KKT residuals
        let binf = self.b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let qinf = self.q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut r_prim = 0.0_f64;
        for (r, coeffs) in self.rows.iter().enumerate() {
            let av: f64 = coeffs.iter().map(|&(c, acf)| acf * x[c]).sum();
            r_prim = r_prim.max((av + s[r] - self.b[r]).abs());
        }
        r_prim /= 1.0 + binf;

        let mut atz = vec![0.0_f64; self.nvars];
        for (r, coeffs) in self.rows.iter().enumerate() {
            for &(c, acf) in coeffs {
                atz[c] += acf * z[r];
            }
        }
        let mut r_dual = 0.0_f64;
        for c in 0..self.nvars {
            r_dual = r_dual.max((self.q[c] + atz[c]).abs());
        }
        r_dual /= 1.0 + qinf;

        let pobj: f64 = self.q.iter().zip(&x).map(|(q, v)| q * v).sum();
        let dobj: f64 = -self.b.iter().zip(&z).map(|(b, v)| b * v).sum::<f64>();
        let r_gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));

        let scale = 1.0 + binf;
        let primal_violation = self.violation(&x) / scale;
        let kkt = r_prim.max(r_dual).max(r_gap).max(primal_violation);

        // a Solved claim that fails our own residual check is only reduced
        // accuracy, never silently optimal
        let status = if status == ConicStatus::Solved && kkt > tol {
            ConicStatus::ReducedAccuracy
        } else {
            status
        };

        Ok(ConicOutcome {
            status,
            x,
            iterations: sol.iterations as usize,
            kkt_residual: kkt,
        })
    }
}
