//! Conic solver contract: minimize a linear (optionally
//! quadratic-plus-linear) objective subject to affine maps landing in
//! nonnegative, second-order, or PSD cones.
//!
//! Backed by Clarabel. Each block states `map · x + offset ∈ cone`; for
//! PSD blocks the affine image is the scaled upper-triangle vectorization
//! (svec) of the matrix.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// Feasibility and duality-gap tolerance requested from the backend.
pub const SOLVER_TOL: f64 = 1e-9;

/// Residual bound under which a stalled iterate is still accepted as optimal.
const ACCEPT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Componentwise `>= 0`, given dimension.
    Nonnegative(usize),
    /// `s[0] >= ||s[1..]||`, given total dimension.
    SecondOrder(usize),
    /// svec of a `dim × dim` symmetric PSD matrix.
    Psd(usize),
}

impl Cone {
    /// Length of the affine image this cone consumes.
    pub fn vec_len(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(d) => triangle_len(d),
        }
    }
}

/// One affine-in-cone constraint block: `map · x + offset ∈ cone`.
#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub map: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cone: Cone,
}

/// Objective `½ xᵀPx + qᵀx` (P optional, symmetric PSD) over a flat
/// variable vector plus cone blocks.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub objective: DVector<f64>,
    pub quadratic: Option<DMatrix<f64>>,
    pub blocks: Vec<ConeBlock>,
}

impl ConicProblem {
    pub fn new(objective: DVector<f64>, blocks: Vec<ConeBlock>) -> Result<Self, Error> {
        Self::with_quadratic(objective, None, blocks)
    }

    pub fn with_quadratic(
        objective: DVector<f64>,
        quadratic: Option<DMatrix<f64>>,
        blocks: Vec<ConeBlock>,
    ) -> Result<Self, Error> {
        let n = objective.len();
        if let Some(p) = &quadratic {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::MalformedProblem(format!(
                    "quadratic objective is {}x{}, problem has {n} variables",
                    p.nrows(),
                    p.ncols()
                )));
            }
            if (p - p.transpose()).amax() > 1e-12 * (1.0 + p.amax()) {
                return Err(Error::MalformedProblem(
                    "quadratic objective must be symmetric".into(),
                ));
            }
        }
        for (i, block) in blocks.iter().enumerate() {
            if block.map.ncols() != n {
                return Err(Error::MalformedProblem(format!(
                    "block {i}: map has {} columns, problem has {n} variables",
                    block.map.ncols()
                )));
            }
            let rows = block.cone.vec_len();
            if block.map.nrows() != rows || block.offset.len() != rows {
                return Err(Error::MalformedProblem(format!(
                    "block {i}: cone {:?} needs {rows} rows, map has {}, offset has {}",
                    block.cone,
                    block.map.nrows(),
                    block.offset.len()
                )));
            }
        }
        Ok(Self {
            objective,
            quadratic,
            blocks,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub primal: DVector<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
}

impl ConicSolution {
    /// Returns the solution if optimal, otherwise the corresponding error.
    pub fn into_optimal(self) -> Result<ConicSolution, Error> {
        match self.status {
            ConicStatus::Optimal => Ok(self),
            ConicStatus::Infeasible => {
                Err(Error::Infeasible("conic problem is infeasible".into()))
            }
            status => Err(Error::SolverFailure {
                status,
                primal_residual: self.primal_residual,
                dual_residual: self.dual_residual,
            }),
        }
    }
}

/// Solves the problem. Divergence reports `NumericalFailure`, never a
/// silent wrong answer.
pub fn solve(problem: &ConicProblem) -> Result<ConicSolution, Error> {
    let n = problem.num_vars();
    let m: usize = problem.blocks.iter().map(|b| b.cone.vec_len()).sum();

    // Clarabel convention: A x + s = b with s in the cone product,
    // so A = -map and b = offset per block.
    let mut a_dense = DMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(problem.blocks.len());
    let mut row = 0;
    for block in &problem.blocks {
        let rows = block.cone.vec_len();
        a_dense
            .view_mut((row, 0), (rows, n))
            .copy_from(&(-&block.map));
        b[row..row + rows].copy_from_slice(block.offset.as_slice());
        cones.push(match block.cone {
            Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
            Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
            Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
        });
        row += rows;
    }

    let a = dense_to_csc(&a_dense);
    let p = match &problem.quadratic {
        Some(quad) => dense_to_csc(quad),
        None => CscMatrix::zeros((n, n)),
    };
    let q: Vec<f64> = problem.objective.iter().cloned().collect();

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(SOLVER_TOL)
        .tol_gap_rel(SOLVER_TOL)
        .tol_feas(SOLVER_TOL)
        .build()
        .expect("static solver settings");

    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
    solver.solve();

    // The interior-point method can stall a hair above the requested
    // tolerance; accept such iterates only when the residuals and the
    // duality gap independently certify the solution.
    let gap = (solver.solution.obj_val - solver.solution.obj_val_dual).abs();
    let certified = solver.solution.r_prim <= ACCEPT_TOL
        && solver.solution.r_dual <= ACCEPT_TOL
        && gap <= ACCEPT_TOL * (1.0 + solver.solution.obj_val.abs());

    let status = match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => ConicStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            ConicStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            ConicStatus::Unbounded
        }
        SolverStatus::InsufficientProgress | SolverStatus::NumericalError if certified => {
            ConicStatus::Optimal
        }
        _ => ConicStatus::NumericalFailure,
    };

    Ok(ConicSolution {
        status,
        primal: DVector::from_vec(solver.solution.x.clone()),
        objective: solver.solution.obj_val,
        primal_residual: solver.solution.r_prim,
        dual_residual: solver.solution.r_dual,
        duality_gap: (solver.solution.obj_val - solver.solution.obj_val_dual).abs(),
    })
}

/// Number of entries in the upper triangle of a `d × d` matrix.
pub fn triangle_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Scaled vectorization of a symmetric matrix: upper triangle stacked
/// column-wise with off-diagonals multiplied by √2, so that
/// `svec(A) · svec(B) = Tr(AB)`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    let mut out = DVector::zeros(triangle_len(d));
    let mut idx = 0;
    for col in 0..d {
        for row in 0..=col {
            out[idx] = if row == col {
                m[(row, col)]
            } else {
                (m[(row, col)] + m[(col, row)]) * std::f64::consts::FRAC_1_SQRT_2
            };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), triangle_len(d));
    let mut m = DMatrix::zeros(d, d);
    let mut idx = 0;
    for col in 0..d {
        for row in 0..=col {
            if row == col {
                m[(row, col)] = v[idx];
            } else {
                let val = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
                m[(row, col)] = val;
                m[(col, row)] = val;
            }
            idx += 1;
        }
    }
    m
}

fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix<f64> {
    let (nrows, ncols) = m.shape();
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in 0..ncols {
        for row in 0..nrows {
            let v = m[(row, col)];
            if v != 0.0 {
                rowval.push(row);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}
