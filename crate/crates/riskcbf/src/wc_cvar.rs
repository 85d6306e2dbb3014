//! Worst-case Conditional Value-at-Risk over a moment ambiguity set.
//!
//! For a quadratic loss `L(ξ) = ξᵀPξ + 2qᵀξ + r` the worst-case CVaR at
//! level ε is the optimum of a small semidefinite program in (β, N):
//!
//! ```text
//!   inf  β + Tr(ΩN)/ε
//!   s.t. N ⪰ 0,   N − [[P, q], [qᵀ, r − β]] ⪰ 0.
//! ```
//!
//! Affine losses (P = 0) additionally admit the closed form
//! `qᵀμ + r + √((1−ε)/ε)·√(qᵀΣq)`, used as the fast path inside
//! constraint generation and cross-validated against the SDP in tests.

use nalgebra::{DMatrix, DVector};

use crate::conic::{self, Cone, ConeBlock, ConicProblem};
use crate::error::Error;
use crate::moments::MomentSet;

/// Quadratic loss `L(ξ) = ξᵀPξ + 2qᵀξ + r`. `P` is symmetrized at
/// construction; affine losses are the `P = 0` special case.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    p: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
}

impl QuadraticLoss {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self, Error> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "QuadraticLoss P",
                expected: n,
                actual: p.nrows().max(p.ncols()),
            });
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self { p, q, r })
    }

    pub fn affine(q: DVector<f64>, r: f64) -> Self {
        let n = q.len();
        Self {
            p: DMatrix::zeros(n, n),
            q,
            r,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Pointwise evaluation of the loss.
    pub fn eval(&self, xi: &DVector<f64>) -> f64 {
        (xi.transpose() * &self.p * xi)[(0, 0)] + 2.0 * self.q.dot(xi) + self.r
    }
}

/// CVaR level ε, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvarLevel {
    epsilon: f64,
}

impl CvarLevel {
    pub fn new(epsilon: f64) -> Result<Self, Error> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidLevel(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The factor √((1−ε)/ε) appearing in the affine closed form.
    pub fn tail_factor(&self) -> f64 {
        ((1.0 - self.epsilon) / self.epsilon).sqrt()
    }
}

/// SDP optimum together with the certifying (β, N) pair.
#[derive(Debug, Clone)]
pub struct CvarCertificate {
    pub value: f64,
    pub beta: f64,
    pub n_matrix: DMatrix<f64>,
}

/// Worst-case CVaR of a quadratic loss via the moment SDP.
pub fn wc_cvar_quadratic(
    loss: &QuadraticLoss,
    ms: &MomentSet,
    level: CvarLevel,
) -> Result<CvarCertificate, Error> {
    let n = ms.dim();
    if loss.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "wc_cvar_quadratic loss",
            expected: n,
            actual: loss.dim(),
        });
    }
    let d = n + 1;
    let tri = conic::triangle_len(d);
    let omega = ms.second_moment_matrix();

    // Variables z = [β, svec(N)].
    let nvars = 1 + tri;
    let mut objective = DVector::zeros(nvars);
    objective[0] = 1.0;
    objective
        .rows_mut(1, tri)
        .copy_from(&(conic::svec(omega.matrix()) / level.epsilon()));

    // Block 1: N ⪰ 0.
    let mut psd_n = DMatrix::zeros(tri, nvars);
    psd_n
        .view_mut((0, 1), (tri, tri))
        .copy_from(&DMatrix::identity(tri, tri));

    // Block 2: N − M(β) ⪰ 0 where M(β) = [[P, q/2], [qᵀ/2, r − β]]
    // homogenizes the loss: [ξ;1]ᵀ M(0) [ξ;1] = ξᵀPξ + qᵀξ + r.
    let half_q = loss.q() * 0.5;
    let mut m0 = DMatrix::zeros(d, d);
    m0.view_mut((0, 0), (n, n)).copy_from(loss.p());
    m0.view_mut((0, n), (n, 1)).copy_from(&half_q);
    m0.view_mut((n, 0), (1, n)).copy_from(&half_q.transpose());
    m0[(n, n)] = loss.r();
    let mut e_dd = DMatrix::zeros(d, d);
    e_dd[(d - 1, d - 1)] = 1.0;

    let mut shifted = psd_n.clone();
    shifted.column_mut(0).copy_from(&conic::svec(&e_dd));
    let offset = -conic::svec(&m0);

    let problem = ConicProblem::new(
        objective,
        vec![
            ConeBlock {
                map: psd_n,
                offset: DVector::zeros(tri),
                cone: Cone::Psd(d),
            },
            ConeBlock {
                map: shifted,
                offset,
                cone: Cone::Psd(d),
            },
        ],
    )?;

    let sol = conic::solve(&problem)?.into_optimal()?;
    let beta = sol.primal[0];
    let n_matrix = conic::smat(&DVector::from(sol.primal.rows(1, tri).clone_owned()), d);
    Ok(CvarCertificate {
        value: sol.objective,
        beta,
        n_matrix,
    })
}

/// Closed-form worst-case CVaR of the affine loss `qᵀξ + r`:
/// `qᵀμ + r + √((1−ε)/ε)·√(qᵀΣq)`.
pub fn wc_cvar_linear(
    q: &DVector<f64>,
    r: f64,
    ms: &MomentSet,
    level: CvarLevel,
) -> Result<f64, Error> {
    if q.len() != ms.dim() {
        return Err(Error::DimensionMismatch {
            context: "wc_cvar_linear q",
            expected: ms.dim(),
            actual: q.len(),
        });
    }
    let variance = (q.transpose() * ms.covariance() * q)[(0, 0)].max(0.0);
    Ok(q.dot(ms.mean()) + r + level.tail_factor() * variance.sqrt())
}

/// Element-wise worst-case CVaR of the disturbance coordinates, i.e.
/// component i is the worst-case CVaR of `eᵢᵀξ`.
pub fn wc_cvar_elementwise(ms: &MomentSet, level: CvarLevel) -> DVector<f64> {
    let factor = level.tail_factor();
    DVector::from_fn(ms.dim(), |i, _| {
        ms.mean()[i] + factor * ms.covariance()[(i, i)].max(0.0).sqrt()
    })
}

/// Upper bound `Σᵢ |qᵢ| · wcCVaR[ξᵢ]` on the worst-case CVaR of `qᵀξ`
/// for zero-mean moment sets.
pub fn linear_cvar_bound(
    q: &DVector<f64>,
    ms: &MomentSet,
    level: CvarLevel,
) -> Result<f64, Error> {
    if q.len() != ms.dim() {
        return Err(Error::DimensionMismatch {
            context: "linear_cvar_bound q",
            expected: ms.dim(),
            actual: q.len(),
        });
    }
    if !ms.is_zero_mean() {
        return Err(Error::Precondition(
            "linear_cvar_bound requires a zero-mean moment set".into(),
        ));
    }
    let elementwise = wc_cvar_elementwise(ms, level);
    Ok(q.iter()
        .zip(elementwise.iter())
        .map(|(qi, wi)| qi.abs() * wi)
        .sum())
}
