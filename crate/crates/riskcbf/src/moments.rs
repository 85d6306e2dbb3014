//! Moment ambiguity sets: known mean and covariance, unknown distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// Relative tolerance (against the trace) below which the smallest
/// covariance eigenvalue is rejected as not positive definite.
const PD_REL_TOL: f64 = 1e-12;

/// First- and second-moment description of a random vector. All
/// distributions sharing these moments form the ambiguity set.
///
/// Immutable after construction; the covariance is symmetrized and
/// checked for positive definiteness up front.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl MomentSet {
    /// Validates and builds a moment set. The covariance is symmetrized
    /// as `(A + Aᵀ)/2`; a smallest eigenvalue at or below
    /// `1e-12 · trace` is rejected.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, Error> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Precondition("mean must have length >= 1".into()));
        }
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "MomentSet covariance",
                expected: n,
                actual: covariance.nrows().max(covariance.ncols()),
            });
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let min_eig = smallest_eigenvalue(&covariance);
        if min_eig <= PD_REL_TOL * covariance.trace().abs() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self { mean, covariance })
    }

    /// Zero-mean moment set, the shape used for disturbance models.
    pub fn zero_mean(covariance: DMatrix<f64>) -> Result<Self, Error> {
        let n = covariance.nrows();
        Self::new(DVector::zeros(n), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn is_zero_mean(&self) -> bool {
        self.mean.amax() == 0.0
    }

    /// Second-order moment matrix `Ω = [[Σ + μμᵀ, μ], [μᵀ, 1]]`.
    pub fn second_moment_matrix(&self) -> SecondMomentMatrix {
        let n = self.dim();
        let mut omega = DMatrix::zeros(n + 1, n + 1);
        omega
            .view_mut((0, 0), (n, n))
            .copy_from(&(&self.covariance + &self.mean * self.mean.transpose()));
        omega.view_mut((0, n), (n, 1)).copy_from(&self.mean);
        omega
            .view_mut((n, 0), (1, n))
            .copy_from(&self.mean.transpose());
        omega[(n, n)] = 1.0;
        SecondMomentMatrix { omega }
    }
}

/// The `(n+1)×(n+1)` second-order moment matrix Ω of a moment set.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentMatrix {
    omega: DMatrix<f64>,
}

impl SecondMomentMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Side length of Ω, i.e. `n + 1`.
    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }
}

pub(crate) fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
