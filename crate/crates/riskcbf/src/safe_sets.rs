//! Safe-set families and barrier evaluation.
//!
//! A safe set is the superlevel set `{x : h(x) >= 0}` of a barrier
//! function h; the boundary `h = 0` counts as safe.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::moments::smallest_eigenvalue;

/// Half-space `{x : qᵀx + r >= 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceSet {
    pub q: DVector<f64>,
    pub r: f64,
}

impl HalfSpaceSet {
    pub fn new(q: DVector<f64>, r: f64) -> Result<Self, Error> {
        if q.norm() <= 1e-12 {
            return Err(Error::Precondition("half-space normal must be nonzero".into()));
        }
        Ok(Self { q, r })
    }
}

/// Polytope `{x : Qᵀx + r >= 0}` with the half-space normals stacked as
/// columns of Q.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeSet {
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl PolytopeSet {
    pub fn new(q: DMatrix<f64>, r: DVector<f64>) -> Result<Self, Error> {
        let m = q.ncols();
        if m == 0 {
            return Err(Error::Precondition("polytope needs at least one row".into()));
        }
        if r.len() != m {
            return Err(Error::DimensionMismatch {
                context: "PolytopeSet r",
                expected: m,
                actual: r.len(),
            });
        }
        for i in 0..m {
            if q.column(i).norm() <= 1e-12 {
                return Err(Error::Precondition(format!(
                    "polytope column {i} must be nonzero"
                )));
            }
        }
        Ok(Self { q, r })
    }

    /// Number of stacked half-spaces.
    pub fn num_rows(&self) -> usize {
        self.q.ncols()
    }
}

/// Ellipsoid `{x : xᵀEx <= r}`, i.e. `h(x) = -xᵀEx + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSet {
    pub e: DMatrix<f64>,
    pub r: f64,
}

impl EllipsoidSet {
    pub fn new(e: DMatrix<f64>, r: f64) -> Result<Self, Error> {
        if e.nrows() != e.ncols() {
            return Err(Error::DimensionMismatch {
                context: "EllipsoidSet E",
                expected: e.nrows(),
                actual: e.ncols(),
            });
        }
        let e = (&e + e.transpose()) * 0.5;
        let min_eig = smallest_eigenvalue(&e);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
        if r <= 0.0 {
            return Err(Error::Precondition("ellipsoid radius must be positive".into()));
        }
        Ok(Self { e, r })
    }
}

/// Boxed scalar barrier function `h(x)`.
pub type BarrierFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Boxed barrier gradient `∇h(x)`.
pub type GradientFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Smooth concave barrier with a user-supplied gradient and a curvature
/// bound σ such that `-σI ⪯ ∇²h(x)` everywhere.
pub struct SmoothSet {
    pub h: BarrierFn,
    pub gradient: GradientFn,
    pub curvature_bound: f64,
}

impl SmoothSet {
    pub fn new(h: BarrierFn, gradient: GradientFn, curvature_bound: f64) -> Result<Self, Error> {
        if curvature_bound < 0.0 {
            return Err(Error::Precondition(
                "curvature bound must be nonnegative".into(),
            ));
        }
        Ok(Self {
            h,
            gradient,
            curvature_bound,
        })
    }

    /// Checks the supplied gradient against central differences
    /// (step 1e-6, relative tolerance 1e-4) at the given point.
    pub fn gradient_consistent_at(&self, x: &DVector<f64>) -> bool {
        let step = 1e-6;
        let grad = (self.gradient)(x);
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = ((self.h)(&xp) - (self.h)(&xm)) / (2.0 * step);
            let scale = grad[i].abs().max(fd.abs()).max(1.0);
            if (grad[i] - fd).abs() > 1e-4 * scale {
                return false;
            }
        }
        true
    }
}

impl std::fmt::Debug for SmoothSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothSet")
            .field("curvature_bound", &self.curvature_bound)
            .finish_non_exhaustive()
    }
}

/// Tagged union over the supported safe-set families.
#[derive(Debug)]
pub enum SafeSet {
    HalfSpace(HalfSpaceSet),
    Polytope(PolytopeSet),
    Ellipsoid(EllipsoidSet),
    Smooth(SmoothSet),
}

impl SafeSet {
    /// Barrier value h(x); length 1 except for polytopes.
    pub fn barrier_value(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        match self {
            SafeSet::HalfSpace(hs) => {
                check_dim("barrier_value", hs.q.len(), x.len())?;
                Ok(DVector::from_vec(vec![hs.q.dot(x) + hs.r]))
            }
            SafeSet::Polytope(p) => {
                check_dim("barrier_value", p.q.nrows(), x.len())?;
                Ok(p.q.transpose() * x + &p.r)
            }
            SafeSet::Ellipsoid(e) => {
                check_dim("barrier_value", e.e.nrows(), x.len())?;
                Ok(DVector::from_vec(vec![
                    -(x.transpose() * &e.e * x)[(0, 0)] + e.r,
                ]))
            }
            SafeSet::Smooth(s) => Ok(DVector::from_vec(vec![(s.h)(x)])),
        }
    }

    /// True iff every barrier component is nonnegative.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool, Error> {
        Ok(self.barrier_value(x)?.iter().all(|&h| h >= 0.0))
    }

    /// Barrier output dimension p.
    pub fn barrier_dim(&self) -> usize {
        match self {
            SafeSet::Polytope(p) => p.num_rows(),
            _ => 1,
        }
    }
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<(), Error> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
