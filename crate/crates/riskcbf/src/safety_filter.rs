//! Minimal modification of a nominal input subject to the generated
//! safety constraints, with slack-relaxed fallbacks:
//!
//! ```text
//!   u*(x) = argmin_u ||u - u_nom(x)||²  (+ ρδ)
//!   s.t.  safety constraint            (relaxed by δ >= 0)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::cbf_constraints::{EllipsoidSafetyConstraint, LinearSafetyConstraint};
use crate::conic::{self, Cone, ConeBlock, ConicProblem, ConicStatus};
use crate::error::Error;

/// Threshold on row residuals below which a constraint counts as active.
pub const ACTIVE_TOL: f64 = 1e-7;

/// Filtered input together with slack and activity diagnostics.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub u_star: DVector<f64>,
    /// Lift variable of the ellipsoidal program, absent otherwise.
    pub v_star: Option<DVector<f64>>,
    pub slack: f64,
    pub active: bool,
    /// `||u* - u_nom||² + ρ·slack` (penalty term only for relaxed solves).
    pub objective: f64,
}

/// Exact analytic projection onto a single half-space row `aᵀu <= b`.
pub fn filter_halfspace(
    u_nom: &DVector<f64>,
    c: &LinearSafetyConstraint,
) -> Result<FilterResult, Error> {
    if c.num_rows() != 1 {
        return Err(Error::Precondition(format!(
            "filter_halfspace needs a single row, got {}",
            c.num_rows()
        )));
    }
    let a = DVector::from(c.a.row(0).transpose());
    let b = c.b[0];
    let norm_sq = a.norm_squared();
    if norm_sq <= f64::MIN_POSITIVE {
        if b < 0.0 {
            return Err(Error::Infeasible(
                "constraint row vanishes (g(x) annihilates q) with negative bound".into(),
            ));
        }
        // 0 <= b: every input is feasible
        return Ok(FilterResult {
            u_star: u_nom.clone(),
            v_star: None,
            slack: 0.0,
            active: b.abs() <= ACTIVE_TOL,
            objective: 0.0,
        });
    }
    let violation = a.dot(u_nom) - b;
    let u_star = if violation > 0.0 {
        u_nom - (violation / norm_sq) * &a
    } else {
        u_nom.clone()
    };
    let residual = b - a.dot(&u_star);
    Ok(FilterResult {
        objective: (&u_star - u_nom).norm_squared(),
        active: residual.abs() <= ACTIVE_TOL,
        u_star,
        v_star: None,
        slack: 0.0,
    })
}

/// QP over `u` subject to `A·u <= b` (plus a uniform slack `δ` on every
/// row when `allow_slack` is set, penalized by `ρδ`).
pub fn filter_polytope(
    u_nom: &DVector<f64>,
    c: &LinearSafetyConstraint,
    rho: f64,
    allow_slack: bool,
) -> Result<FilterResult, Error> {
    let m_u = c.a.ncols();
    if u_nom.len() != m_u {
        return Err(Error::DimensionMismatch {
            context: "filter_polytope u_nom",
            expected: m_u,
            actual: u_nom.len(),
        });
    }
    if allow_slack && rho <= 0.0 {
        return Err(Error::Precondition("slack penalty rho must be positive".into()));
    }

    // Scalar input without slack: the rows cut out an interval.
    if m_u == 1 && !allow_slack {
        return filter_scalar_interval(u_nom[0], c);
    }

    let rows = c.num_rows();
    // variables: [u, delta?]; objective ½·uᵀ(2I)u - 2u_nomᵀu (+ ρδ)
    let nvars = m_u + usize::from(allow_slack);
    let delta_idx = m_u;

    let mut objective = DVector::zeros(nvars);
    objective.rows_mut(0, m_u).copy_from(&(-2.0 * u_nom));
    if allow_slack {
        objective[delta_idx] = rho;
    }
    let mut quadratic = DMatrix::zeros(nvars, nvars);
    quadratic
        .view_mut((0, 0), (m_u, m_u))
        .copy_from(&(2.0 * DMatrix::<f64>::identity(m_u, m_u)));

    let mut blocks = Vec::new();

    // b + delta - A u >= 0
    let mut rows_map = DMatrix::zeros(rows, nvars);
    rows_map.view_mut((0, 0), (rows, m_u)).copy_from(&(-&c.a));
    if allow_slack {
        rows_map.column_mut(delta_idx).fill(1.0);
    }
    blocks.push(ConeBlock {
        map: rows_map,
        offset: c.b.clone(),
        cone: Cone::Nonnegative(rows),
    });

    if allow_slack {
        let mut d_map = DMatrix::zeros(1, nvars);
        d_map[(0, delta_idx)] = 1.0;
        blocks.push(ConeBlock {
            map: d_map,
            offset: DVector::zeros(1),
            cone: Cone::Nonnegative(1),
        });
    }

    let sol = conic::solve(&ConicProblem::with_quadratic(
        objective,
        Some(quadratic),
        blocks,
    )?)?;
    if sol.status == ConicStatus::Infeasible {
        return Err(Error::Infeasible(format!(
            "polytope safety constraint has no feasible input \
             (primal residual {:.3e})",
            sol.primal_residual
        )));
    }
    let sol = sol.into_optimal()?;

    let mut u_star = DVector::from(sol.primal.rows(0, m_u).clone_owned());
    let slack = if allow_slack {
        sol.primal[delta_idx].max(0.0)
    } else {
        0.0
    };
    if slack <= ACTIVE_TOL {
        if let Some(polished) = polish_projection(u_nom, c, &u_star) {
            u_star = polished;
        }
    }
    let residuals = &c.b - &c.a * &u_star;
    let active = residuals.iter().any(|&r| r - slack <= ACTIVE_TOL);
    Ok(FilterResult {
        objective: (&u_star - u_nom).norm_squared()
            + if allow_slack { rho * slack } else { 0.0 },
        u_star,
        v_star: None,
        slack,
        active,
    })
}

/// Conic solve of the ellipsoidal program over `ū = [u; v]`:
/// minimize `||u - u_nom||² (+ ρδ)` subject to
/// `ūᵀH̄ū + q̄ᵀū + r̄ <= 0 (<= δ)` and `Āū <= 0`.
pub fn filter_ellipsoid(
    u_nom: &DVector<f64>,
    c: &EllipsoidSafetyConstraint,
    rho: f64,
    allow_slack: bool,
) -> Result<FilterResult, Error> {
    let m_u = c.input_dim;
    let n = c.state_dim;
    if u_nom.len() != m_u {
        return Err(Error::DimensionMismatch {
            context: "filter_ellipsoid u_nom",
            expected: m_u,
            actual: u_nom.len(),
        });
    }
    if allow_slack && rho <= 0.0 {
        return Err(Error::Precondition("slack penalty rho must be positive".into()));
    }

    // variables: [u, v, delta?]; objective ½·uᵀ(2I)u - 2u_nomᵀu (+ ρδ)
    let nvars = m_u + n + usize::from(allow_slack);
    let delta_idx = m_u + n;

    let mut objective = DVector::zeros(nvars);
    objective.rows_mut(0, m_u).copy_from(&(-2.0 * u_nom));
    if allow_slack {
        objective[delta_idx] = rho;
    }
    let mut quadratic = DMatrix::zeros(nvars, nvars);
    quadratic
        .view_mut((0, 0), (m_u, m_u))
        .copy_from(&(2.0 * DMatrix::<f64>::identity(m_u, m_u)));

    let mut blocks = Vec::new();

    // -A ū >= 0
    let mut lin_map = DMatrix::zeros(2 * n, nvars);
    lin_map
        .view_mut((0, 0), (2 * n, m_u + n))
        .copy_from(&(-&c.a_bar));
    blocks.push(ConeBlock {
        map: lin_map,
        offset: DVector::zeros(2 * n),
        cone: Cone::Nonnegative(2 * n),
    });

    if allow_slack {
        let mut d_map = DMatrix::zeros(1, nvars);
        d_map[(0, delta_idx)] = 1.0;
        blocks.push(ConeBlock {
            map: d_map,
            offset: DVector::zeros(1),
            cone: Cone::Nonnegative(1),
        });
    }

    // Quadratic block: ||R u||² <= s with RᵀR the top-left block of H̄
    // and s = δ - q̄ᵀū - r̄, written as ||[2Ru; s-1]|| <= s+1.
    let h_uu = c.h_bar.view((0, 0), (m_u, m_u)).clone_owned();
    let root = psd_square_root(&h_uu);
    let mut s_row = DVector::zeros(nvars);
    s_row
        .rows_mut(0, m_u + n)
        .copy_from(&(-&c.q_bar));
    if allow_slack {
        s_row[delta_idx] = 1.0;
    }
    let mut quad_map = DMatrix::zeros(m_u + 2, nvars);
    quad_map.row_mut(0).copy_from(&s_row.transpose());
    quad_map
        .view_mut((1, 0), (m_u, m_u))
        .copy_from(&(2.0 * &root));
    quad_map.row_mut(m_u + 1).copy_from(&s_row.transpose());
    let mut quad_offset = DVector::zeros(m_u + 2);
    quad_offset[0] = 1.0 - c.r_bar;
    quad_offset[m_u + 1] = -1.0 - c.r_bar;
    blocks.push(ConeBlock {
        map: quad_map,
        offset: quad_offset,
        cone: Cone::SecondOrder(m_u + 2),
    });

    let sol = conic::solve(&ConicProblem::with_quadratic(
        objective,
        Some(quadratic),
        blocks,
    )?)?;
    if sol.status == ConicStatus::Infeasible {
        return Err(Error::Infeasible(
            "ellipsoid safety constraint has no feasible input".into(),
        ));
    }
    let sol = sol.into_optimal()?;

    let u_star = DVector::from(sol.primal.rows(0, m_u).clone_owned());
    let v_star = DVector::from(sol.primal.rows(m_u, n).clone_owned());
    let slack = if allow_slack {
        sol.primal[delta_idx].max(0.0)
    } else {
        0.0
    };
    let u_bar = DVector::from(sol.primal.rows(0, m_u + n).clone_owned());
    let quad_residual = slack - c.quadratic_value(&u_bar);
    let lin_rows = &c.a_bar * &u_bar;
    let active =
        quad_residual <= ACTIVE_TOL || lin_rows.iter().any(|&r| r.abs() <= ACTIVE_TOL);
    Ok(FilterResult {
        objective: (&u_star - u_nom).norm_squared()
            + if allow_slack { rho * slack } else { 0.0 },
        u_star,
        v_star: Some(v_star),
        slack,
        active,
    })
}

/// Active-set refinement of an interior-point projection: re-solves the
/// exact KKT system on the rows the solver pinned and keeps the result
/// only if it is primal feasible with nonnegative multipliers.
fn polish_projection(
    u_nom: &DVector<f64>,
    c: &LinearSafetyConstraint,
    u_approx: &DVector<f64>,
) -> Option<DVector<f64>> {
    let feas_tol = 1e-9 * (1.0 + c.b.amax());
    let residuals = &c.b - &c.a * u_approx;
    let mut active: Vec<usize> = (0..c.num_rows())
        .filter(|&i| residuals[i] <= 1e-5 * (1.0 + c.b[i].abs()))
        .collect();

    loop {
        if active.is_empty() {
            return ((&c.b - &c.a * u_nom).min() >= -feas_tol).then(|| u_nom.clone());
        }
        let a_act = DMatrix::from_fn(active.len(), c.a.ncols(), |i, j| c.a[(active[i], j)]);
        let gram = &a_act * a_act.transpose();
        let rhs = &a_act * u_nom
            - DVector::from_fn(active.len(), |i, _| c.b[active[i]]);
        let lambda = gram.clone().cholesky()?.solve(&rhs);
        if let Some(worst) = (0..lambda.len()).min_by(|&i, &j| {
            lambda[i].partial_cmp(&lambda[j]).unwrap()
        }) {
            if lambda[worst] < -1e-12 {
                active.remove(worst);
                continue;
            }
        }
        let u = u_nom - a_act.transpose() * &lambda;
        return ((&c.b - &c.a * &u).min() >= -feas_tol).then_some(u);
    }
}

/// Symmetric PSD square root via eigendecomposition; negative
/// eigenvalues from rounding are clamped to zero.
fn psd_square_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Analytic scalar-input path: every row restricts u to a half-line.
fn filter_scalar_interval(
    u_nom: f64,
    c: &LinearSafetyConstraint,
) -> Result<FilterResult, Error> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..c.num_rows() {
        let a = c.a[(i, 0)];
        let b = c.b[i];
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < 0.0 {
            return Err(Error::Infeasible(format!(
                "row {i} is 0 <= {b} with no input dependence"
            )));
        }
    }
    if lo > hi {
        return Err(Error::Infeasible(format!(
            "empty input interval [{lo}, {hi}]"
        )));
    }
    let u = u_nom.clamp(lo, hi);
    let u_star = DVector::from_vec(vec![u]);
    let residuals = &c.b - &c.a * &u_star;
    let active = residuals.iter().any(|&r| r.abs() <= ACTIVE_TOL);
    Ok(FilterResult {
        objective: (u - u_nom).powi(2),
        u_star,
        v_star: None,
        slack: 0.0,
        active,
    })
}
