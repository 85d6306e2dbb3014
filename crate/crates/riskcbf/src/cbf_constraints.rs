//! Conversion of the risk-aware CBF condition
//! `wcCVaR[-h(x⁺)] <= -α·h(x)` into explicit convex constraints on the
//! control input, per safe-set family.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::moments::MomentSet;
use crate::plant::ControlAffinePlant;
use crate::safe_sets::{EllipsoidSet, HalfSpaceSet, PolytopeSet, SmoothSet};
use crate::wc_cvar::{
    wc_cvar_elementwise, wc_cvar_linear, wc_cvar_quadratic, CvarLevel, QuadraticLoss,
};

/// Feasibility slack used in boolean constraint checks, tied to the
/// solver tolerance.
pub const CHECK_SLACK: f64 = 1e-9;

/// Barrier decay rate, CVaR level, and disturbance moments.
#[derive(Debug, Clone)]
pub struct RiskCbfConfig {
    pub alpha: f64,
    pub level: CvarLevel,
    pub disturbance: MomentSet,
}

impl RiskCbfConfig {
    pub fn new(alpha: f64, level: CvarLevel, disturbance: MomentSet) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Precondition(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            level,
            disturbance,
        })
    }
}

/// How the CVaR safety margin enters the constraint. `Zero` is the
/// standard (expectation-based) baseline that disregards uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginMode {
    WorstCaseCvar,
    Zero,
}

/// Linear rows `A·u <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSafetyConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearSafetyConstraint {
    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Largest row violation of `A·u <= b` (nonpositive when satisfied).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        (&self.a * u - &self.b).max()
    }

    pub fn is_satisfied(&self, u: &DVector<f64>) -> bool {
        self.max_violation(u) <= CHECK_SLACK
    }
}

/// Quadratic-plus-linear constraint blocks over the lifted variable
/// `ū = [u; v]` for the ellipsoidal safe set:
/// `ūᵀH̄ū + q̄ᵀū + r̄ <= 0` and `Āū <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSafetyConstraint {
    pub h_bar: DMatrix<f64>,
    pub q_bar: DVector<f64>,
    pub r_bar: f64,
    pub a_bar: DMatrix<f64>,
    pub input_dim: usize,
    pub state_dim: usize,
}

impl EllipsoidSafetyConstraint {
    /// Value of the quadratic block at `ū = [u; v]`.
    pub fn quadratic_value(&self, u_bar: &DVector<f64>) -> f64 {
        (u_bar.transpose() * &self.h_bar * u_bar)[(0, 0)] + self.q_bar.dot(u_bar) + self.r_bar
    }

    pub fn is_satisfied(&self, u_bar: &DVector<f64>) -> bool {
        self.quadratic_value(u_bar) <= CHECK_SLACK
            && (&self.a_bar * u_bar)
                .iter()
                .all(|&row| row <= CHECK_SLACK)
    }
}

/// Intermediate quantities of the general-set sufficient condition.
#[derive(Debug, Clone)]
pub struct GeneralCheckData {
    /// Element-wise worst-case CVaR of the disturbance.
    pub w_bar: DVector<f64>,
    /// `f(x) + g(x)u + w̄`.
    pub x_plus_bar: DVector<f64>,
    /// The remainder `-∇h(x̄⁺)ᵀz + (σ/2)zᵀz` rewritten as a quadratic
    /// loss in w.
    pub remainder_loss: QuadraticLoss,
}

/// Result of the general-set feasibility check at a given (x, u).
#[derive(Debug, Clone)]
pub struct GeneralFeasibility {
    pub data: GeneralCheckData,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Theorem-style constraint for a half-space safe set:
/// `-qᵀg(x)·u <= φ(x)` with
/// `φ(x) = qᵀ(f(x) - αx) + (1-α)r - wcCVaR[qᵀw]`.
pub fn halfspace_constraint(
    set: &HalfSpaceSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
) -> Result<LinearSafetyConstraint, Error> {
    halfspace_constraint_with_mode(set, plant, x, cfg, MarginMode::WorstCaseCvar)
}

pub fn halfspace_constraint_with_mode(
    set: &HalfSpaceSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
    mode: MarginMode,
) -> Result<LinearSafetyConstraint, Error> {
    let margin = match mode {
        MarginMode::WorstCaseCvar => wc_cvar_linear(&set.q, 0.0, &cfg.disturbance, cfg.level)?,
        MarginMode::Zero => 0.0,
    };
    let f = plant.drift(x);
    let g = plant.input_map(x);
    let a = DMatrix::from_rows(&[-(set.q.transpose() * g)]);
    let b = set.q.dot(&(f - cfg.alpha * x)) + (1.0 - cfg.alpha) * set.r - margin;
    Ok(LinearSafetyConstraint {
        a,
        b: DVector::from_vec(vec![b]),
    })
}

/// Stacked per-row version for polytopic safe sets, with the CVaR
/// margin applied element-wise.
pub fn polytope_constraint(
    set: &PolytopeSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
) -> Result<LinearSafetyConstraint, Error> {
    polytope_constraint_with_mode(set, plant, x, cfg, MarginMode::WorstCaseCvar)
}

pub fn polytope_constraint_with_mode(
    set: &PolytopeSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
    mode: MarginMode,
) -> Result<LinearSafetyConstraint, Error> {
    let m = set.num_rows();
    let f = plant.drift(x);
    let g = plant.input_map(x);
    let a = -(set.q.transpose() * g);
    let mut b = set.q.transpose() * (f - cfg.alpha * x) + (1.0 - cfg.alpha) * &set.r;
    if mode == MarginMode::WorstCaseCvar {
        for i in 0..m {
            let qi = DVector::from(set.q.column(i).clone_owned());
            b[i] -= wc_cvar_linear(&qi, 0.0, &cfg.disturbance, cfg.level)?;
        }
    }
    Ok(LinearSafetyConstraint { a, b })
}

/// Sufficient-condition blocks for an ellipsoidal safe set. The scalar
/// term `r̄` needs one quadratic-loss SDP solve per state.
pub fn ellipsoid_constraint(
    set: &EllipsoidSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
) -> Result<EllipsoidSafetyConstraint, Error> {
    ellipsoid_constraint_with_mode(set, plant, x, cfg, MarginMode::WorstCaseCvar)
}

pub fn ellipsoid_constraint_with_mode(
    set: &EllipsoidSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    cfg: &RiskCbfConfig,
    mode: MarginMode,
) -> Result<EllipsoidSafetyConstraint, Error> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let f = plant.drift(x);
    let g = plant.input_map(x);
    let e = &set.e;

    let gte = g.transpose() * e;
    let mut h_bar = DMatrix::zeros(m + n, m + n);
    h_bar.view_mut((0, 0), (m, m)).copy_from(&(&gte * &g));

    let w_bar = match mode {
        MarginMode::WorstCaseCvar => wc_cvar_elementwise(&cfg.disturbance, cfg.level),
        MarginMode::Zero => DVector::zeros(n),
    };
    let mut q_bar = DVector::zeros(m + n);
    q_bar.rows_mut(0, m).copy_from(&(2.0 * (&gte * &f)));
    q_bar.rows_mut(m, n).copy_from(&(2.0 * &w_bar));

    let cvar_term = match mode {
        MarginMode::WorstCaseCvar => {
            let loss = QuadraticLoss::new(e.clone(), 2.0 * (e * &f), 0.0)?;
            wc_cvar_quadratic(&loss, &cfg.disturbance, cfg.level)?.value
        }
        MarginMode::Zero => 0.0,
    };
    let xex = (x.transpose() * e * x)[(0, 0)];
    let r_bar = cvar_term + (f.transpose() * e * &f)[(0, 0)] - set.r - cfg.alpha * (xex - set.r);

    let eg = e * &g;
    let mut a_bar = DMatrix::zeros(2 * n, m + n);
    a_bar.view_mut((0, 0), (n, m)).copy_from(&eg);
    a_bar.view_mut((n, 0), (n, m)).copy_from(&(-&eg));
    let neg_id = -DMatrix::<f64>::identity(n, n);
    a_bar.view_mut((0, m), (n, n)).copy_from(&neg_id);
    a_bar.view_mut((n, m), (n, n)).copy_from(&neg_id);

    Ok(EllipsoidSafetyConstraint {
        h_bar,
        q_bar,
        r_bar,
        a_bar,
        input_dim: m,
        state_dim: n,
    })
}

/// Checks the general-set sufficient condition
/// `-h(x̄⁺) + wcCVaR[-∇h(x̄⁺)ᵀz + (σ/2)zᵀz] <= -α·h(x)` for a given
/// input u, where `z = w - w̄`.
pub fn general_feasibility_check(
    set: &SmoothSet,
    plant: &ControlAffinePlant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &RiskCbfConfig,
) -> Result<GeneralFeasibility, Error> {
    let n = plant.state_dim();
    let sigma = set.curvature_bound;

    let w_bar = wc_cvar_elementwise(&cfg.disturbance, cfg.level);
    let x_plus_bar = plant.drift(x) + plant.input_map(x) * u + &w_bar;
    let grad = (set.gradient)(&x_plus_bar);

    // -grad'(w - w̄) + (σ/2)(w - w̄)'(w - w̄) expanded in w
    let p = DMatrix::identity(n, n) * (sigma / 2.0);
    let q_loss = -(&grad + sigma * &w_bar);
    let r_loss = (sigma / 2.0) * w_bar.norm_squared() + grad.dot(&w_bar);
    let remainder_loss = QuadraticLoss::new(p, q_loss, r_loss)?;

    let cvar = wc_cvar_quadratic(&remainder_loss, &cfg.disturbance, cfg.level)?.value;
    let lhs = -(set.h)(&x_plus_bar) + cvar;
    let rhs = -cfg.alpha * (set.h)(x);
    Ok(GeneralFeasibility {
        data: GeneralCheckData {
            w_bar,
            x_plus_bar,
            remainder_loss,
        },
        lhs,
        rhs,
        satisfied: lhs <= rhs + CHECK_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{pendulum_plant, PendulumParams};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn pendulum_cfg(epsilon: f64) -> RiskCbfConfig {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 9e-6]));
        RiskCbfConfig::new(
            0.8,
            CvarLevel::new(epsilon).unwrap(),
            MomentSet::zero_mean(cov).unwrap(),
        )
        .unwrap()
    }

    fn halfspace() -> HalfSpaceSet {
        HalfSpaceSet::new(DVector::from_vec(vec![1.125, 1.0]), 0.075).unwrap()
    }

    fn polytope() -> PolytopeSet {
        PolytopeSet::new(
            DMatrix::from_row_slice(2, 2, &[1.125, 0.5, 1.0, 1.0]),
            DVector::from_vec(vec![0.075, 0.1]),
        )
        .unwrap()
    }

    fn ellipsoid() -> EllipsoidSet {
        EllipsoidSet::new(DMatrix::from_row_slice(2, 2, &[6.0, -5.0, -5.0, 6.0]), 1.0).unwrap()
    }

    #[test]
    fn halfspace_constraint_at_reference_state() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let c = halfspace_constraint(&halfspace(), &plant, &x, &pendulum_cfg(0.3)).unwrap();
        assert_relative_eq!(c.a[(0, 0)], -0.01, epsilon = 1e-15);
        assert_relative_eq!(c.b[0], 0.12281100907900049, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_margin_collapses_phi_for_identity_drift() {
        // f(x) = x, alpha = 1: the r term cancels and b = -margin
        let plant = crate::plant::ControlAffinePlant::new(
            1,
            1,
            Box::new(|x: &DVector<f64>| x.clone()),
            Box::new(|_| DMatrix::from_element(1, 1, 1.0)),
        );
        let cov = DMatrix::from_element(1, 1, 1e-18);
        let cfg = RiskCbfConfig::new(
            1.0,
            CvarLevel::new(0.3).unwrap(),
            MomentSet::zero_mean(cov).unwrap(),
        )
        .unwrap();
        let set = HalfSpaceSet::new(DVector::from_vec(vec![1.0]), 0.3).unwrap();
        let c = halfspace_constraint(&set, &plant, &DVector::from_vec(vec![0.5]), &cfg).unwrap();
        let margin = wc_cvar_linear(&set.q, 0.0, &cfg.disturbance, cfg.level).unwrap();
        assert!(c.b[0] < 0.0);
        assert_relative_eq!(c.b[0], -margin, epsilon = 1e-18);
    }

    #[test]
    fn margin_shrinks_as_epsilon_grows() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let b03 = halfspace_constraint(&halfspace(), &plant, &x, &pendulum_cfg(0.3))
            .unwrap()
            .b[0];
        let b999 = halfspace_constraint(&halfspace(), &plant, &x, &pendulum_cfg(0.999))
            .unwrap()
            .b[0];
        assert_relative_eq!(b999 - b03, 4.792822869230381e-3, epsilon = 1e-12);
    }

    #[test]
    fn b_entries_nondecreasing_in_epsilon() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let mut prev = f64::NEG_INFINITY;
        for eps in [0.1, 0.3, 0.5, 0.9] {
            let c = polytope_constraint(&polytope(), &plant, &x, &pendulum_cfg(eps)).unwrap();
            let min_b = c.b.min();
            assert!(min_b >= prev, "b not monotone at eps {eps}");
            prev = min_b;
        }
    }

    #[test]
    fn single_row_polytope_reduces_to_halfspace() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let cfg = pendulum_cfg(0.3);
        let hs = halfspace_constraint(&halfspace(), &plant, &x, &cfg).unwrap();
        let single = PolytopeSet::new(
            DMatrix::from_column_slice(2, 1, &[1.125, 1.0]),
            DVector::from_vec(vec![0.075]),
        )
        .unwrap();
        let poly = polytope_constraint(&single, &plant, &x, &cfg).unwrap();
        assert_relative_eq!(poly.a[(0, 0)], hs.a[(0, 0)], epsilon = 1e-15);
        assert_relative_eq!(poly.b[0], hs.b[0], epsilon = 1e-15);
    }

    #[test]
    fn polytope_rows_at_reference_state() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let c = polytope_constraint(&polytope(), &plant, &x, &pendulum_cfg(0.3)).unwrap();
        assert_relative_eq!(c.a[(0, 0)], -0.01, epsilon = 1e-15);
        assert_relative_eq!(c.a[(1, 0)], -0.01, epsilon = 1e-15);
        assert_relative_eq!(c.b[0], 0.12281100907900049, epsilon = 1e-12);
        assert_relative_eq!(c.b[1], 0.08930941544502466, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_polytope_column_duplicates_rows() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let dup = PolytopeSet::new(
            DMatrix::from_row_slice(2, 2, &[1.125, 1.125, 1.0, 1.0]),
            DVector::from_vec(vec![0.075, 0.075]),
        )
        .unwrap();
        let c = polytope_constraint(&dup, &plant, &x, &pendulum_cfg(0.3)).unwrap();
        assert_eq!(c.a[(0, 0)], c.a[(1, 0)]);
        assert_eq!(c.b[0], c.b[1]);
    }

    #[test]
    fn ellipsoid_blocks_at_reference_state() {
        let plant = pendulum_plant(PendulumParams::default());
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let c = ellipsoid_constraint(&ellipsoid(), &plant, &x, &pendulum_cfg(0.3)).unwrap();
        assert_relative_eq!(c.h_bar[(0, 0)], 6e-4, epsilon = 1e-12);
        // remaining H entries are zero
        assert_eq!(c.h_bar[(1, 1)], 0.0);
        assert_eq!(c.h_bar[(2, 2)], 0.0);
        // A built from Eg = [-0.05, 0.06]
        assert_relative_eq!(c.a_bar[(0, 0)], -0.05, epsilon = 1e-12);
        assert_relative_eq!(c.a_bar[(1, 0)], 0.06, epsilon = 1e-12);
        assert_relative_eq!(c.a_bar[(2, 0)], 0.05, epsilon = 1e-12);
        assert_relative_eq!(c.a_bar[(3, 0)], -0.06, epsilon = 1e-12);
        assert_eq!(c.a_bar[(0, 1)], -1.0);
        assert_eq!(c.a_bar[(2, 1)], -1.0);
        // q_bar lower block is twice the element-wise CVaR
        let w_bar = wc_cvar_elementwise(&pendulum_cfg(0.3).disturbance, CvarLevel::new(0.3).unwrap());
        assert_relative_eq!(c.q_bar[1], 2.0 * w_bar[0], epsilon = 1e-12);
        assert_relative_eq!(c.q_bar[2], 2.0 * w_bar[1], epsilon = 1e-12);
    }

    #[test]
    fn ellipsoid_r_bar_at_origin() {
        // f(0) = 0 for the pendulum, so r̄ = wcCVaR[wᵀEw] - r + αr
        let plant = pendulum_plant(PendulumParams::default());
        let cfg = pendulum_cfg(0.3);
        let set = ellipsoid();
        let c = ellipsoid_constraint(&set, &plant, &DVector::zeros(2), &cfg).unwrap();
        let loss = QuadraticLoss::new(set.e.clone(), DVector::zeros(2), 0.0).unwrap();
        let cvar = wc_cvar_quadratic(&loss, &cfg.disturbance, cfg.level)
            .unwrap()
            .value;
        assert_relative_eq!(c.r_bar, cvar - 1.0 + 0.8, epsilon = 1e-9);
    }

    #[test]
    fn ellipsoid_cvar_term_scales_with_covariance() {
        // scaling w -> c·w scales wcCVaR[wᵀEw] by c², checked at c = 2
        let cfg = pendulum_cfg(0.3);
        let set = ellipsoid();
        let loss = QuadraticLoss::new(set.e.clone(), DVector::zeros(2), 0.0).unwrap();
        let base = wc_cvar_quadratic(&loss, &cfg.disturbance, cfg.level)
            .unwrap()
            .value;
        let scaled_ms = MomentSet::zero_mean(cfg.disturbance.covariance() * 4.0).unwrap();
        let scaled = wc_cvar_quadratic(&loss, &scaled_ms, cfg.level).unwrap().value;
        assert_relative_eq!(scaled, 4.0 * base, max_relative = 1e-5);
    }

    #[test]
    fn general_check_matches_halfspace_for_affine_barrier() {
        let plant = pendulum_plant(PendulumParams::default());
        let cfg = pendulum_cfg(0.3);
        let hs = halfspace();
        let q = hs.q.clone();
        let r = hs.r;
        let smooth = SmoothSet::new(
            Box::new(move |x: &DVector<f64>| q.dot(x) + r),
            {
                let q = hs.q.clone();
                Box::new(move |_: &DVector<f64>| q.clone())
            },
            0.0,
        )
        .unwrap();

        let x = DVector::from_vec(vec![0.3, 0.2]);
        let c = halfspace_constraint(&hs, &plant, &x, &cfg).unwrap();
        for u_val in [-20.0, -12.4, -12.0, -0.8, 0.0, 5.0, 20.0] {
            let u = DVector::from_vec(vec![u_val]);
            let check = general_feasibility_check(&smooth, &plant, &x, &u, &cfg).unwrap();
            assert_eq!(
                check.satisfied,
                c.is_satisfied(&u),
                "disagreement at u = {u_val}"
            );
        }
    }

    #[test]
    fn general_check_deep_interior_is_satisfied() {
        let plant = pendulum_plant(PendulumParams::default());
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-12, 1e-12]));
        let cfg = RiskCbfConfig::new(
            0.8,
            CvarLevel::new(0.3).unwrap(),
            MomentSet::zero_mean(cov).unwrap(),
        )
        .unwrap();
        let smooth = SmoothSet::new(
            Box::new(|x: &DVector<f64>| 1.0 - x.norm_squared()),
            Box::new(|x: &DVector<f64>| -2.0 * x),
            2.0,
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.05, 0.05]);
        // nominal-like input keeps the pushed state near the origin
        let u = DVector::from_vec(vec![crate::plant::nominal_pendulum_control(&x)]);
        let check = general_feasibility_check(&smooth, &plant, &x, &u, &cfg).unwrap();
        assert!(check.satisfied);
        assert!(check.lhs < check.rhs);
    }

    #[test]
    fn config_rejects_alpha_outside_unit_interval() {
        let ms = MomentSet::zero_mean(DMatrix::identity(1, 1)).unwrap();
        assert!(RiskCbfConfig::new(-0.1, CvarLevel::new(0.3).unwrap(), ms.clone()).is_err());
        assert!(RiskCbfConfig::new(1.1, CvarLevel::new(0.3).unwrap(), ms).is_err());
    }
}
