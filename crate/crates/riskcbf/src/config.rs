//! JSON experiment configuration: schema structs, validation, and
//! conversion into domain objects. Matrices are row-major nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cbf_constraints::RiskCbfConfig;
use crate::error::Error;
use crate::moments::MomentSet;
use crate::plant::{nominal_pendulum_control, pendulum_plant, ControlAffinePlant, PendulumParams};
use crate::safe_sets::{EllipsoidSet, HalfSpaceSet, PolytopeSet, SafeSet};
use crate::sim::{ControllerSpec, DisturbanceKind, FilterOptions};
use crate::wc_cvar::{CvarLevel, QuadraticLoss};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub safe_set: SafeSetSpec,
    pub risk: RiskSpec,
    pub filter: FilterSpec,
    pub disturbance: DisturbanceSpec,
    pub sim: SimSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub name: String,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<Vec<Vec<f64>>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub e_matrix: Option<Vec<Vec<f64>>>,
    pub r: ScalarOrVec,
}

/// `r` is a scalar for half-spaces and ellipsoids, a vector for
/// polytopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSpec {
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub rho: f64,
    pub allow_slack: bool,
    pub controller: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub kind: String,
    pub covariance: Vec<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub x0: Vec<f64>,
    pub steps: usize,
    pub n_runs: usize,
}

/// Standalone input for the `cvar` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvarConfig {
    pub loss: LossSpec,
    pub moments: MomentsSpec,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    pub q: Vec<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
}

/// Fully validated experiment, ready to simulate.
#[derive(Debug)]
pub struct Experiment {
    pub plant: ControlAffinePlant,
    pub set: SafeSet,
    pub cfg: RiskCbfConfig,
    pub controller: ControllerSpec,
    pub disturbance_kind: DisturbanceKind,
    pub filter: FilterOptions,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub n_runs: usize,
    pub seed: u64,
}

impl Experiment {
    pub fn nominal(&self) -> impl Fn(&DVector<f64>) -> DVector<f64> + Sync {
        |x: &DVector<f64>| DVector::from_vec(vec![nominal_pendulum_control(x)])
    }
}

pub fn load_experiment_config(path: &std::path::Path) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{e}")))
}

pub fn load_cvar_config(path: &std::path::Path) -> Result<CvarConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{e}")))
}

fn matrix_from_rows(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>, Error> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("{context} must be non-empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("{context} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn build_safe_set(spec: &SafeSetSpec) -> Result<SafeSet, Error> {
    match spec.family.as_str() {
        "half_space" => {
            let q = spec.q.as_ref().ok_or_else(|| {
                Error::InvalidConfig("safe_set.q is required for family half_space".into())
            })?;
            let r = match spec.r {
                ScalarOrVec::Scalar(r) => r,
                ScalarOrVec::Vec(_) => {
                    return Err(Error::InvalidConfig(
                        "safe_set.r must be a scalar for family half_space".into(),
                    ))
                }
            };
            Ok(SafeSet::HalfSpace(
                HalfSpaceSet::new(DVector::from_vec(q.clone()), r)
                    .map_err(|e| Error::InvalidConfig(format!("safe_set: {e}")))?,
            ))
        }
        "polytope" => {
            let q = spec.q_matrix.as_ref().ok_or_else(|| {
                Error::InvalidConfig("safe_set.Q is required for family polytope".into())
            })?;
            let r = match &spec.r {
                ScalarOrVec::Vec(r) => DVector::from_vec(r.clone()),
                ScalarOrVec::Scalar(r) => DVector::from_vec(vec![*r]),
            };
            Ok(SafeSet::Polytope(
                PolytopeSet::new(matrix_from_rows(q, "safe_set.Q")?, r)
                    .map_err(|e| Error::InvalidConfig(format!("safe_set: {e}")))?,
            ))
        }
        "ellipsoid" => {
            let e = spec.e_matrix.as_ref().ok_or_else(|| {
                Error::InvalidConfig("safe_set.E is required for family ellipsoid".into())
            })?;
            let r = match spec.r {
                ScalarOrVec::Scalar(r) => r,
                ScalarOrVec::Vec(_) => {
                    return Err(Error::InvalidConfig(
                        "safe_set.r must be a scalar for family ellipsoid".into(),
                    ))
                }
            };
            Ok(SafeSet::Ellipsoid(
                EllipsoidSet::new(matrix_from_rows(e, "safe_set.E")?, r)
                    .map_err(|e| Error::InvalidConfig(format!("safe_set: {e}")))?,
            ))
        }
        other => Err(Error::InvalidConfig(format!(
            "safe_set.family must be one of half_space, polytope, ellipsoid; got {other:?}"
        ))),
    }
}

/// Validates the parsed config and instantiates the experiment.
/// `seed_override` and `runs_override` come from the CLI flags.
pub fn build_experiment(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    runs_override: Option<usize>,
) -> Result<Experiment, Error> {
    if config.plant.name != "pendulum" {
        return Err(Error::InvalidConfig(format!(
            "plant.name: unknown plant {:?}",
            config.plant.name
        )));
    }
    let params = PendulumParams::new(config.plant.dt)
        .map_err(|e| Error::InvalidConfig(format!("plant.dt: {e}")))?;
    let plant = pendulum_plant(params);

    let set = build_safe_set(&config.safe_set)?;

    let level = CvarLevel::new(config.risk.epsilon)
        .map_err(|e| Error::InvalidConfig(format!("risk.epsilon: {e}")))?;
    let covariance = matrix_from_rows(&config.disturbance.covariance, "disturbance.covariance")?;
    let moments = MomentSet::zero_mean(covariance)
        .map_err(|e| Error::InvalidConfig(format!("disturbance.covariance: {e}")))?;
    let cfg = RiskCbfConfig::new(config.risk.alpha, level, moments)
        .map_err(|e| Error::InvalidConfig(format!("risk.alpha: {e}")))?;

    let controller = match config.filter.controller.as_str() {
        "nominal" => ControllerSpec::NominalOnly,
        "proposed" => ControllerSpec::Proposed,
        "standard" => ControllerSpec::Standard,
        other => {
            return Err(Error::InvalidConfig(format!(
                "filter.controller must be nominal, proposed, or standard; got {other:?}"
            )))
        }
    };
    if config.filter.rho <= 0.0 {
        return Err(Error::InvalidConfig("filter.rho must be positive".into()));
    }

    let disturbance_kind = match config.disturbance.kind.as_str() {
        "zero" => DisturbanceKind::Zero,
        "gaussian" => DisturbanceKind::Gaussian,
        other => {
            return Err(Error::InvalidConfig(format!(
                "disturbance.kind must be zero or gaussian; got {other:?}"
            )))
        }
    };

    if config.sim.steps == 0 {
        return Err(Error::InvalidConfig("sim.steps must be >= 1".into()));
    }
    let n_runs = runs_override.unwrap_or(config.sim.n_runs);
    if n_runs == 0 {
        return Err(Error::InvalidConfig("sim.n_runs must be >= 1".into()));
    }

    Ok(Experiment {
        plant,
        set,
        cfg,
        controller,
        disturbance_kind,
        filter: FilterOptions {
            rho: config.filter.rho,
            allow_slack: config.filter.allow_slack,
        },
        x0: DVector::from_vec(config.sim.x0.clone()),
        steps: config.sim.steps,
        n_runs,
        seed: seed_override.unwrap_or(config.disturbance.seed),
    })
}

/// Builds the (loss, moments, level) triple for the `cvar` subcommand.
pub fn build_cvar_inputs(
    config: &CvarConfig,
) -> Result<(QuadraticLoss, MomentSet, CvarLevel), Error> {
    let q = DVector::from_vec(config.loss.q.clone());
    let n = q.len();
    let p = match &config.loss.p {
        Some(rows) => matrix_from_rows(rows, "loss.P")?,
        None => DMatrix::zeros(n, n),
    };
    let loss = QuadraticLoss::new(p, q, config.loss.r)
        .map_err(|e| Error::InvalidConfig(format!("loss: {e}")))?;
    let covariance = matrix_from_rows(&config.moments.covariance, "moments.covariance")?;
    let mean = match &config.moments.mean {
        Some(m) => DVector::from_vec(m.clone()),
        None => DVector::zeros(covariance.nrows()),
    };
    let moments = MomentSet::new(mean, covariance)
        .map_err(|e| Error::InvalidConfig(format!("moments: {e}")))?;
    let level = CvarLevel::new(config.epsilon)
        .map_err(|e| Error::InvalidConfig(format!("epsilon: {e}")))?;
    Ok((loss, moments, level))
}
