//! Seeded closed-loop simulation of plant + safety filter under
//! disturbance models, with safety statistics and Monte-Carlo batches.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::cbf_constraints::{
    ellipsoid_constraint_with_mode, halfspace_constraint_with_mode, polytope_constraint_with_mode,
    MarginMode, RiskCbfConfig,
};
use crate::error::Error;
use crate::moments::MomentSet;
use crate::plant::ControlAffinePlant;
use crate::safe_sets::SafeSet;
use crate::safety_filter::{filter_ellipsoid, filter_halfspace, filter_polytope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceKind {
    Zero,
    Gaussian,
}

/// Disturbance model: zero or Gaussian with the given moments, sampled
/// from a seeded counter-independent stream.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    pub moments: MomentSet,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn sampler(&self) -> Result<DisturbanceSampler, Error> {
        let factor = match self.kind {
            DisturbanceKind::Zero => None,
            DisturbanceKind::Gaussian => Some(
                self.moments
                    .covariance()
                    .clone()
                    .cholesky()
                    .ok_or_else(|| {
                        Error::Precondition("covariance has no Cholesky factor".into())
                    })?
                    .l(),
            ),
        };
        Ok(DisturbanceSampler {
            rng: ChaCha12Rng::seed_from_u64(self.seed),
            mean: self.moments.mean().clone(),
            factor,
        })
    }
}

/// Stream of disturbance draws `w = μ + L·z` with z standard normal.
pub struct DisturbanceSampler {
    rng: ChaCha12Rng,
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
}

impl DisturbanceSampler {
    pub fn sample(&mut self) -> DVector<f64> {
        match &self.factor {
            None => DVector::zeros(self.mean.len()),
            Some(l) => {
                let z = DVector::from_fn(self.mean.len(), |_, _| {
                    self.rng.sample::<f64, _>(StandardNormal)
                });
                &self.mean + l * z
            }
        }
    }
}

/// Which controller closes the loop. `Standard` is the proposed
/// controller with every worst-case CVaR margin replaced by zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerSpec {
    NominalOnly,
    Proposed,
    Standard,
}

/// Slack-relaxation settings for the filters.
#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    pub rho: f64,
    pub allow_slack: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            rho: 500.0,
            allow_slack: false,
        }
    }
}

/// Time-indexed record of one closed-loop rollout. States are stored
/// exactly as simulated; replaying inputs and disturbances through the
/// plant reproduces them bit for bit.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub nominal_inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub barrier_values: Vec<DVector<f64>>,
    pub slacks: Vec<f64>,
    pub filter_active: Vec<bool>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Aggregate safety statistics of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct SafetyStats {
    /// Time steps with any barrier component negative.
    pub violation_steps: usize,
    pub min_barrier: f64,
    pub terminal_state: Vec<f64>,
    pub mean_input_deviation: f64,
}

/// Everything needed to roll the closed loop, minus the seed.
pub struct RunSpec<'a> {
    pub plant: &'a ControlAffinePlant,
    pub nominal: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    pub controller: ControllerSpec,
    pub set: &'a SafeSet,
    pub cfg: &'a RiskCbfConfig,
    pub disturbance_kind: DisturbanceKind,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub filter: FilterOptions,
}

/// Rolls the closed loop for `steps` steps from `x0`, generating and
/// filtering the safety constraint at every state.
pub fn run_closed_loop(
    spec: &RunSpec,
    disturbance: &DisturbanceModel,
) -> Result<Trajectory, Error> {
    if spec.steps == 0 {
        return Err(Error::Precondition("steps must be >= 1".into()));
    }
    if spec.x0.len() != spec.plant.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "run_closed_loop x0",
            expected: spec.plant.state_dim(),
            actual: spec.x0.len(),
        });
    }
    let margin_mode = match spec.controller {
        ControllerSpec::Standard => MarginMode::Zero,
        _ => MarginMode::WorstCaseCvar,
    };
    let mut sampler = disturbance.sampler()?;

    let mut traj = Trajectory {
        states: Vec::with_capacity(spec.steps + 1),
        inputs: Vec::with_capacity(spec.steps),
        nominal_inputs: Vec::with_capacity(spec.steps),
        disturbances: Vec::with_capacity(spec.steps),
        barrier_values: Vec::with_capacity(spec.steps + 1),
        slacks: Vec::with_capacity(spec.steps),
        filter_active: Vec::with_capacity(spec.steps),
    };
    let mut x = spec.x0.clone();
    traj.barrier_values.push(spec.set.barrier_value(&x)?);
    traj.states.push(x.clone());

    for step in 0..spec.steps {
        let u_nom = (spec.nominal)(&x);
        let (u, slack, active) = match spec.controller {
            ControllerSpec::NominalOnly => (u_nom.clone(), 0.0, false),
            ControllerSpec::Proposed | ControllerSpec::Standard => {
                let result = match spec.set {
                    SafeSet::HalfSpace(hs) => {
                        let c = halfspace_constraint_with_mode(
                            hs, spec.plant, &x, spec.cfg, margin_mode,
                        )?;
                        filter_halfspace(&u_nom, &c)
                    }
                    SafeSet::Polytope(p) => {
                        let c = polytope_constraint_with_mode(
                            p, spec.plant, &x, spec.cfg, margin_mode,
                        )?;
                        filter_polytope(&u_nom, &c, spec.filter.rho, spec.filter.allow_slack)
                    }
                    SafeSet::Ellipsoid(e) => {
                        let c = ellipsoid_constraint_with_mode(
                            e, spec.plant, &x, spec.cfg, margin_mode,
                        )?;
                        filter_ellipsoid(&u_nom, &c, spec.filter.rho, spec.filter.allow_slack)
                    }
                    SafeSet::Smooth(_) => Err(Error::Precondition(
                        "no controller synthesis for general smooth safe sets".into(),
                    )),
                };
                let r = result.map_err(|e| Error::SimulationAbort {
                    step,
                    reason: e.to_string(),
                })?;
                (r.u_star, r.slack, r.active)
            }
        };

        let w = sampler.sample();
        x = spec.plant.step(&x, &u, &w);

        traj.barrier_values.push(spec.set.barrier_value(&x)?);
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.nominal_inputs.push(u_nom);
        traj.disturbances.push(w);
        traj.slacks.push(slack);
        traj.filter_active.push(active);
    }
    Ok(traj)
}

/// Statistics over a recorded trajectory. Violations are counted per
/// time step (including t = 0) whenever any barrier component is
/// negative.
pub fn safety_stats(traj: &Trajectory, _set: &SafeSet) -> SafetyStats {
    let mut violation_steps = 0;
    let mut min_barrier = f64::INFINITY;
    for h in &traj.barrier_values {
        let h_min = h.min();
        if h_min < 0.0 {
            violation_steps += 1;
        }
        min_barrier = min_barrier.min(h_min);
    }
    let mean_input_deviation = if traj.inputs.is_empty() {
        0.0
    } else {
        traj.inputs
            .iter()
            .zip(&traj.nominal_inputs)
            .map(|(u, un)| (u - un).norm())
            .sum::<f64>()
            / traj.inputs.len() as f64
    };
    SafetyStats {
        violation_steps,
        min_barrier,
        terminal_state: traj.states.last().unwrap().iter().cloned().collect(),
        mean_input_deviation,
    }
}

/// splitmix64-style per-run seed derivation from a base seed.
pub fn derive_seed(base_seed: u64, run_index: u64) -> u64 {
    let mut z = base_seed.wrapping_add(run_index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seeded runs; results are ordered by run index.
pub fn monte_carlo(
    spec: &RunSpec,
    n_runs: usize,
    base_seed: u64,
) -> Result<Vec<SafetyStats>, Error> {
    Ok(monte_carlo_trajectories(spec, n_runs, base_seed)?
        .iter()
        .map(|t| safety_stats(t, spec.set))
        .collect())
}

/// Monte-Carlo batch keeping the full trajectories (used by the CLI to
/// write per-run CSVs).
pub fn monte_carlo_trajectories(
    spec: &RunSpec,
    n_runs: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>, Error> {
    if n_runs == 0 {
        return Err(Error::Precondition("n_runs must be >= 1".into()));
    }
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let model = DisturbanceModel {
                kind: spec.disturbance_kind,
                moments: spec.cfg.disturbance.clone(),
                seed: derive_seed(base_seed, i as u64),
            };
            run_closed_loop(spec, &model)
        })
        .collect()
}
