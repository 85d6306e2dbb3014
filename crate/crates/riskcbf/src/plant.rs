//! Discrete-time control-affine plants `x⁺ = f(x) + g(x)u + w` supplied
//! as pure evaluation maps, plus the inverted-pendulum benchmark.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

type DriftFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type InputMapFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

pub struct ControlAffinePlant {
    state_dim: usize,
    input_dim: usize,
    drift: DriftFn,
    input_map: InputMapFn,
}

impl ControlAffinePlant {
    pub fn new(state_dim: usize, input_dim: usize, drift: DriftFn, input_map: InputMapFn) -> Self {
        Self {
            state_dim,
            input_dim,
            drift,
            input_map,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// f(x)
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.state_dim);
        (self.drift)(x)
    }

    /// g(x)
    pub fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        debug_assert_eq!(x.len(), self.state_dim);
        (self.input_map)(x)
    }

    /// One deterministic step `f(x) + g(x)u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_map(x) * u + w
    }
}

impl std::fmt::Debug for ControlAffinePlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffinePlant")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

/// Inverted-pendulum parameters. Only the sampling time enters the
/// discrete model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub dt: f64,
}

impl PendulumParams {
    pub fn new(dt: f64) -> Result<Self, Error> {
        if dt <= 0.0 {
            return Err(Error::Precondition("time step must be positive".into()));
        }
        Ok(Self { dt })
    }
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { dt: 0.01 }
    }
}

/// Pendulum drift `[x + y·dt, y + sin(x)·dt]` for state `[x, y]`
/// (angle from upright, angular velocity).
pub fn pendulum_drift(params: PendulumParams, state: &DVector<f64>) -> DVector<f64> {
    let (x, y) = (state[0], state[1]);
    DVector::from_vec(vec![x + y * params.dt, y + x.sin() * params.dt])
}

/// Constant pendulum input map `[[0], [dt]]`.
pub fn pendulum_input_map(params: PendulumParams, _state: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &[0.0, params.dt])
}

/// Feedback-linearizing nominal controller `u = -x - sin(x) - y`.
pub fn nominal_pendulum_control(state: &DVector<f64>) -> f64 {
    let (x, y) = (state[0], state[1]);
    -x - x.sin() - y
}

/// The pendulum as a [`ControlAffinePlant`].
pub fn pendulum_plant(params: PendulumParams) -> ControlAffinePlant {
    ControlAffinePlant::new(
        2,
        1,
        Box::new(move |x| pendulum_drift(params, x)),
        Box::new(move |x| pendulum_input_map(params, x)),
    )
}
