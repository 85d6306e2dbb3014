//! Risk-aware safety filtering for discrete-time control-affine systems.
//!
//! The toolkit computes worst-case Conditional Value-at-Risk (CVaR) over
//! moment-based ambiguity sets, converts control-barrier-function safety
//! conditions into explicit convex constraints for half-space, polytopic,
//! and ellipsoidal safe sets, and minimally modifies a nominal controller
//! to enforce them. A seeded closed-loop simulator drives the inverted
//! pendulum benchmark.

pub mod cbf_constraints;
pub mod cli;
pub mod config;
pub mod conic;
pub mod error;
pub mod moments;
pub mod plant;
pub mod plot;
pub mod safe_sets;
pub mod safety_filter;
pub mod sim;
pub mod wc_cvar;

pub use error::Error;
