//! Simulation engine for nonlinear collective-spin dynamics driven by weak
//! `Ĵz` measurements and outcome-conditioned rotations.
//!
//! * [`spin`]: Dicke-basis states, collective operators, rotations.
//! * [`feedback`]: Gaussian Kraus measurement, feedback, kicked-top Floquet
//!   map and the outcome-averaged map.
//! * [`gaussian`]: large-`J` Gaussian model on the co-moving tangent plane.
//! * [`classical`]: classical kicked top and Lyapunov estimation.
//! * [`atomlight`]: continuous record, stochastic master equation and
//!   optical-depth parameterization.
//! * [`analysis`]: metrics, engines, drivers, configuration and output.

pub mod analysis;
pub mod atomlight;
pub mod classical;
pub mod error;
pub mod feedback;
pub mod gaussian;
pub mod rng;
pub mod spin;

pub use error::{Error, Result};

pub type Complex64 = nalgebra::Complex<f64>;
