//! Robust tube-based model predictive control built on nominal predictions.
//!
//! The offline side synthesizes the disturbance-rejection gain `K` and the
//! terminal ingredients `(K_t, P, Ω)` from LMI problems, then tightens the
//! state and input constraints step by step with zonotopic reachable sets.
//! The online side assembles the finite-horizon problem over the nominal
//! prediction and solves it with an ADMM splitting method.
//!
//! Module map:
//!
//! * [`setcalc`] – zonotopes, H-polytopes and ellipsoids (generic scalar).
//! * [`tightening`] – the `H(i)` / `L(i)` schedule, tightened sets, tail norm, mRPI.
//! * [`lmisolve`] – small log-det barrier SDP solver.
//! * [`synthesis`] – LMI design of `K`, terminal design, DARE, assumption audit.
//! * [`qpsolver`] – ADMM QP solver with banded factorization and polishing.
//! * [`controller`] – optimal control problem assembly and receding horizon law.
//! * [`certify`] – candidate-solution and descent oracles.
//! * [`simloop`] – Monte-Carlo closed-loop simulation and CSV export.
//! * [`baselines`] – reconstructed comparison controllers and domain-of-attraction study.
//! * [`cli`] – JSON config / bundle files and the batch commands.

pub mod baselines;
pub mod certify;
pub mod cli;
pub mod controller;
pub mod error;
pub mod invset;
pub mod linalg;
pub mod lmisolve;
pub mod qpsolver;
pub mod scalar;
pub mod setcalc;
pub mod simloop;
pub mod synthesis;
pub mod tightening;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision zonotope.
pub type Zonotope = setcalc::Zonotope<f64>;
/// Double-precision H-polytope `{z : F z <= f}`.
pub type ConstraintPolytope = setcalc::ConstraintPolytope<f64>;
/// Double-precision ellipsoid `{x : x' P x <= r^2}`.
pub type Ellipsoid = setcalc::Ellipsoid<f64>;
/// Double-precision tightening schedule.
pub type TighteningSchedule = tightening::TighteningSchedule<f64>;

/// Single-precision variants of the set types, for memory-bound set algebra.
pub mod f32 {
    pub type Zonotope = crate::setcalc::Zonotope<f32>;
    pub type ConstraintPolytope = crate::setcalc::ConstraintPolytope<f32>;
    pub type Ellipsoid = crate::setcalc::Ellipsoid<f32>;
}

pub use nalgebra::{DMatrix, DVector};
