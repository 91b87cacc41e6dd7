//! Simulation library for moving-target defense of LQG control loops.
//!
//! The defender runs a linear plant under LQG control and augments it with
//! secret, time-varying extraneous dynamics sampled fresh at every step from
//! a distribution only the defender can reproduce (a seeded PRNG). A
//! time-varying Kalman filter over the augmented system feeds a chi-squared
//! residue detector. The attacker is a man-in-the-middle on every sensor and
//! actuator channel who knows the base model and the matrix distribution but
//! not the realized matrices, and who tries to stay stealthy by Bayesian
//! inference over the hidden state (particle filtering). Posterior
//! Cramer-Rao recursions bound how well any such attacker can do.
//!
//! Modules follow the moving parts:
//!
//! - [`plant`]: the base linear plant, model validation, Gaussian noise.
//! - [`lqg`]: steady-state Kalman filter, LQR gains, quadratic cost.
//! - [`moving_target`]: the sampled augmentation, the time-varying filter,
//!   and the chi-squared detector.
//! - [`attacker`]: channel tampering, the trivial zero-dynamics attack, and
//!   the two particle-filter attack strategies.
//! - [`crlb`]: Van Trees and conditional posterior Cramer-Rao bounds, and
//!   the detection bound they imply.
//! - [`harness`]: scenario configuration, seeded closed-loop trials, Monte
//!   Carlo statistics, CSV/JSON export.

pub mod attacker;
pub mod crlb;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lqg;
pub mod moving_target;
pub mod plant;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
