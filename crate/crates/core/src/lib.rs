//! Guided reverse-diffusion sampling with a weighted h-transform.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedules`]: noise schedules `(alpha_t, sigma_t)`, forward drift and
//!   squared diffusion, and guidance weight schedules.
//! - [`oracle`]: Gaussian-mixture data distributions with exact marginal
//!   scores, exact h-functions, degradation operators and conjugate posteriors.
//! - [`scorenet`]: a small epsilon-prediction MLP trained by denoising score
//!   matching, plus the [`ScoreModel`] abstraction shared by oracle and network.
//! - [`guidance`]: the weighted guided drift in score, velocity and epsilon
//!   form, the tractable h approximation and its error functional.
//! - [`solvers`]: reverse-time Euler (probability-flow ODE) and
//!   Euler-Maruyama (reverse SDE) integrators.

pub mod error;
pub mod guidance;
pub mod oracle;
pub mod rng;
pub mod schedules;
pub mod scorenet;
pub mod solvers;

pub use error::{Error, Result};
pub use guidance::{GuidanceSpec, GuidedDrift, Parameterization};
pub use oracle::{DegradationOperator, GaussianMixture, OracleScore, PairedSample};
pub use schedules::{Coefficients, NoiseSchedule, ScheduleKind, WeightSchedule};
pub use scorenet::{MlpNet, NetScore, ScoreModel, TrainConfig};
pub use solvers::{SamplerConfig, Solver, Trajectory};

/// State vectors are dynamically sized column vectors.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrices (covariances, operators).
pub type Matrix = nalgebra::DMatrix<f64>;
