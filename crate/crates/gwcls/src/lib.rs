//! Simulation and statistical-inference toolkit for 2-type doubly symmetric
//! critical Galton-Watson processes with immigration.
//!
//! The crate covers the full loop from model definition to limit-law
//! verification:
//!
//! - [`model`]: finite-support offspring/immigration laws, exact moment
//!   objects, and the regime classification the limit theorems branch on;
//! - [`simulate`]: reproducible trajectory generation and the derived
//!   total/difference/residual sequences;
//! - [`cls`]: conditional least squares estimators of the criticality
//!   parameter and the offspring means, with existence-set handling;
//! - [`limits`]: Euler-Maruyama sampling of the limiting square-root
//!   diffusion and of every limit law the scaled estimator errors follow;
//! - [`moments`]: spectral closed forms, exact conditional-moment oracles,
//!   and Monte Carlo moment-growth exponents;
//! - [`harness`]: experiment orchestration pairing finite-sample scaled
//!   errors with limit samples, Kolmogorov-Smirnov distances, and
//!   deterministic report output.

pub mod cls;
pub mod config;
pub mod harness;
pub mod limits;
pub mod model;
pub mod moments;
pub mod numeric;
pub mod simulate;

pub use cls::{estimate_all, ClsResult};
pub use model::{FiniteLaw2D, ModelChoice, ModelSpec, Regime};
pub use simulate::{simulate, RngStream, Trajectory};
