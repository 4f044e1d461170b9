//! Linear-quadratic-Gaussian asset-defense differential games with costly
//! observations.
//!
//! An attacker steers toward a moving asset while a defender tries to
//! intercept the attacker. Neither player sees the other's state unless it
//! pays a fixed price to observe it. The crate covers the full pipeline:
//!
//! - [`game`]: game data, the aggregate `3n`-dimensional system and the
//!   truncated `2n` blocks that the feedback gains live on.
//! - [`riccati`]: backward matrix Riccati integration (RK4), the asset
//!   co-state, the closed-form solution for the simple-motion case study,
//!   and the control-aware weights `phi_a`, `phi_d`.
//! - [`estimation`]: estimation-error covariances as a function of time
//!   since the last observation, and the reset-on-observation estimators.
//! - [`schedule`]: observation-cost functionals, the equal-area necessary
//!   conditions, bisection search for optimal instants, observation-count
//!   selection, and periodic / brute-force baselines.
//! - [`solution`]: one solved game bundling the above, and the analytic cost
//!   decomposition.
//! - [`simulator`]: Euler–Maruyama Monte Carlo rollouts under the Nash
//!   feedback.

pub mod error;
pub mod estimation;
pub mod game;
pub mod linalg;
pub mod riccati;
pub mod schedule;
pub mod simulator;
pub mod solution;

pub use nalgebra;

pub use error::{Error, Result};
pub use estimation::{CovariancePath, EstimatorState};
pub use game::{AggregateSystem, AssetTrajectory, GameParameters, TruncatedBlocks};
pub use riccati::{CaseStudyRiccati, RiccatiPath, TimeGrid};
pub use schedule::{ObservationSchedule, Player, ScheduleCost, ScheduleProblem};
pub use simulator::{MonteCarloSummary, SimulationConfig, SimulationModel, SimulationTrace};
pub use solution::{AnalyticCost, GameSolution};
