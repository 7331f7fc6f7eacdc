//! Two-agent feedback Stackelberg games with nonlinear dynamics and
//! nonquadratic costs, and leadership inference on top of them.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: discrete-time joint models (double integrator, unicycle),
//!   rollouts and Jacobians.
//! - [`costs`]: stage costs, their second-order expansions and the `νI`
//!   convexification used by the iterative solver.
//! - [`lq_stackelberg`]: exact backward recursion for finite-horizon LQ
//!   feedback Stackelberg games, plus an equilibrium perturbation check.
//! - [`silq`]: the iterative LQ game solver for general games.
//! - [`filter`]: the leadership particle filter whose measurement model
//!   plays a short-horizon Stackelberg game from every particle.
//! - [`scenarios`]: shepherd-and-sheep and driving presets with their
//!   ground-truth generators.
//! - [`experiment`]: configuration, Monte Carlo execution and the on-disk
//!   trace/summary formats used by the `slf` binary.

pub mod costs;
pub mod dynamics;
pub mod experiment;
pub mod filter;
pub mod lq_stackelberg;
pub mod scenarios;
pub mod silq;
mod types;

pub use types::{seed_for, Agent, ControlSeq, Controls, Trajectory};

pub use costs::{QuadraticApproximation, StageCost};
pub use dynamics::{Dynamics, JointModel, LinearizedDynamics};
pub use filter::{FilterConfig, LeadershipBelief, LeadershipFilter};
pub use lq_stackelberg::{AffineStrategy, LqGame};
pub use silq::{GameDefinition, SolveResult, SolverConfig};
