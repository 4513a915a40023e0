//! Stochastic gradient descent with Polyak's learning rate.
//!
//! The crate provides:
//!
//! - [`objective`]: strongly convex test problems (centroid, diagonal
//!   quadratic, L2-regularized logistic regression) with exact constants,
//!   full-gradient and seeded mini-batch gradient oracles, and exact or
//!   estimated second moments of the stochastic gradient.
//! - [`stepsize`]: every learning-rate policy under study — fixed, epoch
//!   decay, the optimal O(1/k) schedule, deterministic Polyak, stochastic
//!   Polyak (SPLR), and the f*-estimating Polyak variant — with optional
//!   min/max capping.
//! - [`optimizer`]: the iteration `x_{k+1} = x_k - h_k g_k` with full
//!   trajectory recording and CSV export.
//! - [`theory`]: rate constants, non-asymptotic bound curves, the
//!   T-transformation machinery behind the Polyak rate proof, and the
//!   Polyak-vs-scheduled comparison predicate.
//! - [`harness`]: multi-seed averaged experiments with bound overlays,
//!   learning-rate heatmaps, batch-size sweeps, and the good-initialization
//!   scenario. Cells run in parallel with the `parallel` feature (default).
//! - [`config`]: the flat `key = value` configuration format used by the CLI.
//!
//! Throughout, `q(x) = ½‖x - x*‖²` (note the ½) is the Lyapunov quantity
//! all bounds control; bound formulas depend on this convention.

pub mod config;
pub mod harness;
pub mod objective;
pub mod optimizer;
pub mod stepsize;
pub mod theory;
pub mod vecops;

pub use objective::{MiniBatchOracle, ProblemInstance, Sampling};
pub use optimizer::{GradientSource, RunConfig, Trajectory};
pub use stepsize::{Caps, StepPolicy};
