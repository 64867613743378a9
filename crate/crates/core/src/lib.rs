//! Transfer-market decision engine.
//!
//! * [`model_io`] — player tables, club metadata, coefficients, scenarios.
//! * [`predictors`] — rating forecasts and log-normal fee distributions.
//! * [`numerics`] — normal and log-normal kernels, moment matching,
//!   monotone tables and a quasi-Newton solver.
//! * [`objective`] — cost, risk, quality, constraints and fitness.
//! * [`solvers`] — directive filtering, GA / SA / HC search, exhaustive
//!   oracle and benchmarking.
//! * [`auction`] — first-price auction equilibria with a random reserve.
//! * [`mc_sim`] — Monte Carlo simulation of multi-round negotiations.

pub mod auction;
pub mod mc_sim;
pub mod model_io;
pub mod numerics;
pub mod objective;
pub mod predictors;
pub mod solvers;
