//! Optimal selling of an asset whose growth regime follows a two-state
//! Markov chain.
//!
//! The price grows exponentially at `f1 > 0` in the up regime and decays at
//! `f2 < 0` in the down regime; the regime flips at rates `lambda1` and
//! `lambda2`. Selling at time `tau` is worth `exp(-rho*tau) * (S_tau - K)`.
//! When discounting is strong enough (`phi(rho) > 0`) the best strategy is a
//! threshold rule, and this crate computes it in closed form, certifies it
//! against the variational inequalities it must satisfy, prices it by Monte
//! Carlo, and estimates model parameters from daily closes.
//!
//! - [`model`]: parameters, admissibility, derived scalars.
//! - [`solver`]: the threshold rule (`solve`) and the value function.
//! - [`verifier`]: grid certification of a rule, with signed margins.
//! - [`simulator`]: exact path simulation, rule execution, Monte Carlo
//!   pricing, and the small-switching-time diffusion limit.
//! - [`calibration`]: moment/sign-flip estimator for daily close series.
//! - [`backtest`]: rolling-window calibrate-decide-sell harness.
//!
//! Monte Carlo and grid sweeps run data-parallel under the default `parallel`
//! feature and sequentially without it; per-path RNG streams and fixed-shape
//! reductions make the results bit-identical across both backends and any
//! thread count.

pub mod backtest;
pub mod calibration;
mod error;
mod exec;
pub mod model;
pub mod simulator;
pub mod solver;
pub mod verifier;

pub use error::{Error, Result};
pub use model::{ChainState, DerivedQuantities, ModelParams, Violation};
pub use solver::{solve, Diagnostic, Regime, SellingRule, Side};
pub use verifier::{verify, verify_default, GridSpec, VerificationReport};
