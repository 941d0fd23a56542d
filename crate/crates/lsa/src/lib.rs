//! Constant step-size linear stochastic approximation (LSA) with
//! Polyak-Ruppert averaging.
//!
//! The crate simulates the recursion
//! `theta_{t+1} = theta_t - eta (A_{t+1} theta_t - b_{t+1})`
//! for i.i.d. unbiased draws `(A_t, b_t)` of a pair `(A, b)`, reports the
//! running average of the iterates, and computes the covariance objects that
//! describe the averaged estimator exactly:
//!
//! * the noise covariance at the solution (`covariance::sigma_star`),
//! * the stationary covariance of the iterate chain, solved from its
//!   defining matrix equation (`covariance::solve_stationary_cov`),
//! * the asymptotic covariance of the scaled averaged error, including the
//!   step-size correction term (`covariance::gamma_eta`).
//!
//! On top of those sit non-asymptotic confidence sets (`inference`), a
//! library of stochastic oracles covering linear regression, momentum SGD,
//! temporal-difference learning, and minimax games (`oracles`), spectral
//! analysis of the drift matrix including the critical (zero spectral gap)
//! regime (`spectral`), and packaged Monte Carlo studies that validate the
//! covariance and rate predictions at desk scale (`experiments`,
//! `acceptance`).

pub mod acceptance;
pub mod config;
pub mod covariance;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod linalg;
pub mod oracles;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
