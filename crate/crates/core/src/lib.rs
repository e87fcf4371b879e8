//! Small transaction-cost expansion for option hedging under an expected-loss
//! constraint in a Black–Scholes market.
//!
//! The crate is organised bottom-up: [`market`] simulates the spot and prices
//! bounded payoffs, [`frictionless`] solves the frictionless problem,
//! [`corrector`] and [`second_corrector`] build the expansion terms,
//! [`hedge_sim`] runs the no-trade-band strategies and [`experiments`] turns
//! simulations into reports.

pub mod corrector;
pub mod error;
pub mod experiments;
pub mod frictionless;
pub mod hedge_sim;
pub mod market;
pub mod numerics;
pub mod report;
pub mod second_corrector;

pub use error::{Error, Result};
