//! Data-driven synthesis and verification of k-inductive barrier
//! certificates for discrete-time nonlinear systems with unknown dynamics.

pub mod cegis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod interval;
pub mod learner;
pub mod network;
pub mod poly;
pub mod safety;
pub mod tape;
pub mod verifier;

pub use error::{Error, Result};
pub use expr::Expr;
pub use interval::{Interval, IntervalBox};
pub use tape::Tape;
