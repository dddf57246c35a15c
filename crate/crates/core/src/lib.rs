pub mod analytic;
pub mod assignment;
pub mod bench;
pub mod check;
pub mod config;
pub mod discretization;
pub mod eigensolve;
pub mod error;
pub mod gauge;
pub mod greedy;
pub mod linalg;
pub mod pipeline;
pub mod problem;
pub mod reduced;
pub mod sparse;
pub mod study;
pub mod tracking;

pub use error::{Error, Result};
