//! Objective-function-free optimization with bound constraints.
//!
//! The solvers only ever consume gradients (possibly noisy) and curvature
//! estimates along a direction; objective values are never requested. Four
//! drivers share one step engine:
//!
//! - [`level::run_level`] with Taylor steps only: single-level ADAGB2,
//! - [`multilevel`]: recursive V-cycles over a grid hierarchy,
//! - [`schwarz`]: additive-Schwarz domain decomposition with parallel subdomain solves,
//! - [`hybrid`]: a coarse level combined with the subdomain solves.

pub mod adagb2;
pub mod bounds;
pub mod config;
pub mod cost;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod hybrid;
pub mod level;
pub mod linalg;
pub mod multilevel;
pub mod noise;
pub mod oracle;
pub mod problems;
pub mod schwarz;
pub mod sparse;
pub mod summary;
pub mod trace;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
