//! Forward solvers, measurement maps and constructive inverse procedures for
//! coupled nonlocal-in-space parabolic systems and multi-term time-fractional
//! diffusion systems.

pub mod domain;
pub mod error;
pub mod field;
pub mod forward;
pub mod fractime;
pub mod inverse;
pub mod linearize;
pub mod measure;
pub mod models;
pub mod nonlocal_op;
pub mod verify;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
