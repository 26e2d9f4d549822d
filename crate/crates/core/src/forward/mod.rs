//! Implicit time stepping for both system families.

pub mod space;
mod stepper;
pub mod system;
pub mod time;

pub use space::{solve_space_nonlocal, solve_space_with, SpaceOperators};
pub use stepper::{PICARD_MAX_ITERS, PICARD_TOL};
pub use system::*;
pub use time::{drift_removal, laplacian, solve_time_fractional, solve_time_fractional_direct, DriftRemoval};
