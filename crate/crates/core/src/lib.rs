//! Local integrity measure (LIM) estimation for nonlinear time-delayed
//! systems.
//!
//! The LIM of a stable equilibrium is the radius of the largest ball around it
//! that lies inside its basin of attraction, where the basin is defined on the
//! headpoints of a constrained family of initial functions. Trajectories are
//! generated with a semi-discretization map, classified online on a cell
//! grid, and the ball is shrunk every time a headpoint inside it fails to
//! converge.

pub mod classifier;
pub mod error;
pub mod estimator;
pub mod initfn;
pub mod metric;
pub mod numerics;
pub mod runner;
pub mod semidisc;
pub mod systems;

pub use error::{Error, Result};
