//! Exact-arithmetic laboratory for metric Diophantine approximation on the circle.

pub mod bclab;
pub mod cli;
pub mod contfrac;
pub mod dynsim;
pub mod error;
pub mod expr;
pub mod moments;
pub mod numtheory;
pub mod rational;
pub mod targets;
pub mod unitcircle;

pub use error::{LabError, Result};
pub use rational::Rational;
pub use unitcircle::CircleSet;
