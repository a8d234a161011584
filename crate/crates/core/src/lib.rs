//! Geometric approximation toolkit: ε-kernels, approximate polytope
//! membership, and extent measures built on hierarchies of Macbeath
//! ellipsoids, plus brute-force oracles for validation.

pub mod apm;
pub mod cli;
pub mod error;
pub mod extent;
pub mod geom_core;
pub mod hierarchy;
pub mod kernel;
pub mod macbeath;
pub mod oracle;

pub use error::{Error, Result};
