//! Laplacian-eigenfunction neural operators and Green-kernel Picard
//! solvers for Gierer–Meinhardt reaction–diffusion systems.

pub mod basis;
pub mod dataset;
pub mod field;
pub mod error;
pub mod experiments;
pub mod gm;
pub mod harness;
pub mod green;
pub mod io;
pub mod nn;
pub mod operator;
pub mod picard;
pub mod solver;

pub use error::{Error, Result};
