//! Calibration of a shallow neural network embedded in the source term of a
//! 2D quasi-linear parabolic PDE, driven by adjoint gradient descent, plus
//! the kernel and infinite-width training diagnostics that go with it.
//!
//! The crate is organized as a library with one runnable example per major
//! capability (see `examples/`) and a thin `nnpde` binary exposing the same
//! entry points as subcommands.

pub mod adjoint;
pub mod error;
pub mod forward;
pub mod grid;
pub mod kernel;
pub mod loss;
pub mod net;
pub mod optim;
pub mod problem;

pub use error::{Error, Result};

pub mod cli;
pub mod experiment;
pub mod expr;
pub mod limit;
pub mod plot;
