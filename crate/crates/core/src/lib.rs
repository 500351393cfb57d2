//! Function learning as the terminal state of a discrete-time bilinear
//! control system on a Gaussian-kernel RKHS.

pub mod costs;
pub mod data;
pub mod error;
pub mod experiment;
pub mod operators;
pub mod optimize;
pub mod propagation;
pub mod rkhs;

pub use error::{Error, Result};
