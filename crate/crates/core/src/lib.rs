//! Pole-zero speech analysis with a mixed block-sparse and Gaussian excitation.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod synthesis;
pub mod vem;

pub use error::{Error, Result};
pub use model::{Frame, PoleZeroModel};
