pub mod carleman;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod linalg;
pub mod logspace;
pub mod observe;
pub mod poincare;
pub mod report;
pub mod stability;
pub mod weights;

pub use error::{LabError, Result};
