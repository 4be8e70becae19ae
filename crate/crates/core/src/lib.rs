pub mod algorithms;
pub mod cvxsolve;
pub mod error;
pub mod harness;
pub mod ia_core;
pub mod model;
pub mod numerics;
pub mod oracle;

pub use error::{Error, Result};
