pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod projection;
pub mod simulate;
pub mod subspace;
pub mod validation;

pub use error::{Error, Result};
