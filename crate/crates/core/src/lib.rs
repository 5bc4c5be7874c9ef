pub mod amp;
pub mod error;
pub mod fmt;
pub mod model;
pub mod phase;
pub mod prox;
pub mod quad;
pub mod replica;
pub mod se;

pub use error::{Error, Result};
