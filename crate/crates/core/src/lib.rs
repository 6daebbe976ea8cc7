pub mod algebra;
pub mod engine;
pub mod error;
pub mod model_file;
pub mod oracle;
pub mod sweep;
pub mod zoo;

pub use error::{Error, Result};
