pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod io;
pub mod knowledge;
pub mod neural;
pub mod runner;
pub mod stage1;
pub mod stage2;
pub mod tyt;

pub use error::{Error, Result};
