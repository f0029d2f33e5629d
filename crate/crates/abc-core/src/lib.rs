pub mod approximation;
pub mod bump;
pub mod combinatorics;
pub mod conjugations;
pub mod error;
pub mod fbar;
pub mod geometry;
pub mod scheduler;
pub mod serial;
pub mod towers;

pub use error::{Error, Result};
