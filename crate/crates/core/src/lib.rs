pub mod catalog;
pub mod certificate;
pub mod compose;
pub mod dfa;
pub mod error;
pub mod generator;
pub mod model;
pub mod poly;
pub mod probability;
pub mod project;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
