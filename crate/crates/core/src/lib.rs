pub mod collision;
pub mod error;
pub mod graph;
pub mod ner;
pub mod quadrature;
pub mod planning;
pub mod rules;
pub mod sim;
pub mod stats;
pub mod transcript;
pub mod travel_time;

pub use error::{Error, Result};
