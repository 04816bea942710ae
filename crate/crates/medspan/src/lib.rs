pub mod augment;
pub mod bio;
pub mod cli;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod synth;
pub mod weaklabel;

pub use error::{Error, Result};
