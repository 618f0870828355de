pub mod cli;
pub mod error;
pub mod features;
pub mod graphs;
pub mod lfmmi;
pub mod mam;
pub mod nnet;
pub mod numerics;
pub mod recognize;
pub mod train;

pub use error::{Error, Result};
