//! Files, configuration, training runs and the command-line front end for
//! exemplar-guided face editing. The models and all numerics live in
//! [`exedit_core`].

pub mod attributes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod imageio;
pub mod run;

pub use error::{Error, Result};
