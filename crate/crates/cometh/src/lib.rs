//! Data files, language-model access, pipeline stages and the command line
//! for the moral-context toolkit. The numerical core lives in `cometh_core`.

pub mod dataset;
pub mod embed;
pub mod error;
pub mod gateway;
pub mod grid;
mod http;
pub mod pipeline;
pub mod preprocess;
pub mod run;
pub mod trace;

pub use cometh_core as core;
pub use error::{Error, Result};
