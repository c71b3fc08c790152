//! Pipeline orchestration, artifact store, HTTP service and command-line
//! front end for the epicast forecasting engine.

pub mod cli;
pub mod http;
pub mod manifest;
pub mod pipeline;
pub mod store;
pub mod synth;
