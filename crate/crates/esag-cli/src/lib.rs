//! Command-line driver and file plumbing around the `esag` library:
//! dataset/grid/chain file formats, run configuration, simulation fixtures,
//! and the `simulate` / `fit` / `predict` / `score` pipelines.

pub mod chains;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fitrun;
pub mod predictrun;
pub mod scorerun;
pub mod sim;
