//! Resource-constrained architecture search: file formats, evaluators, the
//! search loop and checkpoints on top of `rcnas-core`.

pub mod checkpoint;
pub mod config;
pub mod evaluator;
pub mod external;
pub mod format;
pub mod orchestrator;
pub mod protocol;
pub mod report;

pub use rcnas_core as core;
