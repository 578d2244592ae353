//! The `kgaug` pipeline: configuration, run-directory manifest, stage
//! bodies and the end-to-end runner behind the command-line tool.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod stages;

pub use config::{Overrides, RunConfig};
pub use error::{classify, ExitClass};
pub use manifest::Manifest;
pub use pipeline::{run_pipeline, RunReport};
