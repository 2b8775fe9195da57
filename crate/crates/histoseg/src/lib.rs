//! File formats, PNG IO and the command-line pipeline around
//! [`histoseg_core`].
//!
//! The `histoseg` binary runs the stages in order, each reading the previous
//! stage's files from the configured output directory:
//!
//! ```text
//! histoseg normalize --config run.toml --manifest data.csv
//! histoseg patchify  --config run.toml --manifest data.csv
//! histoseg train     --config run.toml --manifest data.csv
//! histoseg predict   --config run.toml --image slide.png
//! histoseg evaluate  --config run.toml --manifest data.csv
//! ```

pub mod ablation;
pub mod archive;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod png_io;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use manifest::{Manifest, Record, Split};
