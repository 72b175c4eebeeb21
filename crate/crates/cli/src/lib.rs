//! `esv-forge`: the pipeline behind one command line.
//!
//! Artifacts land under the configured output root:
//!
//! ```text
//! timelines.json      import
//! keyframes.json      keyframes (plus staging/ with the cropped keyframe images)
//! dataset/            emit: frames/, cutouts/, timeline_labels.csv, dataset_manifest.json
//! predictions.csv     infer
//! report/             evaluate: report.json, report.txt, roc/
//! index.json          index
//! ```

pub mod cli;
pub mod config;
pub mod error;
pub mod stages;
pub mod synth;

pub use cli::run;
pub use config::PipelineConfig;
pub use error::ForgeError;
