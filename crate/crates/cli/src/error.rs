use std::fmt::Debug;
use std::path::PathBuf;

use esv_core::annotations::AnnotationError;
use esv_core::dataset::DatasetError;
use esv_core::frame::FrameError;
use esv_core::head::HeadError;
use esv_core::index::IndexError;
use esv_core::metrics::MetricsError;
use esv_core::taxonomy::TaxonomyError;
use esv_service::ServiceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} is not configured")]
    Unconfigured(&'static str),
    #[error("{what} not found: {}", path.display())]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("{}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
    #[error("row {row}: prediction for {pred:?} but target for {target:?}")]
    Misaligned { row: usize, pred: String, target: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Leading identifier of a `Debug` rendering, i.e. the variant name.
fn variant_name(e: &impl Debug) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}

impl ForgeError {
    pub fn artifact(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        ForgeError::Artifact {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Usage problems exit with 2, failures inside a stage with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            ForgeError::Config(_) | ForgeError::Unconfigured(_) | ForgeError::MissingPath { .. } => 2,
            _ => 1,
        }
    }

    /// Stable machine-readable name of the innermost error variant.
    pub fn kind(&self) -> String {
        match self {
            ForgeError::Taxonomy(e) => variant_name(e),
            ForgeError::Annotation(e) => variant_name(e),
            ForgeError::Frame(e) => variant_name(e),
            ForgeError::Dataset(e) => variant_name(e),
            ForgeError::Head(e) => variant_name(e),
            ForgeError::Metrics(e) => variant_name(e),
            ForgeError::Index(e) => variant_name(e),
            ForgeError::Service(e) => variant_name(e),
            ForgeError::Io(_) => "Io".into(),
            other => variant_name(other),
        }
    }
}
