//! Surgical-video curation toolkit: label taxonomy, annotation timelines,
//! keyframe selection, dataset emission, temporal-head inference,
//! evaluation metrics and a searchable segment index.

pub mod annotations;
pub mod dataset;
pub mod frame;
pub mod head;
pub mod index;
pub mod metrics;
pub mod taxonomy;

pub use taxonomy::{Level, TaxonomyRegistry, Triplet};
