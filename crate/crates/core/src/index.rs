//! Run-length segment index over per-sample triplet labels, with label,
//! surgery and time-window search and a versioned JSON file format.
//!
//! Segment boundaries sit at the midpoint between adjacent samples whose
//! labels differ. The first and last run of a surgery extend half the
//! median sampling interval past their outer samples (clamped at zero at
//! the start). A surgery with a single sample gets a half-extent of
//! [`SINGLE_SAMPLE_HALF_EXTENT_S`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Level, TaxonomyError, TaxonomyRegistry, Triplet};

pub const INDEX_SCHEMA: &str = "esv-timeline-index";
pub const INDEX_VERSION: u32 = 1;
pub const SINGLE_SAMPLE_HALF_EXTENT_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("surgery {surgery_id}: timestamp {next} does not follow {prev}")]
    UnorderedInput { surgery_id: String, prev: f64, next: f64 },
    #[error("surgery {surgery_id}: invalid timestamp {t}")]
    InvalidTimestamp { surgery_id: String, t: f64 },
    #[error("unknown {level} label {text:?}")]
    UnknownLabelName { level: Level, text: String },
    #[error("query has no criteria")]
    EmptyQuery,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
    #[error("index version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Annotation,
    Prediction,
}

/// One labelled sample of the input stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSample<'a> {
    pub surgery_id: &'a str,
    pub timestamp_s: f64,
    pub label: Triplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSegment {
    pub surgery_id: String,
    pub level: Level,
    pub label: usize,
    pub name: String,
    pub start_s: f64,
    pub end_s: f64,
    pub source: LabelSource,
}

impl IndexSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// All segments of one surgery. Each level's list is ordered and
/// partitions `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryIndex {
    pub surgery_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: usize,
    pub phase: Vec<IndexSegment>,
    pub task: Vec<IndexSegment>,
    pub action: Vec<IndexSegment>,
}

impl SurgeryIndex {
    pub fn level(&self, level: Level) -> &[IndexSegment] {
        match level {
            Level::Phase => &self.phase,
            Level::Task => &self.task,
            Level::Action => &self.action,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Immutable once built. Surgeries are kept in id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineIndex {
    pub surgeries: Vec<SurgeryIndex>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    schema: String,
    version: u32,
    surgeries: Vec<SurgeryIndex>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn build_surgery(
    surgery_id: &str,
    samples: &[(f64, Triplet)],
    source: LabelSource,
    registry: &TaxonomyRegistry,
) -> SurgeryIndex {
    let half = if samples.len() < 2 {
        SINGLE_SAMPLE_HALF_EXTENT_S
    } else {
        let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].0 - w[0].0).collect();
        median(&mut gaps) / 2.0
    };
    let start = (samples[0].0 - half).max(0.0);
    let end = samples[samples.len() - 1].0 + half;

    let runs = |level: Level| -> Vec<IndexSegment> {
        let mut out = Vec::new();
        let mut run_start = start;
        for i in 0..samples.len() {
            let label = samples[i].1.ordinal(level);
            let boundary = match samples.get(i + 1) {
                Some(next) if next.1.ordinal(level) != label => (samples[i].0 + next.0) / 2.0,
                Some(_) => continue,
                None => end,
            };
            out.push(IndexSegment {
                surgery_id: surgery_id.to_string(),
                level,
                label,
                name: registry.name(level, label).unwrap_or_default().to_string(),
                start_s: run_start,
                end_s: boundary,
                source,
            });
            run_start = boundary;
        }
        out
    };

    SurgeryIndex {
        surgery_id: surgery_id.to_string(),
        start_s: start,
        end_s: end,
        samples: samples.len(),
        phase: runs(Level::Phase),
        task: runs(Level::Task),
        action: runs(Level::Action),
    }
}

/// Builds the index. Samples of different surgeries may interleave, but
/// within a surgery timestamps must strictly increase.
pub fn build_index<'a, I>(samples: I, source: LabelSource, registry: &TaxonomyRegistry) -> Result<TimelineIndex, IndexError>
where
    I: IntoIterator<Item = LabelSample<'a>>,
{
    let mut grouped: BTreeMap<&str, Vec<(f64, Triplet)>> = BTreeMap::new();
    for s in samples {
        if !s.timestamp_s.is_finite() || s.timestamp_s < 0.0 {
            return Err(IndexError::InvalidTimestamp {
                surgery_id: s.surgery_id.to_string(),
                t: s.timestamp_s,
            });
        }
        let list = grouped.entry(s.surgery_id).or_default();
        if let Some(&(prev, _)) = list.last() {
            if s.timestamp_s <= prev {
                return Err(IndexError::UnorderedInput {
                    surgery_id: s.surgery_id.to_string(),
                    prev,
                    next: s.timestamp_s,
                });
            }
        }
        list.push((s.timestamp_s, s.label));
    }
    let surgeries = grouped
        .into_iter()
        .map(|(id, list)| build_surgery(id, &list, source, registry))
        .collect();
    Ok(TimelineIndex { surgeries })
}

/// Search criteria. Label names accept display names or slugs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub phase: Option<String>,
    pub task: Option<String>,
    pub action: Option<String>,
    pub surgery: Option<String>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub min_duration: Option<f64>,
}

impl SearchQuery {
    pub fn label(&self, level: Level) -> Option<&str> {
        match level {
            Level::Phase => self.phase.as_deref(),
            Level::Task => self.task.as_deref(),
            Level::Action => self.action.as_deref(),
        }
    }

    pub fn is_empty(&self) -> bool {
        Level::ALL.iter().all(|&l| self.label(l).is_none())
            && self.surgery.is_none()
            && self.from.is_none()
            && self.to.is_none()
            && self.min_duration.is_none()
    }
}

/// A query with names resolved to ordinals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedQuery {
    pub labels: [Option<usize>; 3],
    pub from: f64,
    pub to: f64,
    pub min_duration: f64,
}

impl ResolvedQuery {
    /// Level of the returned segments: the finest level with a label
    /// criterion, or `None` when every level is returned.
    pub fn target(&self) -> Option<Level> {
        Level::ALL.iter().rev().copied().find(|l| self.labels[l.index()].is_some())
    }
}

pub fn resolve_query(q: &SearchQuery, registry: &TaxonomyRegistry) -> Result<ResolvedQuery, IndexError> {
    if q.is_empty() {
        return Err(IndexError::EmptyQuery);
    }
    let mut labels = [None; 3];
    for level in Level::ALL {
        if let Some(text) = q.label(level) {
            labels[level.index()] = Some(registry.resolve(level, text).map_err(|e| match e {
                TaxonomyError::UnknownName { .. } => IndexError::UnknownLabelName {
                    level,
                    text: text.to_string(),
                },
                other => IndexError::InvalidQuery(other.to_string()),
            })?);
        }
    }
    let from = q.from.unwrap_or(f64::NEG_INFINITY);
    let to = q.to.unwrap_or(f64::INFINITY);
    let min_duration = q.min_duration.unwrap_or(0.0);
    if from.is_nan() || to.is_nan() || from > to {
        return Err(IndexError::InvalidQuery(format!("window [{from}, {to}]")));
    }
    if !(min_duration >= 0.0) || min_duration.is_infinite() {
        return Err(IndexError::InvalidQuery(format!("min_duration {min_duration}")));
    }
    Ok(ResolvedQuery {
        labels,
        from,
        to,
        min_duration,
    })
}

impl TimelineIndex {
    pub fn is_empty(&self) -> bool {
        self.surgeries.is_empty()
    }

    pub fn surgery(&self, surgery_id: &str) -> Option<&SurgeryIndex> {
        self.surgeries
            .binary_search_by(|s| s.surgery_id.as_str().cmp(surgery_id))
            .ok()
            .map(|i| &self.surgeries[i])
    }

    pub fn segments(&self) -> impl Iterator<Item = &IndexSegment> {
        self.surgeries
            .iter()
            .flat_map(|s| Level::ALL.into_iter().flat_map(move |l| s.level(l).iter()))
    }

    /// Returns the parts of target-level segments where every label
    /// criterion holds, clipped to the time window, no shorter than
    /// `min_duration`, sorted by (surgery, start, level).
    pub fn search(&self, q: &SearchQuery, registry: &TaxonomyRegistry) -> Result<Vec<IndexSegment>, IndexError> {
        let rq = resolve_query(q, registry)?;
        Ok(self.search_resolved(q.surgery.as_deref(), &rq))
    }

    pub fn search_resolved(&self, surgery: Option<&str>, rq: &ResolvedQuery) -> Vec<IndexSegment> {
        let levels: Vec<Level> = match rq.target() {
            Some(l) => vec![l],
            None => Level::ALL.to_vec(),
        };
        let mut out = Vec::new();
        for s in &self.surgeries {
            if surgery.is_some_and(|id| id != s.surgery_id) {
                continue;
            }
            for &level in &levels {
                for seg in s.level(level) {
                    if rq.labels[level.index()].is_some_and(|l| l != seg.label) {
                        continue;
                    }
                    let mut pieces = vec![(seg.start_s.max(rq.from), seg.end_s.min(rq.to))];
                    pieces.retain(|(a, b)| a < b);
                    for other in Level::ALL {
                        let Some(want) = rq.labels[other.index()] else { continue };
                        if other == level {
                            continue;
                        }
                        pieces = pieces
                            .iter()
                            .flat_map(|&(a, b)| {
                                s.level(other)
                                    .iter()
                                    .filter(move |o| o.label == want && o.start_s < b && o.end_s > a)
                                    .map(move |o| (a.max(o.start_s), b.min(o.end_s)))
                            })
                            .collect();
                    }
                    for (a, b) in pieces {
                        if b - a >= rq.min_duration {
                            out.push(IndexSegment {
                                start_s: a,
                                end_s: b,
                                ..seg.clone()
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(|x, y| {
            x.surgery_id
                .cmp(&y.surgery_id)
                .then(x.start_s.total_cmp(&y.start_s))
                .then(x.level.cmp(&y.level))
        });
        out
    }

    /// Checks ordering, label ranges and the partition property.
    pub fn validate(&self, registry: &TaxonomyRegistry) -> Result<(), IndexError> {
        let corrupt = |msg: String| Err(IndexError::Corrupt(msg));
        for pair in self.surgeries.windows(2) {
            if pair[0].surgery_id >= pair[1].surgery_id {
                return corrupt(format!("surgeries out of order at {}", pair[1].surgery_id));
            }
        }
        for s in &self.surgeries {
            if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s < s.end_s) {
                return corrupt(format!("{}: bad extent", s.surgery_id));
            }
            for level in Level::ALL {
                let segs = s.level(level);
                let mut cursor = s.start_s;
                for seg in segs {
                    if seg.surgery_id != s.surgery_id || seg.level != level {
                        return corrupt(format!("{}: misfiled segment", s.surgery_id));
                    }
                    if seg.label >= registry.len(level) {
                        return corrupt(format!("{}: {level} label {} out of range", s.surgery_id, seg.label));
                    }
                    if seg.start_s != cursor || !(seg.start_s < seg.end_s) {
                        return corrupt(format!("{}: {level} segments do not tile", s.surgery_id));
                    }
                    cursor = seg.end_s;
                }
                if cursor != s.end_s {
                    return corrupt(format!("{}: {level} segments end at {cursor}", s.surgery_id));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = IndexFile {
            schema: INDEX_SCHEMA.to_string(),
            version: INDEX_VERSION,
            surgeries: self.surgeries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("index serializes")
    }

    pub fn from_json(text: &str, registry: &TaxonomyRegistry) -> Result<Self, IndexError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        match value.get("schema").and_then(|v| v.as_str()) {
            Some(INDEX_SCHEMA) => {}
            other => return Err(IndexError::Corrupt(format!("schema {other:?}"))),
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| IndexError::Corrupt("missing version".into()))?;
        if version != INDEX_VERSION as u64 {
            return Err(IndexError::VersionMismatch {
                expected: INDEX_VERSION,
                found: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        let file: IndexFile = serde_json::from_value(value).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        let index = TimelineIndex {
            surgeries: file.surgeries,
        };
        index.validate(registry)?;
        Ok(index)
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// reader never sees a half-written index.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("index.json");
        let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path).inspect_err(|_| {
            let _ = std::fs::remove_file(&tmp);
        })?;
        Ok(())
    }

    pub fn load(path: &Path, registry: &TaxonomyRegistry) -> Result<Self, IndexError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, registry)
    }
}

/// Shared, swappable reference to the current index.
#[derive(Debug, Clone)]
pub struct IndexHandle {
    inner: Arc<RwLock<Arc<TimelineIndex>>>,
}

impl IndexHandle {
    pub fn new(index: TimelineIndex) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(index))),
        }
    }

    /// Snapshot of the current index; unaffected by later swaps.
    pub fn current(&self) -> Arc<TimelineIndex> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Replaces the index, returning the previous one.
    pub fn swap(&self, index: TimelineIndex) -> Arc<TimelineIndex> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *guard, Arc::new(index))
    }
}
