//! Annotation-tool exports, clip manifests and the global surgery clock.
//!
//! Accepted export shape (a subset of the Label Studio JSON export):
//!
//! ```json
//! [
//!   {
//!     "clip": "videos/surg-001/clipA.mp4",
//!     "result": [
//!       { "start": 0.0, "end": 30.0, "labels": ["setup.scope_setup.scope_insertion"] },
//!       { "value": { "start": 30.0, "end": 95.5, "labels": ["dissection.landmarking.marking"] } }
//!     ]
//!   }
//! ]
//! ```
//!
//! The clip id is the file stem of `clip`. A region entry is either flat or
//! wrapped in `value`. Regions with an empty `labels` list are skipped; a
//! region carrying more than one label is rejected.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{TaxonomyError, TaxonomyRegistry, Triplet};

/// Region ends may overshoot the clip duration by this much before erroring.
pub const CLIP_END_TOLERANCE_S: f64 = 0.05;

const MERGE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("bad label in clip {clip:?}: {source}")]
    BadLabel {
        clip: String,
        #[source]
        source: TaxonomyError,
    },
    #[error("segment references unknown clip {0:?}")]
    UnknownClip(String),
    #[error("segment [{start_s}, {end_s}) exceeds clip {clip:?} of duration {duration_s}")]
    SegmentExceedsClip {
        clip: String,
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("invalid clip manifest: {0}")]
    Manifest(String),
    #[error("time {0} is not covered by any labelled segment")]
    Unlabelled(f64),
    #[error("time {t} outside [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled region of a clip, in clip-local seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotationSegment {
    pub clip_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: Triplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub surgery_id: String,
    pub clip_id: String,
    pub part_index: u32,
    pub duration_s: f64,
}

#[derive(Debug, Deserialize)]
struct ExportTask {
    clip: Option<String>,
    result: Option<Vec<RegionEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RegionEntry {
    Wrapped { value: Region },
    Flat(Region),
}

#[derive(Debug, Deserialize)]
struct Region {
    start: Option<f64>,
    end: Option<f64>,
    labels: Option<Vec<String>>,
}

/// Clip id for a media path: the file stem.
pub fn clip_id_from_path(path: &str) -> String {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match name.rfind('.') {
        Some(dot) if dot > 0 => name[..dot].to_string(),
        _ => name.to_string(),
    }
}

pub fn parse_annotation_export(
    document: &str,
    registry: &TaxonomyRegistry,
) -> Result<Vec<RawAnnotationSegment>, AnnotationError> {
    let tasks: Vec<ExportTask> =
        serde_json::from_str(document).map_err(|e| AnnotationError::Schema(e.to_string()))?;
    let mut out = Vec::new();
    for (ti, task) in tasks.into_iter().enumerate() {
        let clip = task
            .clip
            .ok_or_else(|| AnnotationError::Schema(format!("task {ti}: missing \"clip\"")))?;
        let clip_id = clip_id_from_path(&clip);
        let regions = task
            .result
            .ok_or_else(|| AnnotationError::Schema(format!("task {ti}: missing \"result\"")))?;
        for (ri, entry) in regions.into_iter().enumerate() {
            let region = match entry {
                RegionEntry::Wrapped { value } => value,
                RegionEntry::Flat(r) => r,
            };
            let at = || format!("clip {clip_id:?} region {ri}");
            let start_s = region
                .start
                .ok_or_else(|| AnnotationError::Schema(format!("{}: missing \"start\"", at())))?;
            let end_s = region
                .end
                .ok_or_else(|| AnnotationError::Schema(format!("{}: missing \"end\"", at())))?;
            let labels = region
                .labels
                .ok_or_else(|| AnnotationError::Schema(format!("{}: missing \"labels\"", at())))?;
            if !(start_s >= 0.0 && start_s < end_s && end_s.is_finite()) {
                return Err(AnnotationError::Schema(format!(
                    "{}: need 0 <= start < end, got [{start_s}, {end_s})",
                    at()
                )));
            }
            let label = match labels.as_slice() {
                [] => continue,
                [one] => registry.parse_triplet(one).map_err(|source| AnnotationError::BadLabel {
                    clip: clip_id.clone(),
                    source,
                })?,
                many => {
                    return Err(AnnotationError::Schema(format!(
                        "{}: {} labels on one region, expected one",
                        at(),
                        many.len()
                    )))
                }
            };
            out.push(RawAnnotationSegment {
                clip_id: clip_id.clone(),
                start_s,
                end_s,
                label,
            });
        }
    }
    Ok(out)
}

/// Reads the clip manifest table: `surgery_id,clip_id,part_index,duration_s`.
pub fn read_clip_manifest<R: Read>(reader: R) -> Result<Vec<ClipManifest>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut clips = Vec::new();
    for row in rdr.deserialize() {
        let clip: ClipManifest = row.map_err(|e| AnnotationError::Manifest(e.to_string()))?;
        if !(clip.duration_s > 0.0 && clip.duration_s.is_finite()) {
            return Err(AnnotationError::Manifest(format!(
                "clip {:?} has non-positive duration {}",
                clip.clip_id, clip.duration_s
            )));
        }
        clips.push(clip);
    }
    Ok(clips)
}

pub fn write_clip_manifest<W: std::io::Write>(writer: W, clips: &[ClipManifest]) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(writer);
    for c in clips {
        w.serialize(c).map_err(|e| AnnotationError::Manifest(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_clip_manifest(path: &Path) -> Result<Vec<ClipManifest>, AnnotationError> {
    read_clip_manifest(std::fs::File::open(path)?)
}

/// Position of one clip on the surgery clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpan {
    pub clip_id: String,
    pub part_index: u32,
    pub offset_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Triplet,
}

impl TimelineSegment {
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Labelled segments of one surgery on its global clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryTimeline {
    pub surgery_id: String,
    pub clips: Vec<ClipSpan>,
    pub segments: Vec<TimelineSegment>,
    pub total_duration_s: f64,
}

impl SurgeryTimeline {
    pub fn clip(&self, clip_id: &str) -> Option<&ClipSpan> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    /// Maps a clip-local time onto the surgery clock.
    pub fn global_time(&self, clip_id: &str, local_s: f64) -> Result<f64, AnnotationError> {
        let clip = self
            .clip(clip_id)
            .ok_or_else(|| AnnotationError::UnknownClip(clip_id.to_string()))?;
        Ok(clip.offset_s + local_s)
    }

    /// Label at time `t`, half-open intervals, O(log n).
    pub fn lookup_label(&self, t: f64) -> Result<Triplet, AnnotationError> {
        if !(0.0..=self.total_duration_s).contains(&t) {
            return Err(AnnotationError::OutOfRange {
                t,
                total: self.total_duration_s,
            });
        }
        let idx = self.segments.partition_point(|s| s.start_s <= t);
        match idx.checked_sub(1).map(|i| &self.segments[i]) {
            Some(seg) if t < seg.end_s => Ok(seg.label),
            _ => Err(AnnotationError::Unlabelled(t)),
        }
    }

    pub fn labelled_duration_s(&self) -> f64 {
        self.segments.iter().map(TimelineSegment::duration_s).sum()
    }
}

/// Sorts, resolves overlaps (a later-starting segment truncates the one
/// before it) and merges abutting segments that share a label.
pub fn normalize_segments(mut segments: Vec<TimelineSegment>) -> Vec<TimelineSegment> {
    segments.retain(|s| s.end_s > s.start_s);
    segments.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.end_s.total_cmp(&b.end_s))
            .then(a.label.cmp(&b.label))
    });

    let mut resolved: Vec<TimelineSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        if let Some(prev) = resolved.last_mut() {
            if prev.end_s > seg.start_s {
                prev.end_s = seg.start_s;
            }
            if prev.end_s <= prev.start_s {
                resolved.pop();
            }
        }
        resolved.push(seg);
    }

    let mut merged: Vec<TimelineSegment> = Vec::with_capacity(resolved.len());
    for seg in resolved {
        match merged.last_mut() {
            Some(prev) if prev.label == seg.label && (seg.start_s - prev.end_s).abs() <= MERGE_EPS => {
                prev.end_s = seg.end_s;
            }
            _ => merged.push(seg),
        }
    }
    merged
}

/// Lifts clip-local segments of one surgery onto its global clock.
pub fn assemble_timeline(
    surgery_id: &str,
    segments: &[RawAnnotationSegment],
    clips: &[ClipManifest],
) -> Result<SurgeryTimeline, AnnotationError> {
    let mut ordered: Vec<&ClipManifest> = clips.iter().filter(|c| c.surgery_id == surgery_id).collect();
    ordered.sort_by_key(|c| c.part_index);
    for (expected, clip) in ordered.iter().enumerate() {
        if clip.part_index as usize != expected {
            return Err(AnnotationError::Manifest(format!(
                "surgery {surgery_id:?}: part indices must be 0..n without gaps or repeats, found {} at position {expected}",
                clip.part_index
            )));
        }
        if !(clip.duration_s > 0.0) {
            return Err(AnnotationError::Manifest(format!("clip {:?} has non-positive duration", clip.clip_id)));
        }
    }

    let mut spans = Vec::with_capacity(ordered.len());
    let mut offset = 0.0;
    for clip in &ordered {
        spans.push(ClipSpan {
            clip_id: clip.clip_id.clone(),
            part_index: clip.part_index,
            offset_s: offset,
            duration_s: clip.duration_s,
        });
        offset += clip.duration_s;
    }
    let total = offset;
    let by_id: HashMap<&str, &ClipSpan> = spans.iter().map(|s| (s.clip_id.as_str(), s)).collect();

    let mut global = Vec::with_capacity(segments.len());
    for seg in segments {
        let span = by_id
            .get(seg.clip_id.as_str())
            .ok_or_else(|| AnnotationError::UnknownClip(seg.clip_id.clone()))?;
        let exceeds = || AnnotationError::SegmentExceedsClip {
            clip: seg.clip_id.clone(),
            start_s: seg.start_s,
            end_s: seg.end_s,
            duration_s: span.duration_s,
        };
        if seg.end_s > span.duration_s + CLIP_END_TOLERANCE_S {
            return Err(exceeds());
        }
        let end = seg.end_s.min(span.duration_s);
        if seg.start_s >= end {
            return Err(exceeds());
        }
        global.push(TimelineSegment {
            start_s: span.offset_s + seg.start_s,
            end_s: span.offset_s + end,
            label: seg.label,
        });
    }

    Ok(SurgeryTimeline {
        surgery_id: surgery_id.to_string(),
        clips: spans,
        segments: normalize_segments(global),
        total_duration_s: total,
    })
}

/// Assembles every surgery named in the manifest, ordered by surgery id.
pub fn assemble_all(
    segments: &[RawAnnotationSegment],
    clips: &[ClipManifest],
) -> Result<Vec<SurgeryTimeline>, AnnotationError> {
    let mut clip_owner: HashMap<&str, &str> = HashMap::new();
    for c in clips {
        if let Some(prev) = clip_owner.insert(c.clip_id.as_str(), c.surgery_id.as_str()) {
            return Err(AnnotationError::Manifest(format!(
                "clip id {:?} listed for both {prev:?} and {:?}",
                c.clip_id, c.surgery_id
            )));
        }
    }
    let mut per_surgery: BTreeMap<&str, Vec<RawAnnotationSegment>> =
        clips.iter().map(|c| (c.surgery_id.as_str(), Vec::new())).collect();
    for seg in segments {
        let owner = clip_owner
            .get(seg.clip_id.as_str())
            .ok_or_else(|| AnnotationError::UnknownClip(seg.clip_id.clone()))?;
        per_surgery.get_mut(owner).expect("owner registered").push(seg.clone());
    }
    per_surgery
        .into_iter()
        .map(|(sid, segs)| assemble_timeline(sid, &segs, clips))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::TaxonomyRegistry;

    fn reg() -> &'static TaxonomyRegistry {
        TaxonomyRegistry::builtin()
    }

    fn tri(label: &str) -> Triplet {
        reg().parse_triplet(label).unwrap()
    }

    const S: &str = "setup.scope_setup.scope_insertion";
    const D: &str = "dissection.mucosal_dissection.dissection";

    fn clip(id: &str, part: u32, dur: f64) -> ClipManifest {
        ClipManifest {
            surgery_id: "s1".into(),
            clip_id: id.into(),
            part_index: part,
            duration_s: dur,
        }
    }

    fn raw(clip: &str, a: f64, b: f64, label: &str) -> RawAnnotationSegment {
        RawAnnotationSegment {
            clip_id: clip.into(),
            start_s: a,
            end_s: b,
            label: tri(label),
        }
    }

    #[test]
    fn export_one_region() {
        let doc = format!(r#"[{{"clip": "x/clipA.mp4", "result": [{{"start": 0, "end": 30, "labels": ["{S}"]}}]}}]"#);
        let segs = parse_annotation_export(&doc, reg()).unwrap();
        assert_eq!(segs, vec![raw("clipA", 0.0, 30.0, S)]);
    }

    #[test]
    fn export_wrapped_region_and_unlabelled() {
        let doc = format!(
            r#"[{{"clip": "clipA.mp4", "result": [
                {{"value": {{"start": 1.5, "end": 2, "labels": ["{D}"]}}}},
                {{"start": 3, "end": 4, "labels": []}}
            ]}}]"#
        );
        let segs = parse_annotation_export(&doc, reg()).unwrap();
        assert_eq!(segs, vec![raw("clipA", 1.5, 2.0, D)]);
    }

    #[test]
    fn export_empty() {
        assert!(parse_annotation_export("[]", reg()).unwrap().is_empty());
        let doc = r#"[{"clip": "c.mp4", "result": []}]"#;
        assert!(parse_annotation_export(doc, reg()).unwrap().is_empty());
    }

    #[test]
    fn export_missing_end() {
        let doc = format!(r#"[{{"clip": "c.mp4", "result": [{{"start": 0, "labels": ["{S}"]}}]}}]"#);
        assert!(matches!(parse_annotation_export(&doc, reg()), Err(AnnotationError::Schema(_))));
    }

    #[test]
    fn export_bad_label() {
        let doc = r#"[{"clip": "c.mp4", "result": [{"start": 0, "end": 1, "labels": ["setup.suturing.stitching"]}]}]"#;
        assert!(matches!(parse_annotation_export(doc, reg()), Err(AnnotationError::BadLabel { .. })));
    }

    #[test]
    fn export_inverted_region() {
        let doc = format!(r#"[{{"clip": "c.mp4", "result": [{{"start": 5, "end": 5, "labels": ["{S}"]}}]}}]"#);
        assert!(matches!(parse_annotation_export(&doc, reg()), Err(AnnotationError::Schema(_))));
    }

    #[test]
    fn clip_ids() {
        assert_eq!(clip_id_from_path("/data/upload/12-clipA.mp4"), "12-clipA");
        assert_eq!(clip_id_from_path("clipB"), "clipB");
        assert_eq!(clip_id_from_path("C:\\v\\c.part1.mov"), "c.part1");
    }

    #[test]
    fn offsets_across_clips() {
        let clips = [clip("A", 0, 100.0), clip("B", 1, 50.0)];
        let tl = assemble_timeline("s1", &[raw("B", 10.0, 20.0, S)], &clips).unwrap();
        assert_eq!(tl.total_duration_s, 150.0);
        assert_eq!(tl.segments.len(), 1);
        assert_eq!((tl.segments[0].start_s, tl.segments[0].end_s), (110.0, 120.0));
    }

    #[test]
    fn abutting_same_label_merges() {
        let clips = [clip("A", 0, 100.0)];
        let tl = assemble_timeline("s1", &[raw("A", 30.0, 60.0, S), raw("A", 0.0, 30.0, S)], &clips).unwrap();
        assert_eq!(tl.segments.len(), 1);
        assert_eq!((tl.segments[0].start_s, tl.segments[0].end_s), (0.0, 60.0));
    }

    #[test]
    fn abutting_across_clip_boundary_merges() {
        let clips = [clip("A", 0, 100.0), clip("B", 1, 50.0)];
        let tl = assemble_timeline("s1", &[raw("A", 90.0, 100.0, D), raw("B", 0.0, 5.0, D)], &clips).unwrap();
        assert_eq!(tl.segments.len(), 1);
        assert_eq!((tl.segments[0].start_s, tl.segments[0].end_s), (90.0, 105.0));
    }

    #[test]
    fn overlap_later_start_wins() {
        let clips = [clip("A", 0, 100.0)];
        let raws = [raw("A", 0.0, 40.0, S), raw("A", 30.0, 60.0, D)];
        let tl = assemble_timeline("s1", &raws, &clips).unwrap();
        let got: Vec<_> = tl.segments.iter().map(|s| (s.start_s, s.end_s, s.label)).collect();
        assert_eq!(got, vec![(0.0, 30.0, tri(S)), (30.0, 60.0, tri(D))]);

        // brute-force check on a 0.1 s grid: union preserved, disjoint, rule respected
        for i in 0..=1000 {
            let t = i as f64 * 0.1;
            let hits = tl.segments.iter().filter(|s| s.contains(t)).count();
            assert!(hits <= 1);
            let in_union = raws.iter().any(|r| r.start_s <= t && t < r.end_s);
            assert_eq!(hits == 1, in_union, "t={t}");
            if in_union {
                let expected = if t < 30.0 { tri(S) } else { tri(D) };
                assert_eq!(tl.lookup_label(t).unwrap(), expected);
            }
        }
    }

    #[test]
    fn contained_segment_truncates_container() {
        let clips = [clip("A", 0, 100.0)];
        let tl = assemble_timeline("s1", &[raw("A", 0.0, 100.0, S), raw("A", 30.0, 40.0, D)], &clips).unwrap();
        let got: Vec<_> = tl.segments.iter().map(|s| (s.start_s, s.end_s)).collect();
        assert_eq!(got, vec![(0.0, 30.0), (30.0, 40.0)]);
    }

    #[test]
    fn unknown_clip_and_overrun() {
        let clips = [clip("A", 0, 100.0)];
        assert!(matches!(
            assemble_timeline("s1", &[raw("Z", 0.0, 1.0, S)], &clips),
            Err(AnnotationError::UnknownClip(_))
        ));
        assert!(matches!(
            assemble_timeline("s1", &[raw("A", 90.0, 100.2, S)], &clips),
            Err(AnnotationError::SegmentExceedsClip { .. })
        ));
        let tl = assemble_timeline("s1", &[raw("A", 90.0, 100.04, S)], &clips).unwrap();
        assert_eq!(tl.segments[0].end_s, 100.0);
    }

    #[test]
    fn non_contiguous_parts_rejected() {
        let clips = [clip("A", 0, 10.0), clip("B", 2, 10.0)];
        assert!(matches!(assemble_timeline("s1", &[], &clips), Err(AnnotationError::Manifest(_))));
        let clips = [clip("A", 0, 10.0), clip("B", 0, 10.0)];
        assert!(matches!(assemble_timeline("s1", &[], &clips), Err(AnnotationError::Manifest(_))));
    }

    #[test]
    fn lookup_examples() {
        let clips = [clip("A", 0, 100.0)];
        let tl = assemble_timeline("s1", &[raw("A", 0.0, 30.0, S), raw("A", 30.0, 90.0, D)], &clips).unwrap();
        assert_eq!(tl.lookup_label(45.0).unwrap(), tri(D));
        assert_eq!(tl.lookup_label(30.0).unwrap(), tri(D));
        assert_eq!(tl.lookup_label(0.0).unwrap(), tri(S));
        assert!(matches!(tl.lookup_label(95.0), Err(AnnotationError::Unlabelled(_))));
        assert!(matches!(tl.lookup_label(100.0), Err(AnnotationError::Unlabelled(_))));
        assert!(matches!(tl.lookup_label(100.5), Err(AnnotationError::OutOfRange { .. })));
        assert!(matches!(tl.lookup_label(-0.1), Err(AnnotationError::OutOfRange { .. })));
    }

    #[test]
    fn lookup_empty_timeline() {
        let tl = assemble_timeline("s1", &[], &[clip("A", 0, 10.0)]).unwrap();
        assert!(matches!(tl.lookup_label(0.0), Err(AnnotationError::Unlabelled(_))));
    }

    #[test]
    fn manifest_csv() {
        let text = "surgery_id,clip_id,part_index,duration_s\ns1,A,0,100\ns1,B,1,50.5\n";
        let clips = read_clip_manifest(text.as_bytes()).unwrap();
        assert_eq!(clips[1], ClipManifest { surgery_id: "s1".into(), clip_id: "B".into(), part_index: 1, duration_s: 50.5 });
        let bad = "surgery_id,clip_id,part_index,duration_s\ns1,A,0,0\n";
        assert!(read_clip_manifest(bad.as_bytes()).is_err());
        let mut buf = Vec::new();
        write_clip_manifest(&mut buf, &clips).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "surgery_id,clip_id,part_index,duration_s\ns1,A,0,100.0\ns1,B,1,50.5\n");
    }

    #[test]
    fn assemble_all_groups_by_surgery() {
        let mut clips = vec![clip("A", 0, 10.0)];
        clips.push(ClipManifest { surgery_id: "s0".into(), clip_id: "Q".into(), part_index: 0, duration_s: 5.0 });
        let tls = assemble_all(&[raw("A", 0.0, 1.0, S), raw("Q", 1.0, 2.0, D)], &clips).unwrap();
        assert_eq!(tls.iter().map(|t| t.surgery_id.as_str()).collect::<Vec<_>>(), ["s0", "s1"]);
        assert!(matches!(assemble_all(&[raw("Z", 0.0, 1.0, S)], &clips), Err(AnnotationError::UnknownClip(_))));
    }
}
