//! Dataset layout on disk.
//!
//! ```text
//! ROOT/
//!   videos/                       transcoded source clips (when produced)
//!   frames/SURGERY/*.png          one image per labelled keyframe
//!   cutouts/SURGERY/*.mp4         30 s windows ending at each keyframe
//!   cutouts/cutouts.csv           cutout plan, one line per keyframe
//!   cutout-frames/SURGERY/STEM/   frames decoded from each cutout
//!   timeline_labels.csv
//!   dataset_manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotationError, SurgeryTimeline};
use crate::frame::{transcode_plan, CutoutSpec, FrameError, KeyframeRecord, TranscodeTask};
use crate::taxonomy::{Level, TaxonomyRegistry};

pub const LABELS_CSV: &str = "timeline_labels.csv";
pub const MANIFEST_JSON: &str = "dataset_manifest.json";
pub const CUTOUT_PLAN_CSV: &str = "cutouts.csv";

pub const CSV_HEADER: [&str; 6] = [
    "filename",
    "timeline_label",
    "timeline_phase_label",
    "timeline_task_label",
    "timeline_action_label",
    "time_to_finish",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("time {t} outside [0, {total}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("malformed frame filename {0:?}")]
    MalformedFilename(String),
    #[error("invalid filename component {0:?}")]
    InvalidComponent(String),
    #[error("keyframe belongs to surgery {found:?}, expected {expected:?}")]
    SurgeryMismatch { expected: String, found: String },
    #[error("keyframe image missing: {0}")]
    MissingImage(PathBuf),
    #[error("malformed labels csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Seconds left in the surgery at time `t`.
pub fn remaining_time(total_duration_s: f64, t: f64) -> Result<f64, DatasetError> {
    if !(0.0..=total_duration_s).contains(&t) {
        return Err(DatasetError::OutOfRange { t, total: total_duration_s });
    }
    Ok(total_duration_s - t)
}

/// Identity of one keyframe file: `SURGERY/CLIP_frame_NNNNNN_ts_MMMMMMMMM.png`
/// with the clip-local timestamp in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameName {
    pub surgery_id: String,
    pub clip_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

fn check_component(s: &str) -> Result<(), DatasetError> {
    if s.is_empty() || s.chars().any(|c| matches!(c, '/' | '\\' | ',' | '"') || c.is_whitespace() || c.is_control()) {
        return Err(DatasetError::InvalidComponent(s.to_string()));
    }
    Ok(())
}

fn filename_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([^/]+)/([^/]+)_frame_(\d{6,})_ts_(\d{9,})\.png$").expect("valid regex"))
}

impl FrameName {
    pub fn new(surgery_id: &str, clip_id: &str, frame_index: u64, timestamp_s: f64) -> Result<Self, DatasetError> {
        check_component(surgery_id)?;
        check_component(clip_id)?;
        if !(timestamp_s >= 0.0 && timestamp_s.is_finite()) {
            return Err(DatasetError::InvalidComponent(timestamp_s.to_string()));
        }
        Ok(Self {
            surgery_id: surgery_id.to_string(),
            clip_id: clip_id.to_string(),
            frame_index,
            timestamp_ms: (timestamp_s * 1000.0).round() as u64,
        })
    }

    pub fn for_keyframe(k: &KeyframeRecord) -> Result<Self, DatasetError> {
        Self::new(&k.surgery_id, &k.clip_id, k.frame_index, k.timestamp_s)
    }

    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_ms as f64 / 1000.0
    }

    /// File name without the surgery directory or extension.
    pub fn stem(&self) -> String {
        format!("{}_frame_{:06}_ts_{:09}", self.clip_id, self.frame_index, self.timestamp_ms)
    }

    pub fn encode(&self) -> String {
        format!("{}/{}.png", self.surgery_id, self.stem())
    }

    pub fn decode(name: &str) -> Result<Self, DatasetError> {
        let caps = filename_pattern()
            .captures(name)
            .ok_or_else(|| DatasetError::MalformedFilename(name.to_string()))?;
        let num = |i: usize| {
            caps[i]
                .parse::<u64>()
                .map_err(|_| DatasetError::MalformedFilename(name.to_string()))
        };
        Ok(Self {
            surgery_id: caps[1].to_string(),
            clip_id: caps[2].to_string(),
            frame_index: num(3)?,
            timestamp_ms: num(4)?,
        })
    }
}

pub fn encode_frame_filename(surgery: &str, clip: &str, frame_index: u64, timestamp_s: f64) -> Result<String, DatasetError> {
    Ok(FrameName::new(surgery, clip, frame_index, timestamp_s)?.encode())
}

pub fn decode_frame_filename(name: &str) -> Result<FrameName, DatasetError> {
    FrameName::decode(name)
}

/// One line of `timeline_labels.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub filename: String,
    pub timeline_label: String,
    pub timeline_phase_label: String,
    pub timeline_task_label: String,
    pub timeline_action_label: String,
    pub time_to_finish: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurgeryCounts {
    pub keyframes: usize,
    pub cutouts: usize,
    pub rows: usize,
    pub dropped: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub keyframes: usize,
    pub cutouts: usize,
    pub rows: usize,
    /// Keyframes that fell into unlabelled gaps.
    pub dropped: usize,
    pub per_surgery: BTreeMap<String, SurgeryCounts>,
}

pub struct SurgeryBatch<'a> {
    pub timeline: &'a SurgeryTimeline,
    pub keyframes: &'a [KeyframeRecord],
}

#[derive(Debug, Clone, Default)]
pub struct EmitOptions {
    /// Directory holding staged keyframe images under their encoded names.
    pub image_root: PathBuf,
    /// Source clips as `VIDEOS/SURGERY/CLIP.mp4`; cutouts are cut only when
    /// this is set and `run_transcoder` is on.
    pub videos_root: Option<PathBuf>,
    pub run_transcoder: bool,
}

struct Emitted {
    rows: Vec<DatasetRow>,
    cutouts: Vec<(String, CutoutSpec)>,
    counts: SurgeryCounts,
}

fn emit_surgery(
    batch: &SurgeryBatch<'_>,
    registry: &TaxonomyRegistry,
    out_root: &Path,
    opts: &EmitOptions,
) -> Result<Emitted, DatasetError> {
    let tl = batch.timeline;
    let mut located = Vec::with_capacity(batch.keyframes.len());
    for k in batch.keyframes {
        if k.surgery_id != tl.surgery_id {
            return Err(DatasetError::SurgeryMismatch {
                expected: tl.surgery_id.clone(),
                found: k.surgery_id.clone(),
            });
        }
        let global = tl.global_time(&k.clip_id, k.timestamp_s)?;
        if !(0.0..=tl.total_duration_s).contains(&global) {
            return Err(DatasetError::OutOfRange { t: global, total: tl.total_duration_s });
        }
        located.push((global, k));
    }
    located.sort_by(|a, b| a.0.total_cmp(&b.0));

    let frames_dir = out_root.join("frames").join(&tl.surgery_id);
    fs::create_dir_all(&frames_dir)?;

    let mut out = Emitted {
        rows: Vec::new(),
        cutouts: Vec::new(),
        counts: SurgeryCounts {
            duration_s: tl.total_duration_s,
            ..Default::default()
        },
    };
    for (global, k) in located {
        let label = match tl.lookup_label(global) {
            Ok(label) => label,
            Err(AnnotationError::Unlabelled(_)) => {
                out.counts.dropped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let name = FrameName::for_keyframe(k)?;
        let filename = name.encode();
        let staged = opts.image_root.join(&filename);
        if !staged.is_file() {
            return Err(DatasetError::MissingImage(staged));
        }
        fs::copy(&staged, out_root.join("frames").join(&filename))?;
        out.counts.keyframes += 1;

        let cutout_name = format!("{}/{}.mp4", tl.surgery_id, name.stem());
        out.cutouts.push((filename.clone(), CutoutSpec::for_keyframe(&k.clip_id, k.timestamp_s, cutout_name)));
        out.counts.cutouts += 1;

        let slug = |level: Level| registry.slug_of(level, label.ordinal(level)).expect("registered").to_string();
        out.rows.push(DatasetRow {
            filename,
            timeline_label: registry.format_triplet(&label),
            timeline_phase_label: slug(Level::Phase),
            timeline_task_label: slug(Level::Task),
            timeline_action_label: slug(Level::Action),
            time_to_finish: remaining_time(tl.total_duration_s, global)?,
        });
        out.counts.rows += 1;
    }
    Ok(out)
}

fn cut_clips(out_root: &Path, videos_root: &Path, surgery: &str, cutouts: &[(String, CutoutSpec)]) -> Result<(), DatasetError> {
    fs::create_dir_all(out_root.join("cutouts").join(surgery))?;
    for (_, spec) in cutouts {
        let clip = videos_root.join(surgery).join(format!("{}.mp4", spec.source_clip));
        let output = out_root.join("cutouts").join(&spec.output_name);
        transcode_plan(&clip, &TranscodeTask::Cutout { spec: spec.clone(), output: output.clone() })?.run()?;
        let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let frames = out_root.join("cutout-frames").join(surgery).join(stem);
        fs::create_dir_all(&frames)?;
        transcode_plan(&output, &TranscodeTask::FrameExport { output_dir: frames, fps: 1.0 })?.run()?;
    }
    Ok(())
}

fn fmt_secs(v: f64) -> String {
    format!("{v:.3}")
}

/// Writes `timeline_labels.csv`, rows ordered by (surgery id, surgery time).
pub fn write_labels_csv<W: Write>(writer: W, rows: &[DatasetRow]) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let csv_err = |e: csv::Error| DatasetError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.filename.as_str(),
            &r.timeline_label,
            &r.timeline_phase_label,
            &r.timeline_task_label,
            &r.timeline_action_label,
            &fmt_secs(r.time_to_finish),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<DatasetRow>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DatasetError::Csv(e.to_string()))?;
    let header = rdr.headers().map_err(|e| DatasetError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(DatasetError::Csv(format!("unexpected header {header:?}")));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| DatasetError::Csv(e.to_string())))
        .collect()
}

/// Writes the dataset for every surgery batch under `out_root`.
///
/// Keyframes that land in unlabelled gaps are dropped and counted. Surgeries
/// are processed in parallel; the labels CSV is written once at the end.
pub fn emit_dataset(
    batches: &[SurgeryBatch<'_>],
    registry: &TaxonomyRegistry,
    out_root: &Path,
    opts: &EmitOptions,
) -> Result<DatasetManifest, DatasetError> {
    for dir in ["videos", "frames", "cutouts", "cutout-frames"] {
        fs::create_dir_all(out_root.join(dir))?;
    }
    let mut emitted: Vec<(String, Emitted)> = batches
        .par_iter()
        .map(|b| emit_surgery(b, registry, out_root, opts).map(|e| (b.timeline.surgery_id.clone(), e)))
        .collect::<Result<_, _>>()?;
    emitted.sort_by(|a, b| a.0.cmp(&b.0));

    if opts.run_transcoder {
        if let Some(videos) = &opts.videos_root {
            emitted
                .par_iter()
                .try_for_each(|(sid, e)| cut_clips(out_root, videos, sid, &e.cutouts))?;
        }
    }

    let mut plan = csv::Writer::from_path(out_root.join("cutouts").join(CUTOUT_PLAN_CSV))
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    plan.write_record(["filename", "source_clip", "start_s", "duration_s", "output_name"])
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    let mut rows = Vec::new();
    let mut manifest = DatasetManifest {
        root: out_root.to_path_buf(),
        keyframes: 0,
        cutouts: 0,
        rows: 0,
        dropped: 0,
        per_surgery: BTreeMap::new(),
    };
    for (sid, e) in emitted {
        for (filename, spec) in &e.cutouts {
            plan.write_record([
                filename.as_str(),
                &spec.source_clip,
                &fmt_secs(spec.start_s),
                &fmt_secs(spec.duration_s),
                &spec.output_name,
            ])
            .map_err(|e| DatasetError::Csv(e.to_string()))?;
        }
        manifest.keyframes += e.counts.keyframes;
        manifest.cutouts += e.counts.cutouts;
        manifest.rows += e.counts.rows;
        manifest.dropped += e.counts.dropped;
        manifest.per_surgery.insert(sid, e.counts);
        rows.extend(e.rows);
    }
    plan.flush()?;

    write_labels_csv(fs::File::create(out_root.join(LABELS_CSV))?, &rows)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out_root.join(MANIFEST_JSON), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{assemble_timeline, ClipManifest, RawAnnotationSegment};
    use crate::frame::FrameSignature;

    #[test]
    fn remaining_time_examples() {
        assert_eq!(remaining_time(3600.0, 1200.0).unwrap(), 2400.0);
        assert_eq!(remaining_time(3600.0, 3600.0).unwrap(), 0.0);
        assert!(matches!(remaining_time(3600.0, 3700.0), Err(DatasetError::OutOfRange { .. })));
        assert!(matches!(remaining_time(3600.0, -1.0), Err(DatasetError::OutOfRange { .. })));
    }

    #[test]
    fn filename_example() {
        let name = encode_frame_filename("surg-001", "clipA", 42, 12.345).unwrap();
        assert_eq!(name, "surg-001/clipA_frame_000042_ts_000012345.png");
        let parts = decode_frame_filename(&name).unwrap();
        assert_eq!(parts, FrameName::new("surg-001", "clipA", 42, 12.345).unwrap());
        assert_eq!(parts.timestamp_s(), 12.345);
        assert!(matches!(decode_frame_filename("nonsense.png"), Err(DatasetError::MalformedFilename(_))));
    }

    #[test]
    fn filename_edge_cases() {
        // clip ids may themselves contain the separator words
        let name = encode_frame_filename("s", "a_frame_000001_ts_000000001", 7, 1.0).unwrap();
        let d = decode_frame_filename(&name).unwrap();
        assert_eq!(d.clip_id, "a_frame_000001_ts_000000001");
        assert_eq!(d.frame_index, 7);
        // large indices widen instead of truncating
        let name = encode_frame_filename("s", "c", 12_345_678, 0.0).unwrap();
        assert_eq!(decode_frame_filename(&name).unwrap().frame_index, 12_345_678);
        assert!(encode_frame_filename("a/b", "c", 0, 0.0).is_err());
        assert!(encode_frame_filename("a", "c,d", 0, 0.0).is_err());
        assert!(encode_frame_filename("a", "c", 0, -1.0).is_err());
        assert!(decode_frame_filename("s/c_frame_1_ts_000000001.png").is_err());
    }

    fn fixture(dir: &Path) -> (SurgeryTimeline, Vec<KeyframeRecord>) {
        let reg = TaxonomyRegistry::builtin();
        let clips = [
            ClipManifest { surgery_id: "s1".into(), clip_id: "A".into(), part_index: 0, duration_s: 60.0 },
            ClipManifest { surgery_id: "s1".into(), clip_id: "B".into(), part_index: 1, duration_s: 40.0 },
        ];
        let raws = [
            RawAnnotationSegment { clip_id: "A".into(), start_s: 0.0, end_s: 50.0, label: reg.parse_triplet("setup.scope_setup.scope_insertion").unwrap() },
            RawAnnotationSegment { clip_id: "B".into(), start_s: 0.0, end_s: 40.0, label: reg.parse_triplet("closure.suturing.stitching").unwrap() },
        ];
        let tl = assemble_timeline("s1", &raws, &clips).unwrap();
        let kf = |clip: &str, idx: u64, ts: f64| KeyframeRecord {
            surgery_id: "s1".into(),
            clip_id: clip.into(),
            frame_index: idx,
            timestamp_s: ts,
            signature: FrameSignature::from_vec(vec![1.0]),
        };
        // B's keyframe listed first to check ordering by surgery time
        let keyframes = vec![kf("B", 10, 10.0), kf("A", 0, 0.0), kf("A", 55, 55.0), kf("A", 20, 20.0)];
        for k in &keyframes {
            let p = dir.join("staged").join(FrameName::for_keyframe(k).unwrap().encode());
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(&p, b"png").unwrap();
        }
        (tl, keyframes)
    }

    #[test]
    fn emit_drops_gap_keyframes() {
        let dir = tempfile::tempdir().unwrap();
        let (tl, keyframes) = fixture(dir.path());
        let out = dir.path().join("out");
        let opts = EmitOptions { image_root: dir.path().join("staged"), ..Default::default() };
        let m = emit_dataset(
            &[SurgeryBatch { timeline: &tl, keyframes: &keyframes }],
            TaxonomyRegistry::builtin(),
            &out,
            &opts,
        )
        .unwrap();
        assert_eq!((m.rows, m.keyframes, m.cutouts, m.dropped), (3, 3, 3, 1));

        let rows = read_labels_csv(&out.join(LABELS_CSV)).unwrap();
        let ttf: Vec<f64> = rows.iter().map(|r| r.time_to_finish).collect();
        assert_eq!(ttf, [100.0, 80.0, 30.0]);
        assert_eq!(rows[2].timeline_label, "closure.suturing.stitching");
        assert_eq!(rows[2].filename, "s1/B_frame_000010_ts_000010000.png");
        for r in &rows {
            assert!(out.join("frames").join(&r.filename).is_file());
            assert_eq!(
                r.timeline_label,
                format!("{}.{}.{}", r.timeline_phase_label, r.timeline_task_label, r.timeline_action_label)
            );
        }
        let text = fs::read_to_string(out.join(LABELS_CSV)).unwrap();
        assert!(text.starts_with("filename,timeline_label,timeline_phase_label,timeline_task_label,timeline_action_label,time_to_finish\n"));
        assert!(text.contains(",100.000\n"));
        for d in ["videos", "frames", "cutouts", "cutout-frames"] {
            assert!(out.join(d).is_dir());
        }
        let plan = fs::read_to_string(out.join("cutouts").join(CUTOUT_PLAN_CSV)).unwrap();
        assert_eq!(plan.lines().count(), 4);
    }

    #[test]
    fn emit_empty_keyframes_writes_header() {
        let dir = tempfile::tempdir().unwrap();
        let (tl, _) = fixture(dir.path());
        let out = dir.path().join("out");
        let opts = EmitOptions { image_root: dir.path().join("staged"), ..Default::default() };
        let m = emit_dataset(&[SurgeryBatch { timeline: &tl, keyframes: &[] }], TaxonomyRegistry::builtin(), &out, &opts).unwrap();
        assert_eq!(m.rows, 0);
        let text = fs::read_to_string(out.join(LABELS_CSV)).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_labels_csv(&out.join(LABELS_CSV)).unwrap().is_empty());
    }

    #[test]
    fn emit_missing_image_fails() {
        let dir = tempfile::tempdir().unwrap();
        let (tl, keyframes) = fixture(dir.path());
        let opts = EmitOptions { image_root: dir.path().join("nowhere"), ..Default::default() };
        let r = emit_dataset(
            &[SurgeryBatch { timeline: &tl, keyframes: &keyframes }],
            TaxonomyRegistry::builtin(),
            &dir.path().join("out"),
            &opts,
        );
        assert!(matches!(r, Err(DatasetError::MissingImage(_))));
    }

    #[test]
    fn emit_rejects_keyframe_past_end() {
        let dir = tempfile::tempdir().unwrap();
        let (tl, mut keyframes) = fixture(dir.path());
        keyframes[0].timestamp_s = 45.0; // clip B is only 40 s long
        let opts = EmitOptions { image_root: dir.path().join("staged"), ..Default::default() };
        let r = emit_dataset(
            &[SurgeryBatch { timeline: &tl, keyframes: &keyframes }],
            TaxonomyRegistry::builtin(),
            &dir.path().join("out"),
            &opts,
        );
        assert!(matches!(r, Err(DatasetError::OutOfRange { .. })));
    }
}
