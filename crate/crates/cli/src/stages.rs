//! Pipeline stages. Each reads its inputs from the configured paths or from
//! the artifacts of earlier stages under the output root, and overwrites its
//! own artifacts, so re-running a stage on unchanged inputs reproduces the
//! same bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use esv_core::annotations::{assemble_all, load_clip_manifest, parse_annotation_export, ClipManifest, SurgeryTimeline};
use esv_core::dataset::{decode_frame_filename, emit_dataset, read_labels_csv, EmitOptions, FrameName, SurgeryBatch};
use esv_core::frame::{
    crop_surgical_view, frame_signature, transcode_plan, transcoder_available, Frame, FrameError, FrameSignature,
    KeyframeRecord, KeyframeSelector, TranscodeTask,
};
use esv_core::head::{
    combined_loss, correct_predictions, head_forward, mean_ensemble, FeatureSequence, HeadDims, HeadError, HeadParams,
    LevelScores, TripletProbs,
};
use esv_core::index::{build_index, IndexHandle, LabelSample, LabelSource, TimelineIndex};
use esv_core::metrics::{evaluate_level, EvaluationReport, LevelInput, MetricsError};
use esv_core::{Level, TaxonomyRegistry, Triplet};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::config::{Layout, PipelineConfig};
use crate::error::ForgeError;

/// Side of the grid the 32×32 frame signature is pooled to; the temporal
/// head sees GRID² features per keyframe.
pub const FEATURE_GRID: usize = 4;
pub const FEATURE_WIDTH: usize = FEATURE_GRID * FEATURE_GRID;
/// LSTM layers allocated for random ensemble members.
const RANDOM_MEMBER_LAYERS: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub elapsed_ms: f64,
    pub detail: Value,
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: ForgeError,
}

pub fn run_stage(stage: &'static str, f: impl FnOnce() -> Result<Value, ForgeError>) -> Result<StageReport, StageFailure> {
    let start = Instant::now();
    info!(stage, "stage started");
    match f() {
        Ok(detail) => {
            let elapsed_ms = (start.elapsed().as_secs_f64() * 1e4).round() / 10.0;
            info!(stage, elapsed_ms, detail = %detail, "stage finished");
            Ok(StageReport { stage, elapsed_ms, detail })
        }
        Err(error) => {
            warn!(stage, error = %error, "stage failed");
            Err(StageFailure { stage, error })
        }
    }
}

fn require<'a>(path: Option<&'a PathBuf>, what: &'static str) -> Result<&'a Path, ForgeError> {
    let path = path.ok_or(ForgeError::Unconfigured(what))?;
    if !path.exists() {
        return Err(ForgeError::MissingPath { what, path: path.clone() });
    }
    Ok(path)
}

fn require_artifact(path: PathBuf, what: &'static str) -> Result<PathBuf, ForgeError> {
    if !path.exists() {
        return Err(ForgeError::MissingPath { what, path });
    }
    Ok(path)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ForgeError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| ForgeError::artifact(path, e))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: PathBuf, what: &'static str) -> Result<T, ForgeError> {
    let path = require_artifact(path, what)?;
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| ForgeError::artifact(path, e))
}

fn clear_dir(dir: &Path) -> Result<(), ForgeError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_manifest(cfg: &PipelineConfig) -> Result<Vec<ClipManifest>, ForgeError> {
    let mut clips = load_clip_manifest(require(cfg.paths.clips.as_ref(), "paths.clips")?)?;
    clips.sort_by(|a, b| (&a.surgery_id, a.part_index).cmp(&(&b.surgery_id, b.part_index)));
    Ok(clips)
}

pub fn import(cfg: &PipelineConfig) -> Result<Value, ForgeError> {
    let registry = TaxonomyRegistry::builtin();
    let export = require(cfg.paths.annotations.as_ref(), "paths.annotations")?;
    let clips = load_manifest(cfg)?;
    let raws = parse_annotation_export(&fs::read_to_string(export)?, registry)?;
    let timelines = assemble_all(&raws, &clips)?;
    write_json(&cfg.layout()?.timelines(), &timelines)?;
    Ok(json!({
        "surgeries": timelines.len(),
        "clips": clips.len(),
        "regions": raws.len(),
        "segments": timelines.iter().map(|t| t.segments.len()).sum::<usize>(),
        "labelled_s": timelines.iter().map(SurgeryTimeline::labelled_duration_s).sum::<f64>(),
    }))
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, ForgeError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

/// Decoded frames of one clip, exporting them first when only the video
/// exists and the transcoder is enabled.
fn clip_frame_dir(cfg: &PipelineConfig, layout: &Layout, clip: &ClipManifest) -> Result<PathBuf, ForgeError> {
    if let Some(root) = &cfg.paths.frames {
        let dir = root.join(&clip.surgery_id).join(&clip.clip_id);
        if dir.is_dir() {
            return Ok(dir);
        }
        if !cfg.transcode.enabled {
            return Err(ForgeError::MissingPath { what: "clip frame directory", path: dir });
        }
    }
    let videos = cfg.paths.videos.as_ref().ok_or(ForgeError::Unconfigured("paths.frames"))?;
    let video = videos.join(&clip.surgery_id).join(format!("{}.mp4", clip.clip_id));
    if !video.is_file() {
        return Err(ForgeError::MissingPath { what: "clip video", path: video });
    }
    let out = layout.exported_frames().join(&clip.surgery_id).join(&clip.clip_id);
    clear_dir(&out)?;
    let task = TranscodeTask::FrameExport {
        output_dir: out.clone(),
        fps: cfg.keyframes.fps,
    };
    transcode_plan(&video, &task)?.run()?;
    Ok(out)
}

struct ClipKeyframes {
    frames: usize,
    blank: usize,
    records: Vec<KeyframeRecord>,
}

fn clip_keyframes(cfg: &PipelineConfig, layout: &Layout, clip: &ClipManifest) -> Result<ClipKeyframes, ForgeError> {
    let dir = clip_frame_dir(cfg, layout, clip)?;
    let files = frame_files(&dir)?;
    if files.is_empty() {
        return Err(FrameError::EmptyStream.into());
    }
    let mut selector = KeyframeSelector::new(cfg.keyframes.threshold)?;
    let mut out = ClipKeyframes { frames: files.len(), blank: 0, records: Vec::new() };
    for (i, file) in files.iter().enumerate() {
        let ts = i as f64 / cfg.keyframes.fps;
        let frame = Frame::load(file, ts)?;
        let view = if cfg.keyframes.crop {
            match crop_surgical_view(&frame) {
                Ok(cropped) => cropped,
                Err(FrameError::NoForeground) => {
                    out.blank += 1;
                    frame
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            frame
        };
        let signature = frame_signature(&view);
        if selector.push(ts, &signature)? {
            let record = KeyframeRecord {
                surgery_id: clip.surgery_id.clone(),
                clip_id: clip.clip_id.clone(),
                frame_index: i as u64,
                timestamp_s: ts,
                signature,
            };
            let staged = layout.staging().join(FrameName::for_keyframe(&record)?.encode());
            fs::create_dir_all(staged.parent().expect("encoded names have a directory"))?;
            view.save_png(&staged)?;
            out.records.push(record);
        }
    }
    let last_ts = (files.len() - 1) as f64 / cfg.keyframes.fps;
    if last_ts > clip.duration_s {
        warn!(clip = %clip.clip_id, last_ts, duration_s = clip.duration_s, "frames run past the manifest duration");
    }
    Ok(out)
}

pub fn keyframes(cfg: &PipelineConfig) -> Result<Value, ForgeError> {
    let layout = cfg.layout()?;
    let clips = load_manifest(cfg)?;
    clear_dir(&layout.staging())?;
    let per_clip = clips
        .par_iter()
        .map(|c| clip_keyframes(cfg, &layout, c))
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<&KeyframeRecord> = per_clip.iter().flat_map(|c| &c.records).collect();
    write_json(&layout.keyframes(), &records)?;
    let frames: usize = per_clip.iter().map(|c| c.frames).sum();
    Ok(json!({
        "clips": clips.len(),
        "frames": frames,
        "keyframes": records.len(),
        "blank_frames": per_clip.iter().map(|c| c.blank).sum::<usize>(),
        "selection_rate": records.len() as f64 / frames.max(1) as f64,
    }))
}

pub fn emit(cfg: &PipelineConfig) -> Result<Value, ForgeError> {
    let layout = cfg.layout()?;
    let registry = TaxonomyRegistry::builtin();
    let timelines: Vec<SurgeryTimeline> = read_json(layout.timelines(), "timelines (run import first)")?;
    let keyframes: Vec<KeyframeRecord> = read_json(layout.keyframes(), "keyframes (run keyframes first)")?;

    let mut grouped: BTreeMap<&str, Vec<KeyframeRecord>> =
        timelines.iter().map(|t| (t.surgery_id.as_str(), Vec::new())).collect();
    for k in keyframes {
        let slot = grouped
            .get_mut(k.surgery_id.as_str())
            .ok_or_else(|| ForgeError::artifact(layout.keyframes(), format!("surgery {:?} has no timeline", k.surgery_id)))?;
        slot.push(k);
    }
    let batches: Vec<SurgeryBatch> = timelines
        .iter()
        .map(|t| SurgeryBatch { timeline: t, keyframes: &grouped[t.surgery_id.as_str()] })
        .collect();

    let run_transcoder = cfg.transcode.enabled && transcoder_available();
    if cfg.transcode.enabled && !run_transcoder {
        warn!("transcoder not found; writing the cutout plan only");
    }
    let opts = EmitOptions {
        image_root: layout.staging(),
        videos_root: cfg.paths.videos.clone(),
        run_transcoder,
    };
    clear_dir(&layout.dataset())?;
    let m = emit_dataset(&batches, registry, &layout.dataset(), &opts)?;
    Ok(json!({
        "rows": m.rows,
        "keyframes": m.keyframes,
        "dropped": m.dropped,
        "cutouts": m.cutouts,
        "cutouts_cut": run_transcoder,
    }))
}

/// Mean luma of each cell of a GRID×GRID partition of a square signature.
pub fn pooled_features(signature: &FrameSignature) -> Option<Vec<f64>> {
    let v = signature.as_slice();
    let side = (v.len() as f64).sqrt().round() as usize;
    if side * side != v.len() || side < FEATURE_GRID {
        return None;
    }
    let mut sums = [0.0; FEATURE_WIDTH];
    let mut counts = [0usize; FEATURE_WIDTH];
    for y in 0..side {
        for x in 0..side {
            let cell = (y * FEATURE_GRID / side) * FEATURE_GRID + x * FEATURE_GRID / side;
            sums[cell] += v[y * side + x];
            counts[cell] += 1;
        }
    }
    Some(sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect())
}

fn ensemble_members(cfg: &PipelineConfig, registry: &TaxonomyRegistry) -> Result<Vec<HeadParams>, ForgeError> {
    let widths = [registry.len(Level::Phase), registry.len(Level::Task), registry.len(Level::Action)];
    let members: Vec<HeadParams> = if cfg.paths.params.is_empty() {
        let dims = HeadDims {
            input: FEATURE_WIDTH,
            hidden: cfg.inference.hidden,
            layers: RANDOM_MEMBER_LAYERS,
            widths,
        };
        (0..cfg.inference.ensemble as u64)
            .map(|m| HeadParams::random(dims, cfg.inference.seed.wrapping_add(m)))
            .collect()
    } else {
        cfg.paths
            .params
            .iter()
            .map(|p| HeadParams::load(require(Some(p), "parameter file")?).map_err(ForgeError::from))
            .collect::<Result<_, _>>()?
    };
    for p in &members {
        p.validate()?;
        if p.input_width() != FEATURE_WIDTH || p.widths != widths {
            return Err(HeadError::DimensionMismatch(format!(
                "parameters take {} features into {:?}, pipeline needs {FEATURE_WIDTH} into {widths:?}",
                p.input_width(),
                p.widths
            ))
            .into());
        }
    }
    Ok(members)
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub filename: String,
    pub surgery_id: String,
    pub label: Triplet,
    pub probs: TripletProbs,
}

fn prediction_header(registry: &TaxonomyRegistry) -> Vec<String> {
    let mut header: Vec<String> = [
        "filename",
        "surgery_id",
        "predicted_label",
        "predicted_phase_label",
        "predicted_task_label",
        "predicted_action_label",
    ]
    .map(String::from)
    .to_vec();
    for level in Level::ALL {
        header.extend(registry.slugs(level).iter().map(|s| format!("p_{level}_{s}")));
    }
    header
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow], registry: &TaxonomyRegistry) -> Result<(), ForgeError> {
    let csv_err = |e: csv::Error| ForgeError::artifact(path, e);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(prediction_header(registry)).map_err(csv_err)?;
    for r in rows {
        let slug = |level| registry.slug_of(level, r.label.ordinal(level)).expect("registered").to_string();
        let mut rec = vec![
            r.filename.clone(),
            r.surgery_id.clone(),
            registry.format_triplet(&r.label),
            slug(Level::Phase),
            slug(Level::Task),
            slug(Level::Action),
        ];
        rec.extend(r.probs.concat().iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path, registry: &TaxonomyRegistry) -> Result<Vec<PredictionRow>, ForgeError> {
    let bad = |msg: String| ForgeError::artifact(path, msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if header != prediction_header(registry) {
        return Err(bad("unexpected header".into()));
    }
    let widths = [registry.len(Level::Phase), registry.len(Level::Task), registry.len(Level::Action)];
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let probs: Vec<f64> = rec
            .iter()
            .skip(6)
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        rows.push(PredictionRow {
            filename: rec[0].to_string(),
            surgery_id: rec[1].to_string(),
            label: registry.parse_triplet(&rec[2])?,
            probs: LevelScores::from_concat(&probs, widths)?,
        });
    }
    Ok(rows)
}

/// Consecutive runs of equal surgery id, as index ranges.
fn surgery_runs<T>(rows: &[T], id: impl Fn(&T) -> &str) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match out.last_mut() {
            Some(run) if id(&rows[run.start]) == id(r) => run.end = i + 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}

pub fn infer(cfg: &PipelineConfig) -> Result<Value, ForgeError> {
    let layout = cfg.layout()?;
    let registry = TaxonomyRegistry::builtin();
    let rows = read_labels_csv(&require_artifact(layout.labels_csv(), "dataset labels (run emit first)")?)?;
    let keyframes: Vec<KeyframeRecord> = read_json(layout.keyframes(), "keyframes (run keyframes first)")?;
    let members = ensemble_members(cfg, registry)?;

    let features: HashMap<String, Vec<f64>> = keyframes
        .iter()
        .map(|k| {
            let name = FrameName::for_keyframe(k)?.encode();
            let f = pooled_features(&k.signature)
                .ok_or_else(|| ForgeError::artifact(layout.keyframes(), format!("{name}: signature is not a square grid")))?;
            Ok((name, f))
        })
        .collect::<Result<_, ForgeError>>()?;
    let mut located = Vec::with_capacity(rows.len());
    for row in &rows {
        let name = decode_frame_filename(&row.filename)?;
        let f = features
            .get(&row.filename)
            .ok_or_else(|| ForgeError::artifact(layout.labels_csv(), format!("{} has no keyframe record", row.filename)))?;
        located.push((name.surgery_id, row.filename.clone(), f));
    }

    let window = cfg.inference.window;
    let runs = surgery_runs(&located, |r| r.0.as_str());
    let per_surgery = runs
        .par_iter()
        .map(|run| {
            let part = &located[run.clone()];
            let mut probs = Vec::with_capacity(part.len());
            let mut raw = Vec::with_capacity(part.len());
            for i in 0..part.len() {
                let lo = (i + 1).saturating_sub(window);
                let seq_rows: Vec<Vec<f64>> = part[lo..=i].iter().map(|r| r.2.clone()).collect();
                let seq = FeatureSequence::from_rows(&seq_rows)?;
                let member_probs = members
                    .iter()
                    .map(|p| head_forward(&seq, p).map(|l| l.softmax()))
                    .collect::<Result<Vec<_>, _>>()?;
                let p = mean_ensemble(&member_probs)?;
                raw.push(p.predict(registry)?);
                probs.push(p);
            }
            let labels: Vec<Triplet> = raw.iter().map(|r| r.0).collect();
            let corrected = correct_predictions(&labels, cfg.inference.smoothing_k, registry)?;
            let changed = labels.iter().zip(&corrected.labels).filter(|(a, b)| a != b).count();
            let repaired = raw.iter().filter(|r| r.1).count() + corrected.repairs;
            let out: Vec<PredictionRow> = part
                .iter()
                .zip(corrected.labels)
                .zip(probs)
                .map(|((r, label), probs)| PredictionRow {
                    filename: r.1.clone(),
                    surgery_id: r.0.clone(),
                    label,
                    probs,
                })
                .collect();
            Ok((out, changed, repaired))
        })
        .collect::<Result<Vec<_>, ForgeError>>()?;

    let predictions: Vec<PredictionRow> = per_surgery.iter().flat_map(|s| s.0.iter().cloned()).collect();
    write_predictions(&layout.predictions(), &predictions, registry)?;
    Ok(json!({
        "rows": predictions.len(),
        "surgeries": runs.len(),
        "members": members.len(),
        "smoothed": per_surgery.iter().map(|s| s.1).sum::<usize>(),
        "repaired": per_surgery.iter().map(|s| s.2).sum::<usize>(),
    }))
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    #[serde(flatten)]
    evaluation: &'a EvaluationReport,
    mean_combined_loss: f64,
    loss_weights: esv_core::head::LossWeights,
}

pub fn evaluate(cfg: &PipelineConfig, predictions: Option<&Path>, targets: Option<&Path>) -> Result<Value, ForgeError> {
    let layout = cfg.layout()?;
    let registry = TaxonomyRegistry::builtin();
    let pred_path = predictions.map_or_else(|| layout.predictions(), Path::to_path_buf);
    let target_path = targets.map_or_else(|| layout.labels_csv(), Path::to_path_buf);
    let preds = read_predictions(&require_artifact(pred_path, "predictions (run infer first)")?, registry)?;
    let rows = read_labels_csv(&require_artifact(target_path, "dataset labels (run emit first)")?)?;
    if preds.len() != rows.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), targets: rows.len() }.into());
    }
    let mut targets = Vec::with_capacity(rows.len());
    for (i, (p, r)) in preds.iter().zip(&rows).enumerate() {
        if p.filename != r.filename {
            return Err(ForgeError::Misaligned { row: i + 1, pred: p.filename.clone(), target: r.filename.clone() });
        }
        targets.push(registry.parse_triplet(&r.timeline_label)?);
    }

    let runs = surgery_runs(&preds, |p| p.surgery_id.as_str());
    let mut levels = Vec::new();
    for level in Level::ALL {
        let inputs: Vec<LevelInput> = runs
            .iter()
            .map(|run| LevelInput {
                surgery_id: preds[run.start].surgery_id.clone(),
                preds: preds[run.clone()].iter().map(|p| p.label.ordinal(level)).collect(),
                targets: targets[run.clone()].iter().map(|t| t.ordinal(level)).collect(),
                scores: Some(preds[run.clone()].iter().map(|p| p.probs.get(level).to_vec()).collect()),
            })
            .collect();
        levels.push(evaluate_level(level, &inputs, registry)?);
    }
    let report = EvaluationReport { samples: preds.len(), surgeries: runs.len(), levels };

    // log-probabilities as logits: softmax recovers the probabilities
    let weights = cfg.inference.loss_weights;
    let mut loss = 0.0;
    for (p, t) in preds.iter().zip(&targets) {
        let ln = |v: &[f64]| v.iter().map(|x| x.max(f64::MIN_POSITIVE).ln()).collect::<Vec<_>>();
        let logits = LevelScores { phase: ln(&p.probs.phase), task: ln(&p.probs.task), action: ln(&p.probs.action) };
        loss += combined_loss(&logits, t, &weights)?;
    }
    let mean_loss = loss / preds.len().max(1) as f64;

    let dir = layout.report();
    clear_dir(&dir)?;
    write_json(&dir.join("report.json"), &RunReport { evaluation: &report, mean_combined_loss: mean_loss, loss_weights: weights })?;
    let text = format!("{}\nmean combined loss {mean_loss:.4}\n", report.to_text());
    fs::write(dir.join("report.txt"), text)?;
    let curves = report.write_roc_csv(&dir.join("roc"), registry)?;

    let mut detail = json!({ "samples": report.samples, "surgeries": report.surgeries, "roc_curves": curves, "mean_combined_loss": mean_loss });
    for lr in &report.levels {
        detail[format!("{}_accuracy", lr.level)] = json!(lr.accuracy);
        detail[format!("{}_macro_f1", lr.level)] = json!(lr.macro_f1);
    }
    Ok(detail)
}

/// Per-keyframe labels on the surgery clock, sorted, with repeated
/// timestamps (a keyframe exactly at a clip seam) collapsed to the first.
fn index_samples(cfg: &PipelineConfig, layout: &Layout) -> Result<(Vec<(String, f64, Triplet)>, usize), ForgeError> {
    let registry = TaxonomyRegistry::builtin();
    let timelines: Vec<SurgeryTimeline> = read_json(layout.timelines(), "timelines (run import first)")?;
    let by_id: HashMap<&str, &SurgeryTimeline> = timelines.iter().map(|t| (t.surgery_id.as_str(), t)).collect();
    let labelled: Vec<(String, Triplet)> = match cfg.index.source {
        LabelSource::Annotation => {
            let rows = read_labels_csv(&require_artifact(layout.labels_csv(), "dataset labels (run emit first)")?)?;
            rows.into_iter()
                .map(|r| Ok((r.filename, registry.parse_triplet(&r.timeline_label)?)))
                .collect::<Result<_, ForgeError>>()?
        }
        LabelSource::Prediction => {
            let path = require_artifact(layout.predictions(), "predictions (run infer first)")?;
            read_predictions(&path, registry)?.into_iter().map(|p| (p.filename, p.label)).collect()
        }
    };
    let mut samples = Vec::with_capacity(labelled.len());
    for (filename, label) in labelled {
        let name = decode_frame_filename(&filename)?;
        let tl = by_id
            .get(name.surgery_id.as_str())
            .ok_or_else(|| ForgeError::artifact(layout.timelines(), format!("no timeline for {:?}", name.surgery_id)))?;
        samples.push((name.surgery_id.clone(), tl.global_time(&name.clip_id, name.timestamp_s())?, label));
    }
    samples.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let before = samples.len();
    samples.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);
    Ok((samples.clone(), before - samples.len()))
}

pub fn index(cfg: &PipelineConfig) -> Result<Value, ForgeError> {
    let layout = cfg.layout()?;
    let (samples, collapsed) = index_samples(cfg, &layout)?;
    let index = build_index(
        samples.iter().map(|(s, t, l)| LabelSample { surgery_id: s, timestamp_s: *t, label: *l }),
        cfg.index.source,
        TaxonomyRegistry::builtin(),
    )?;
    index.persist(&layout.index())?;
    let count = |level| index.surgeries.iter().map(|s| s.level(level).len()).sum::<usize>();
    Ok(json!({
        "source": cfg.index.source,
        "samples": samples.len(),
        "collapsed": collapsed,
        "surgeries": index.surgeries.len(),
        "phase_segments": count(Level::Phase),
        "task_segments": count(Level::Task),
        "action_segments": count(Level::Action),
    }))
}

/// Serves the persisted index until Ctrl-C.
pub fn serve(cfg: &PipelineConfig, index_path: Option<&Path>) -> Result<Value, ForgeError> {
    let registry = TaxonomyRegistry::builtin();
    let path = match index_path {
        Some(p) => p.to_path_buf(),
        None => cfg.layout()?.index(),
    };
    let index = TimelineIndex::load(&require_artifact(path, "index (run index first)")?, registry)?;
    let surgeries = index.surgeries.len();
    let app = esv_service::router(IndexHandle::new(index), Arc::new(registry.clone()), cfg.paths.static_dir.clone())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(esv_service::serve(&cfg.service.bind, app))?;
    Ok(json!({ "bind": cfg.service.bind, "surgeries": surgeries }))
}

/// Checks the raw inputs of a full run before any stage starts.
pub fn check_inputs(cfg: &PipelineConfig) -> Result<(), ForgeError> {
    cfg.output()?;
    require(cfg.paths.annotations.as_ref(), "paths.annotations")?;
    require(cfg.paths.clips.as_ref(), "paths.clips")?;
    match (&cfg.paths.frames, cfg.transcode.enabled) {
        (Some(p), _) => require(Some(p), "paths.frames").map(|_| ()),
        (None, true) => require(cfg.paths.videos.as_ref(), "paths.videos").map(|_| ()),
        (None, false) => Err(ForgeError::Unconfigured("paths.frames")),
    }
}

/// import → keyframes → emit → infer → evaluate → index.
pub fn all(cfg: &PipelineConfig) -> Result<Vec<StageReport>, StageFailure> {
    check_inputs(cfg).map_err(|error| StageFailure { stage: "all", error })?;
    Ok(vec![
        run_stage("import", || import(cfg))?,
        run_stage("keyframes", || keyframes(cfg))?,
        run_stage("emit", || emit(cfg))?,
        run_stage("infer", || infer(cfg))?,
        run_stage("evaluate", || evaluate(cfg, None, None))?,
        run_stage("index", || index(cfg))?,
    ])
}
