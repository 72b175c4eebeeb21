//! Procedural fixture: a few multi-clip "surgeries" rendered as decoded
//! frame directories, with hard scene cuts at scripted positions and an
//! annotation export whose regions follow the scenes.
//!
//! Each frame is a disc of 8×8-pixel blocks on a black border, the way an
//! endoscope image sits inside its letterbox. A scene is one two-tone block
//! pattern; frames within a scene differ by per-pixel jitter of ±3.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use esv_core::annotations::{write_clip_manifest, ClipManifest};
use esv_core::frame::{Channels, Frame};
use esv_core::{Level, TaxonomyRegistry, Triplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::ForgeError;

pub const WIDTH: usize = 96;
pub const HEIGHT: usize = 72;
pub const FPS: f64 = 5.0;
const SURGERIES: usize = 3;
const MIN_SCENE_FRAMES: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct FixtureSummary {
    pub config: PathBuf,
    pub surgeries: usize,
    pub clips: usize,
    pub frames: usize,
    /// Scripted cut positions (frame indices) per clip id.
    pub cuts: BTreeMap<String, Vec<usize>>,
    /// Scenes left without an annotation region.
    pub unlabelled_scenes: usize,
}

/// Two-tone block pattern: each block is a random dark or bright tint.
fn scene(rng: &mut ChaCha8Rng) -> Vec<[u8; 3]> {
    let blocks = WIDTH.div_ceil(8) * HEIGHT.div_ceil(8);
    let dark = [rng.random_range(20..=45), rng.random_range(20..=45), rng.random_range(20..=45)];
    let bright = [rng.random_range(190..=230), rng.random_range(190..=230), rng.random_range(190..=230)];
    (0..blocks).map(|_| if rng.random_bool(0.5) { bright } else { dark }).collect()
}

fn render(rng: &mut ChaCha8Rng, blocks: &[[u8; 3]], ts: f64) -> Result<Frame, ForgeError> {
    let (cx, cy) = (WIDTH as f64 / 2.0, HEIGHT as f64 / 2.0);
    let r = HEIGHT as f64 / 2.0 - 2.0;
    let mut px = vec![0u8; WIDTH * HEIGHT * 3];
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let block = blocks[(y / 8) * WIDTH.div_ceil(8) + x / 8];
            for c in 0..3 {
                px[(y * WIDTH + x) * 3 + c] = block[c].saturating_add_signed(rng.random_range(-3..=3));
            }
        }
    }
    Ok(Frame::new(WIDTH, HEIGHT, Channels::Rgb, px, ts)?)
}

/// Random action within `task`; the procedure walks forward through tasks.
fn scene_label(triplets: &[Triplet], task: usize, rng: &mut ChaCha8Rng) -> Triplet {
    let within: Vec<&Triplet> = triplets.iter().filter(|t| t.ordinal(Level::Task) == task).collect();
    *within[rng.random_range(0..within.len())]
}

/// Writes the fixture under `dir` and returns what was scripted.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<FixtureSummary, ForgeError> {
    let registry = TaxonomyRegistry::builtin();
    let triplets = registry.all_triplets();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames_root = dir.join("frames");
    if frames_root.exists() {
        fs::remove_dir_all(&frames_root)?;
    }

    let mut manifest = Vec::new();
    let mut tasks = Vec::new();
    let mut cuts_by_clip = BTreeMap::new();
    let mut frames_total = 0;
    let mut unlabelled = 0;
    for s in 0..SURGERIES {
        let surgery_id = format!("surg-{:02}", s + 1);
        let mut task = 0usize;
        for part in 0..rng.random_range(2..=3u32) {
            let clip_id = format!("s{:02}c{part}", s + 1);
            let n = rng.random_range(60..=110usize);
            let mut cuts = Vec::new();
            let mut at = 0;
            loop {
                at += rng.random_range(MIN_SCENE_FRAMES..=25);
                if at + MIN_SCENE_FRAMES > n {
                    break;
                }
                cuts.push(at);
            }

            let dir = frames_root.join(&surgery_id).join(&clip_id);
            fs::create_dir_all(&dir)?;
            let mut blocks = scene(&mut rng);
            for i in 0..n {
                if cuts.contains(&i) {
                    blocks = scene(&mut rng);
                }
                let frame = render(&mut rng, &blocks, i as f64 / FPS)?;
                frame.save_png(&dir.join(format!("frame_{i:06}.png")))?;
            }
            frames_total += n;

            // one region per scene; the second scene of the second surgery's
            // first clip stays unlabelled
            let mut bounds = vec![0];
            bounds.extend(&cuts);
            bounds.push(n);
            let mut regions = Vec::new();
            for (j, w) in bounds.windows(2).enumerate() {
                if s == 1 && part == 0 && j == 1 {
                    unlabelled += 1;
                    continue;
                }
                let value = json!({
                    "start": w[0] as f64 / FPS,
                    "end": w[1] as f64 / FPS,
                    "labels": [registry.format_triplet(&scene_label(&triplets, task, &mut rng))],
                });
                regions.push(if j % 2 == 0 { json!({ "value": value }) } else { value });
                if rng.random_bool(0.6) {
                    task = (task + 1).min(registry.len(Level::Task) - 1);
                }
            }
            tasks.push(json!({ "clip": format!("videos/{surgery_id}/{clip_id}.mp4"), "result": regions }));
            manifest.push(ClipManifest {
                surgery_id: surgery_id.clone(),
                clip_id: clip_id.clone(),
                part_index: part,
                duration_s: n as f64 / FPS,
            });
            cuts_by_clip.insert(clip_id, cuts);
        }
    }

    fs::write(dir.join("annotations.json"), serde_json::to_string_pretty(&tasks).expect("json") + "\n")?;
    write_clip_manifest(fs::File::create(dir.join("clips.csv"))?, &manifest)?;

    let mut cfg = PipelineConfig::default();
    cfg.paths.frames = Some("frames".into());
    cfg.paths.annotations = Some("annotations.json".into());
    cfg.paths.clips = Some("clips.csv".into());
    cfg.paths.output = Some("out".into());
    cfg.keyframes.fps = FPS;
    let config = dir.join("esv.toml");
    fs::write(&config, cfg.to_toml())?;

    Ok(FixtureSummary {
        config,
        surgeries: SURGERIES,
        clips: manifest.len(),
        frames: frames_total,
        cuts: cuts_by_clip,
        unlabelled_scenes: unlabelled,
    })
}
