//! Argument vectors for the external transcoder (`ffmpeg`).
//!
//! Templates, in argument order:
//!
//! | task          | arguments |
//! |---------------|-----------|
//! | compress      | `-y -i CLIP -c:v libx264 -b:v BPS -maxrate BPS -bufsize 2*BPS -c:a copy OUT` |
//! | blank audio   | `-y -i CLIP -f lavfi -i anullsrc=channel_layout=stereo:sample_rate=48000 -map 0:v -map 1:a -c:v copy -c:a aac -shortest OUT` |
//! | cutout        | `-y -ss START -t DURATION -i CLIP -c copy OUT` |
//! | frame export  | `-y -i CLIP -vf fps=RATE -start_number 0 DIR/frame_%06d.png` |
//!
//! Times are printed with three decimals.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{CutoutSpec, FrameError};

pub const TRANSCODER_PROGRAM: &str = "ffmpeg";

/// Upload bitrate target, 1 Mbps.
pub const COMPRESS_BITRATE_BPS: u64 = 1_000_000;

const CONTAINERS: &[&str] = &["mp4", "m4v", "mov", "mkv", "avi", "webm", "mpg", "mpeg", "ts"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TranscodeTask {
    Compress { output: PathBuf, bitrate_bps: u64 },
    BlankAudio { output: PathBuf, clip_has_audio: bool },
    Cutout { spec: CutoutSpec, output: PathBuf },
    FrameExport { output_dir: PathBuf, fps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscodePlan {
    pub program: String,
    pub args: Vec<String>,
    /// Nothing to do; `run` returns immediately.
    pub noop: bool,
}

impl TranscodePlan {
    pub fn command(&self) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args);
        cmd
    }

    pub fn run(&self) -> Result<(), FrameError> {
        if self.noop {
            return Ok(());
        }
        let out = self
            .command()
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| FrameError::Transcoder(format!("cannot start {}: {e}", self.program)))?;
        if out.status.success() {
            Ok(())
        } else {
            let stderr = String::from_utf8_lossy(&out.stderr);
            let tail: Vec<&str> = stderr.lines().rev().take(5).collect();
            Err(FrameError::Transcoder(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                tail.into_iter().rev().collect::<Vec<_>>().join(" | ")
            )))
        }
    }
}

pub fn frame_export_pattern(dir: &Path) -> PathBuf {
    dir.join("frame_%06d.png")
}

fn secs(v: f64) -> String {
    format!("{v:.3}")
}

fn path_arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn transcode_plan(clip: &Path, task: &TranscodeTask) -> Result<TranscodePlan, FrameError> {
    let ext = clip
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if !CONTAINERS.contains(&ext.as_str()) {
        return Err(FrameError::UnsupportedContainer(path_arg(clip)));
    }
    let input = path_arg(clip);
    let mut noop = false;
    let args: Vec<String> = match task {
        TranscodeTask::Compress { output, bitrate_bps } => {
            let bps = bitrate_bps.to_string();
            vec![
                "-y".into(),
                "-i".into(),
                input,
                "-c:v".into(),
                "libx264".into(),
                "-b:v".into(),
                bps.clone(),
                "-maxrate".into(),
                bps,
                "-bufsize".into(),
                (2 * bitrate_bps).to_string(),
                "-c:a".into(),
                "copy".into(),
                path_arg(output),
            ]
        }
        TranscodeTask::BlankAudio { output, clip_has_audio } => {
            noop = *clip_has_audio;
            vec![
                "-y".into(),
                "-i".into(),
                input,
                "-f".into(),
                "lavfi".into(),
                "-i".into(),
                "anullsrc=channel_layout=stereo:sample_rate=48000".into(),
                "-map".into(),
                "0:v".into(),
                "-map".into(),
                "1:a".into(),
                "-c:v".into(),
                "copy".into(),
                "-c:a".into(),
                "aac".into(),
                "-shortest".into(),
                path_arg(output),
            ]
        }
        TranscodeTask::Cutout { spec, output } => vec![
            "-y".into(),
            "-ss".into(),
            secs(spec.start_s),
            "-t".into(),
            secs(spec.duration_s),
            "-i".into(),
            input,
            "-c".into(),
            "copy".into(),
            path_arg(output),
        ],
        TranscodeTask::FrameExport { output_dir, fps } => vec![
            "-y".into(),
            "-i".into(),
            input,
            "-vf".into(),
            format!("fps={fps}"),
            "-start_number".into(),
            "0".into(),
            path_arg(&frame_export_pattern(output_dir)),
        ],
    };
    Ok(TranscodePlan {
        program: TRANSCODER_PROGRAM.to_string(),
        args,
        noop,
    })
}

/// Whether `ffmpeg` can be started from `PATH`.
pub fn transcoder_available() -> bool {
    Command::new(TRANSCODER_PROGRAM)
        .arg("-version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}
