use serde::{Deserialize, Serialize};

use super::{cosine_distance, FrameError, FrameSignature};

pub const DEFAULT_KEYFRAME_THRESHOLD: f64 = 0.05;

/// Length of the clip window that ends at each keyframe.
pub const CUTOUT_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRecord {
    pub surgery_id: String,
    pub clip_id: String,
    pub frame_index: u64,
    /// Clip-local seconds.
    pub timestamp_s: f64,
    pub signature: FrameSignature,
}

/// Streaming keyframe rule: the first frame is kept, and every later frame
/// whose cosine distance to the last *kept* frame exceeds the threshold.
#[derive(Debug, Clone)]
pub struct KeyframeSelector {
    threshold: f64,
    anchor: Option<FrameSignature>,
    last_ts: Option<f64>,
}

impl KeyframeSelector {
    pub fn new(threshold: f64) -> Result<Self, FrameError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(FrameError::InvalidThreshold(threshold));
        }
        Ok(Self {
            threshold,
            anchor: None,
            last_ts: None,
        })
    }

    /// Feeds the next frame; returns whether it is a keyframe.
    pub fn push(&mut self, timestamp_s: f64, signature: &FrameSignature) -> Result<bool, FrameError> {
        if let Some(prev) = self.last_ts {
            if !(timestamp_s > prev) {
                return Err(FrameError::NonMonotonic { prev, next: timestamp_s });
            }
        }
        self.last_ts = Some(timestamp_s);
        let keep = match &self.anchor {
            None => true,
            Some(anchor) => cosine_distance(anchor, signature)? > self.threshold,
        };
        if keep {
            self.anchor = Some(signature.clone());
        }
        Ok(keep)
    }
}

/// Runs [`KeyframeSelector`] over one clip's frames in order. The frame
/// index is the position within `stream`.
pub fn select_keyframes<I>(
    surgery_id: &str,
    clip_id: &str,
    stream: I,
    threshold: f64,
) -> Result<Vec<KeyframeRecord>, FrameError>
where
    I: IntoIterator<Item = (f64, FrameSignature)>,
{
    let mut selector = KeyframeSelector::new(threshold)?;
    let mut out = Vec::new();
    let mut seen = false;
    for (index, (ts, sig)) in stream.into_iter().enumerate() {
        seen = true;
        if selector.push(ts, &sig)? {
            out.push(KeyframeRecord {
                surgery_id: surgery_id.to_string(),
                clip_id: clip_id.to_string(),
                frame_index: index as u64,
                timestamp_s: ts,
                signature: sig,
            });
        }
    }
    if !seen {
        return Err(FrameError::EmptyStream);
    }
    Ok(out)
}

/// Stream-copy window ending at a keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoutSpec {
    pub source_clip: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub output_name: String,
}

/// `(start, duration)` of the window of at most 30 s that ends at
/// `keyframe_ts`, clamped at the clip start.
pub fn cutout_window(keyframe_ts: f64) -> (f64, f64) {
    let start = (keyframe_ts - CUTOUT_SECONDS).max(0.0);
    let duration = (keyframe_ts - start).min(CUTOUT_SECONDS);
    (start, duration)
}

impl CutoutSpec {
    pub fn for_keyframe(source_clip: &str, keyframe_ts: f64, output_name: String) -> Self {
        let (start_s, duration_s) = cutout_window(keyframe_ts);
        Self {
            source_clip: source_clip.to_string(),
            start_s,
            duration_s,
            output_name,
        }
    }
}
