use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use esv_core::frame::DEFAULT_KEYFRAME_THRESHOLD;
use esv_core::head::LossWeights;
use esv_core::index::LabelSource;
use serde::{Deserialize, Serialize};

use crate::error::ForgeError;

/// Everything a pipeline run reads. Loaded from TOML; relative paths are
/// resolved against the directory holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub keyframes: KeyframeConfig,
    pub inference: InferenceConfig,
    pub index: IndexConfig,
    pub service: ServiceConfig,
    pub transcode: TranscodeConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Decoded frames as `FRAMES/SURGERY/CLIP/frame_NNNNNN.png`.
    pub frames: Option<PathBuf>,
    /// Source clips as `VIDEOS/SURGERY/CLIP.mp4`. Only read when the
    /// transcoder is enabled.
    pub videos: Option<PathBuf>,
    /// Annotation tool export (JSON).
    pub annotations: Option<PathBuf>,
    /// Clip manifest CSV: surgery_id, clip_id, part_index, duration_s.
    pub clips: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Temporal-head parameter files, one per ensemble member. Empty means a
    /// seeded random ensemble.
    pub params: Vec<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    /// Cosine distance above which a frame becomes a keyframe, in [0, 2].
    pub threshold: f64,
    /// Frame rate of the decoded frame directories.
    pub fps: f64,
    pub crop: bool,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_KEYFRAME_THRESHOLD,
            fps: 25.0,
            crop: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub smoothing_k: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// Keyframes per input sequence (the current one and its predecessors).
    pub window: usize,
    pub hidden: usize,
    pub loss_weights: LossWeights,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            smoothing_k: 1,
            ensemble: 3,
            seed: 7,
            window: 8,
            hidden: 24,
            loss_weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub source: LabelSource,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            source: LabelSource::Annotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscodeConfig {
    /// Cut clips and export frames with the external transcoder.
    pub enabled: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ForgeError> {
        toml::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ForgeError> {
        let text = std::fs::read_to_string(path).map_err(|_| ForgeError::MissingPath {
            what: "config file",
            path: path.to_path_buf(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |msg: String| Err(ForgeError::Config(msg));
        let k = &self.keyframes;
        if !(0.0..=2.0).contains(&k.threshold) {
            return bad(format!("keyframes.threshold {} outside [0, 2]", k.threshold));
        }
        if !(k.fps.is_finite() && k.fps > 0.0) {
            return bad(format!("keyframes.fps {} must be positive", k.fps));
        }
        let i = &self.inference;
        if i.smoothing_k < 1 {
            return bad("inference.smoothing_k must be at least 1".into());
        }
        if i.ensemble < 1 && self.paths.params.is_empty() {
            return bad("inference.ensemble must be at least 1".into());
        }
        if i.window < 1 || i.hidden < 1 {
            return bad("inference.window and inference.hidden must be at least 1".into());
        }
        let w = i.loss_weights;
        LossWeights::new(w.alpha, w.beta, w.gamma).map_err(|e| ForgeError::Config(format!("inference.loss_weights: {e}")))?;
        if self.service.bind.parse::<SocketAddr>().is_err() {
            return bad(format!("service.bind {:?} is not an ip:port address", self.service.bind));
        }
        Ok(())
    }

    pub fn output(&self) -> Result<&Path, ForgeError> {
        self.paths.output.as_deref().ok_or(ForgeError::Unconfigured("paths.output"))
    }

    pub fn layout(&self) -> Result<Layout, ForgeError> {
        Ok(Layout::new(self.output()?))
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.frames,
            &mut self.videos,
            &mut self.annotations,
            &mut self.clips,
            &mut self.output,
            &mut self.static_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.params.iter_mut().for_each(fix);
    }
}

/// Artifact locations under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn timelines(&self) -> PathBuf {
        self.root.join("timelines.json")
    }

    pub fn keyframes(&self) -> PathBuf {
        self.root.join("keyframes.json")
    }

    pub fn staging(&self) -> PathBuf {
        self.root.join("staging")
    }

    /// Frames exported by the transcoder when no decoded frames exist.
    pub fn exported_frames(&self) -> PathBuf {
        self.root.join("work").join("frames")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn labels_csv(&self) -> PathBuf {
        self.dataset().join(esv_core::dataset::LABELS_CSV)
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.json")
    }
}
