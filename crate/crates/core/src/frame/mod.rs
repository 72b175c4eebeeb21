//! Frame-level processing: field-of-view crop, visual signatures, keyframe
//! selection, cutout windows and transcoder command planning.
//!
//! Frames arrive as decoded images exported by the external transcoder;
//! nothing in here touches a video codec.

mod crop;
mod keyframes;
mod signature;
mod transcode;

pub use crop::{crop_surgical_view, largest_component, resize_bilinear, ComponentBox, CROP_THRESHOLD};
pub use keyframes::{
    cutout_window, select_keyframes, CutoutSpec, KeyframeRecord, KeyframeSelector, CUTOUT_SECONDS,
    DEFAULT_KEYFRAME_THRESHOLD,
};
pub use signature::{cosine_distance, frame_signature, frame_signature_with, FrameSignature, SIGNATURE_SIDE};
pub use transcode::{
    frame_export_pattern, transcode_plan, transcoder_available, TranscodePlan, TranscodeTask, COMPRESS_BITRATE_BPS,
    TRANSCODER_PROGRAM,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame has zero area or a pixel buffer of the wrong length")]
    InvalidFrame,
    #[error("no foreground above the crop threshold")]
    NoForeground,
    #[error("empty frame stream")]
    EmptyStream,
    #[error("timestamps must be strictly increasing (got {next} after {prev})")]
    NonMonotonic { prev: f64, next: f64 },
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("signature length {found} differs from {expected}")]
    SignatureLength { expected: usize, found: usize },
    #[error("unsupported container {0:?}")]
    UnsupportedContainer(String),
    #[error("transcoder failed: {0}")]
    Transcoder(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

/// A decoded 8-bit image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: Channels,
    pixels: Vec<u8>,
    pub timestamp_s: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: Channels, pixels: Vec<u8>, timestamp_s: f64) -> Result<Self, FrameError> {
        if width == 0 || height == 0 || pixels.len() != width * height * channels.count() {
            return Err(FrameError::InvalidFrame);
        }
        Ok(Self { width, height, channels, pixels, timestamp_s })
    }

    pub fn filled(width: usize, height: usize, channels: Channels, value: u8, timestamp_s: f64) -> Result<Self, FrameError> {
        Self::new(width, height, channels, vec![value; width * height * channels.count()], timestamp_s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels.count();
        let i = (y * self.width + x) * c;
        &self.pixels[i..i + c]
    }

    /// ITU-R BT.601 luma per pixel, in [0, 255].
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            Channels::Gray => self.pixels.iter().map(|&v| v as f64).collect(),
            Channels::Rgb => self
                .pixels
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    pub fn load(path: &Path, timestamp_s: f64) -> Result<Self, FrameError> {
        let img = image::open(path)?;
        let (pixels, channels, w, h) = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                (g.into_raw(), Channels::Gray, w, h)
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                (rgb.into_raw(), Channels::Rgb, w, h)
            }
        };
        Self::new(w as usize, h as usize, channels, pixels, timestamp_s)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), FrameError> {
        let color = match self.channels {
            Channels::Gray => image::ExtendedColorType::L8,
            Channels::Rgb => image::ExtendedColorType::Rgb8,
        };
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(Frame::new(0, 4, Channels::Gray, vec![], 0.0).is_err());
        assert!(Frame::new(2, 2, Channels::Rgb, vec![0; 4], 0.0).is_err());
        assert!(Frame::new(2, 2, Channels::Rgb, vec![0; 12], 0.0).is_ok());
    }

    #[test]
    fn luma_weights() {
        let f = Frame::new(1, 1, Channels::Rgb, vec![255, 0, 0], 0.0).unwrap();
        assert!((f.luma()[0] - 0.299 * 255.0).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let f = Frame::new(4, 3, Channels::Rgb, px, 1.5).unwrap();
        let p = dir.path().join("f.png");
        f.save_png(&p).unwrap();
        assert_eq!(Frame::load(&p, 1.5).unwrap(), f);
    }
}
