//! Message payload types flowing through the pipeline.
//!
//! Images are dense row-major `f64` buffers in `[0, 1]`. Payloads wrap their
//! frames in `Arc` so fan-out to several subscribers never copies pixel data.

use crate::time::VirtualTime;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Interleaved RGB image; `data.len() == width * height * 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0.0; width * height * 3] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Per-pixel luminance as the channel mean.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|px| (px[0] + px[1] + px[2]) / 3.0)
            .collect()
    }
}

/// Single-channel depth image; `data.len() == width * height`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        DepthImage { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[self.idx(x, y)]
    }
}

/// Which modalities a fused frame (or a segmentation model) carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    RgbOnly,
    DepthOnly,
    Fused,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::RgbOnly => "rgb_only",
            Modality::DepthOnly => "depth_only",
            Modality::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s {
            "rgb_only" | "rgb" => Some(Modality::RgbOnly),
            "depth_only" | "depth" => Some(Modality::DepthOnly),
            "fused" => Some(Modality::Fused),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub stamp: VirtualTime,
    pub image: RgbImage,
    /// Laplacian-variance sharpness of `image`, measured by the publisher so
    /// downstream consumers never recompute it.
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub stamp: VirtualTime,
    pub image: DepthImage,
}

/// Output of the fusion node: the paired modalities it is configured for.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame {
    pub stamp: VirtualTime,
    pub modality: Modality,
    pub rgb: Option<RgbImage>,
    pub depth: Option<DepthImage>,
}

/// Output of the segmentation node.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub stamp: VirtualTime,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    /// Mean over pixels of the per-pixel softmax entropy, normalized by
    /// `ln(num_classes)` so it lies in `[0, 1]` regardless of class count.
    pub mean_entropy: f64,
    pub modality: Modality,
    /// Raw per-pixel logits, retained only when the node's debug flag is set.
    pub per_class_logits: Option<Vec<f64>>,
}

/// Health summary published by the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticStatus {
    /// Highest criticality among current symptoms ("ok" when clear).
    pub level: String,
    /// Symptom descriptions, e.g. `S1@/camera/image`.
    pub symptoms: Vec<String>,
}

/// Everything a bus message can carry.
#[derive(Debug, Clone)]
pub enum Payload {
    Rgb(Arc<RgbFrame>),
    Depth(Arc<DepthFrame>),
    Fused(Arc<FusedFrame>),
    Segmentation(Arc<SegmentationResult>),
    Diagnostics(Arc<DiagnosticStatus>),
    /// Contentless payload for bus-level tests.
    Marker,
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Rgb(_) => "rgb",
            Payload::Depth(_) => "depth",
            Payload::Fused(_) => "fused",
            Payload::Segmentation(_) => "segmentation",
            Payload::Diagnostics(_) => "diagnostics",
            Payload::Marker => "marker",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_indexing_roundtrip() {
        let mut img = RgbImage::new(4, 3);
        img.set_pixel(2, 1, [0.1, 0.2, 0.3]);
        assert_eq!(img.pixel(2, 1), [0.1, 0.2, 0.3]);
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn luminance_is_channel_mean() {
        let mut img = RgbImage::new(1, 1);
        img.set_pixel(0, 0, [0.3, 0.6, 0.9]);
        let lum = img.luminance();
        assert!((lum[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn modality_parse_accepts_short_names() {
        assert_eq!(Modality::parse("rgb"), Some(Modality::RgbOnly));
        assert_eq!(Modality::parse("rgb_only"), Some(Modality::RgbOnly));
        assert_eq!(Modality::parse("fused"), Some(Modality::Fused));
        assert_eq!(Modality::parse("nope"), None);
    }
}
