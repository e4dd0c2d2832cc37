//! Surrogate segmentation model and image operators.
//!
//! Segmentation is nearest-prototype classification with a softmax head:
//! per pixel, the squared feature distance to each class prototype becomes a
//! logit `-d_c / tau`, and the prediction is the softmax over classes. The
//! per-pixel softmax entropy (normalized by `ln K`) is the model's
//! self-reported uncertainty; healthy frames score near zero while
//! contradictory sensor evidence pushes pixels toward two-class ties worth
//! `ln 2 / ln K` each.
//!
//! The prototype layout in `scene` makes those regimes analytic:
//! * an additive gray shift of `delta` on all RGB channels moves features
//!   along the prototype line by exactly `4 * delta` class spacings, so at
//!   `delta = 0.25` color evidence lands on the *next* prototype while depth
//!   still votes for the true one — an exact two-class tie;
//! * a misaligned depth image produces the same tie at every pixel whose
//!   depth label disagrees with its color label, because depth spacing
//!   equals RGB spacing;
//! * heavy depth noise randomizes the depth vote without touching color.
//!
//! Also provided: wrap-around Gaussian blur, toroidal shifts, Laplacian
//! sharpness, and the edge-correlation search the fusion node runs to
//! re-estimate depth/color alignment.

use crate::pipeline::frames::{DepthImage, FusedFrame, Modality, RgbImage, SegmentationResult};
use crate::scene::{class_prototypes, ClassPrototype, NUM_CLASSES};
use serde::{Deserialize, Serialize};

/// Softmax temperature when both modalities are fused.
pub const TAU_FUSED: f64 = 0.008;
/// Softmax temperature for the color-only model.
pub const TAU_RGB: f64 = 0.005;
/// Softmax temperature for the depth-only model.
pub const TAU_DEPTH: f64 = 0.005;

/// Segmentation model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub tau_fused: f64,
    pub tau_rgb: f64,
    pub tau_depth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { tau_fused: TAU_FUSED, tau_rgb: TAU_RGB, tau_depth: TAU_DEPTH }
    }
}

impl ModelConfig {
    pub fn tau_for(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Fused => self.tau_fused,
            Modality::RgbOnly => self.tau_rgb,
            Modality::DepthOnly => self.tau_depth,
        }
    }
}

/// Runs the model on a fused frame. Panics if the frame is missing the
/// modality it claims to carry — the fusion node guarantees consistency.
pub fn segment(frame: &FusedFrame, config: &ModelConfig) -> SegmentationResult {
    let prototypes = class_prototypes();
    let tau = config.tau_for(frame.modality);
    let (width, height) = match (frame.modality, &frame.rgb, &frame.depth) {
        (Modality::Fused, Some(rgb), Some(depth)) => {
            assert_eq!((rgb.width, rgb.height), (depth.width, depth.height));
            (rgb.width, rgb.height)
        }
        (Modality::RgbOnly, Some(rgb), _) => (rgb.width, rgb.height),
        (Modality::DepthOnly, _, Some(depth)) => (depth.width, depth.height),
        _ => panic!("fused frame missing image for modality {}", frame.modality),
    };

    let n = width * height;
    let mut labels = Vec::with_capacity(n);
    let mut entropy_sum = 0.0;
    let mut distances = [0.0f64; NUM_CLASSES];

    for i in 0..n {
        for (c, proto) in prototypes.iter().enumerate() {
            distances[c] = pixel_distance_sq(frame, i, proto);
        }
        let (label, entropy) = softmax_label_entropy(&distances, tau);
        labels.push(label as u8);
        entropy_sum += entropy;
    }

    SegmentationResult {
        stamp: frame.stamp,
        width,
        height,
        labels,
        mean_entropy: entropy_sum / n as f64,
        modality: frame.modality,
        per_class_logits: None,
    }
}

#[inline]
fn pixel_distance_sq(frame: &FusedFrame, i: usize, proto: &ClassPrototype) -> f64 {
    let mut d = 0.0;
    if frame.modality != Modality::DepthOnly {
        let rgb = frame.rgb.as_ref().expect("rgb present");
        for ch in 0..3 {
            let diff = rgb.data[i * 3 + ch] - proto.rgb[ch];
            d += diff * diff;
        }
    }
    if frame.modality != Modality::RgbOnly {
        let depth = frame.depth.as_ref().expect("depth present");
        let diff = depth.data[i] - proto.depth;
        d += diff * diff;
    }
    d
}

/// Softmax over negative distances, shifted by the minimum distance so the
/// exponentials never overflow.
fn softmax_probabilities(distances: &[f64; NUM_CLASSES], tau: f64) -> [f64; NUM_CLASSES] {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if distances[c] < distances[best] {
            best = c;
        }
    }
    let mut probs = [0.0f64; NUM_CLASSES];
    let mut sum = 0.0;
    for c in 0..NUM_CLASSES {
        let w = ((distances[best] - distances[c]) / tau).exp();
        probs[c] = w;
        sum += w;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Argmin label (first index on exact ties) plus normalized softmax entropy.
fn softmax_label_entropy(distances: &[f64; NUM_CLASSES], tau: f64) -> (usize, f64) {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if distances[c] < distances[best] {
            best = c;
        }
    }
    let probs = softmax_probabilities(distances, tau);
    let mut entropy = 0.0;
    for p in probs {
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    (best, entropy / (NUM_CLASSES as f64).ln())
}

/// The class distribution of one pixel — exactly the distribution whose
/// entropy [`segment`] averages. Exposed so external audits can check it is
/// a proper probability distribution.
pub fn pixel_probabilities(
    frame: &FusedFrame,
    config: &ModelConfig,
    pixel: usize,
) -> [f64; NUM_CLASSES] {
    let prototypes = class_prototypes();
    let tau = config.tau_for(frame.modality);
    let mut distances = [0.0f64; NUM_CLASSES];
    for (c, proto) in prototypes.iter().enumerate() {
        distances[c] = pixel_distance_sq(frame, pixel, proto);
    }
    softmax_probabilities(&distances, tau)
}

/// Adds `delta` to every channel of every pixel. Deliberately unclamped so
/// a later shift of `-delta` restores the image exactly.
pub fn apply_color_shift(image: &mut RgbImage, delta: f64) {
    for v in &mut image.data {
        *v += delta;
    }
}

/// Toroidal translation: the content at `(x, y)` moves to `(x+dx, y+dy)`.
pub fn wrap_shift<T: Copy + Default>(
    data: &[T],
    width: usize,
    height: usize,
    dx: i64,
    dy: i64,
) -> Vec<T> {
    assert_eq!(data.len(), width * height);
    let mut out = vec![T::default(); data.len()];
    for y in 0..height {
        let src_y = (y as i64 - dy).rem_euclid(height as i64) as usize;
        for x in 0..width {
            let src_x = (x as i64 - dx).rem_euclid(width as i64) as usize;
            out[y * width + x] = data[src_y * width + src_x];
        }
    }
    out
}

/// `wrap_shift` specialised to depth images.
pub fn wrap_shift_depth(image: &DepthImage, dx: i64, dy: i64) -> DepthImage {
    DepthImage {
        width: image.width,
        height: image.height,
        data: wrap_shift(&image.data, image.width, image.height, dx, dy),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f64> =
        (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}

fn blur_plane(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let mut horizontal = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = (x as i64 + k as i64 - radius).rem_euclid(width as i64) as usize;
                acc += w * data[y * width + sx];
            }
            horizontal[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sy = (y as i64 + k as i64 - radius).rem_euclid(height as i64) as usize;
                acc += w * horizontal[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with toroidal boundary handling.
/// `sigma <= 0` returns the input unchanged.
pub fn gaussian_blur_rgb(image: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let n = image.width * image.height;
    let mut out = RgbImage::new(image.width, image.height);
    for ch in 0..3 {
        let plane: Vec<f64> = (0..n).map(|i| image.data[i * 3 + ch]).collect();
        let blurred = blur_plane(&plane, image.width, image.height, &kernel);
        for (i, v) in blurred.into_iter().enumerate() {
            out.data[i * 3 + ch] = v;
        }
    }
    out
}

/// Discrete 4-neighbour Laplacian with wrap-around boundaries.
pub fn laplacian(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(data.len(), width * height);
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        let up = (y + height - 1) % height;
        let down = (y + 1) % height;
        for x in 0..width {
            let left = (x + width - 1) % width;
            let right = (x + 1) % width;
            out[y * width + x] = 4.0 * data[y * width + x]
                - data[y * width + left]
                - data[y * width + right]
                - data[up * width + x]
                - data[down * width + x];
        }
    }
    out
}

/// Image sharpness: variance of the Laplacian of the luminance plane.
/// Blurring collapses it by more than an order of magnitude.
pub fn sharpness(image: &RgbImage) -> f64 {
    let lap = laplacian(&image.luminance(), image.width, image.height);
    variance(&lap)
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn abs_edge_map(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    laplacian(data, width, height).into_iter().map(f64::abs).collect()
}

/// Estimates the translation that best aligns the depth image to the color
/// image, by exhaustive search over `[-max_shift, max_shift]^2` for the
/// candidate minimizing the MSE between the two absolute-Laplacian edge
/// maps. Because shifts are toroidal, the search recovers an injected
/// misalignment exactly (as its inverse). Ties break toward the smallest
/// displacement, then row-major order.
pub fn estimate_alignment(depth: &DepthImage, rgb: &RgbImage, max_shift: i64) -> (i64, i64) {
    assert_eq!((depth.width, depth.height), (rgb.width, rgb.height));
    let (w, h) = (depth.width, depth.height);
    let depth_edges = abs_edge_map(&depth.data, w, h);
    let rgb_edges = abs_edge_map(&rgb.luminance(), w, h);

    let mut best = (0i64, 0i64);
    let mut best_key = (f64::INFINITY, i64::MAX, i64::MAX, i64::MAX);
    for dy in -max_shift..=max_shift {
        for dx in -max_shift..=max_shift {
            let shifted = wrap_shift(&depth_edges, w, h, dx, dy);
            let mse: f64 = shifted
                .iter()
                .zip(&rgb_edges)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (w * h) as f64;
            let key = (mse, dx * dx + dy * dy, dy, dx);
            if key < best_key {
                best_key = key;
                best = (dx, dy);
            }
        }
    }
    best
}
