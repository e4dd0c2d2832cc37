//! Procedural ground-truth scene generator.
//!
//! A frame is a Voronoi partition of the image plane into drifting cells,
//! each cell bound to one of `K` semantic classes. Every pixel is painted
//! with its class's RGB/depth prototype plus i.i.d. Gaussian pixel noise.
//! Frames are a pure function of `(time, seed)`, so any frame can be
//! regenerated exactly — the evaluation side relies on that to score
//! predictions without shipping masks through the pipeline.
//!
//! The class prototypes are deliberately laid out on a line in color space
//! with matching equal steps in depth. This gives the surrogate model sharp
//! margins on clean frames while making the injected degradations land in
//! well-characterized confusion regions (see `pipeline::model`).

use crate::pipeline::frames::{DepthImage, RgbImage};
use crate::time::VirtualTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Number of semantic classes.
pub const NUM_CLASSES: usize = 5;

/// Per-channel RGB increment between consecutive class prototypes.
///
/// The blue component is chosen so that the summed channel step equals four
/// times the squared step norm; an additive per-channel shift of `delta`
/// then displaces features by exactly `4 * delta` prototype spacings along
/// the prototype line (see `pipeline::model` for why that matters).
pub const RGB_STEP: [f64; 3] = [0.095, 0.095, -0.087_308_737_5];

/// RGB prototype of class 0; class `c` sits at `RGB_BASE + c * RGB_STEP`.
pub const RGB_BASE: [f64; 3] = [0.31, 0.31, 0.69];

/// Squared Euclidean norm of one prototype step in RGB space.
pub fn rgb_step_sq() -> f64 {
    RGB_STEP.iter().map(|s| s * s).sum()
}

/// Depth prototype of class 0.
pub const DEPTH_BASE: f64 = 0.20;

/// Depth increment between consecutive classes, equal to the RGB step norm
/// so that depth disagreement and color disagreement carry the same weight.
pub fn depth_step() -> f64 {
    rgb_step_sq().sqrt()
}

/// Feature-space prototype of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrototype {
    pub rgb: [f64; 3],
    pub depth: f64,
}

/// Prototypes for all classes, index = class id.
pub fn class_prototypes() -> Vec<ClassPrototype> {
    let k = depth_step();
    (0..NUM_CLASSES)
        .map(|c| ClassPrototype {
            rgb: [
                RGB_BASE[0] + c as f64 * RGB_STEP[0],
                RGB_BASE[1] + c as f64 * RGB_STEP[1],
                RGB_BASE[2] + c as f64 * RGB_STEP[2],
            ],
            depth: DEPTH_BASE + c as f64 * k,
        })
        .collect()
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Number of Voronoi cells; each is bound to one class.
    pub cells: usize,
    /// Standard deviation of the per-pixel, per-channel Gaussian noise.
    pub pixel_noise_sigma: f64,
    /// Peak-to-center amplitude of cell centroid drift, in pixels.
    pub drift_amplitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            cells: 16,
            pixel_noise_sigma: 0.015,
            drift_amplitude: 1.5,
        }
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub stamp: VirtualTime,
    pub labels: Vec<u8>,
    pub rgb: RgbImage,
    pub depth: DepthImage,
}

#[derive(Debug, Clone)]
struct Cell {
    origin: (f64, f64),
    omega: (f64, f64),
    phase: (f64, f64),
    class: u8,
}

fn cells_for_seed(spec: &SceneSpec, seed: u64) -> Vec<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5ce9_e001));
    let mut cells: Vec<Cell> = (0..spec.cells)
        .map(|_| Cell {
            origin: (rng.gen::<f64>() * spec.width as f64, rng.gen::<f64>() * spec.height as f64),
            omega: (0.2 + rng.gen::<f64>() * 0.4, 0.2 + rng.gen::<f64>() * 0.4),
            phase: (
                rng.gen::<f64>() * std::f64::consts::TAU,
                rng.gen::<f64>() * std::f64::consts::TAU,
            ),
            class: 0,
        })
        .collect();
    assign_classes_balanced(spec, &mut cells);
    cells
}

/// Binds cells to classes so class areas at t=0 come out as even as the
/// cell layout allows: cells are taken largest-first and each goes to the
/// class with the smallest accumulated area.
fn assign_classes_balanced(spec: &SceneSpec, cells: &mut [Cell]) {
    let positions: Vec<(f64, f64)> =
        cells.iter().map(|c| centroid_at(c, spec.drift_amplitude, 0.0)).collect();
    let mut areas = vec![0usize; cells.len()];
    for y in 0..spec.height {
        for x in 0..spec.width {
            areas[nearest_cell(&positions, x as f64, y as f64)] += 1;
        }
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    let mut class_area = [0usize; NUM_CLASSES];
    for idx in order {
        let class = (0..NUM_CLASSES)
            .min_by_key(|&c| (class_area[c], c))
            .expect("at least one class");
        cells[idx].class = class as u8;
        class_area[class] += areas[idx];
    }
}

fn centroid_at(cell: &Cell, amplitude: f64, t_secs: f64) -> (f64, f64) {
    (
        cell.origin.0 + amplitude * (cell.omega.0 * t_secs + cell.phase.0).sin(),
        cell.origin.1 + amplitude * (cell.omega.1 * t_secs + cell.phase.1).cos(),
    )
}

fn nearest_cell(positions: &[(f64, f64)], x: f64, y: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &(cx, cy)) in positions.iter().enumerate() {
        let d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Class labels of the frame at `stamp` (no pixel noise involved).
pub fn generate_labels(spec: &SceneSpec, seed: u64, stamp: VirtualTime) -> Vec<u8> {
    let cells = cells_for_seed(spec, seed);
    labels_from_cells(spec, &cells, stamp)
}

fn labels_from_cells(spec: &SceneSpec, cells: &[Cell], stamp: VirtualTime) -> Vec<u8> {
    let t = stamp.as_secs_f64();
    let positions: Vec<(f64, f64)> =
        cells.iter().map(|c| centroid_at(c, spec.drift_amplitude, t)).collect();
    let mut labels = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let cell = nearest_cell(&positions, x as f64, y as f64);
            labels.push(cells[cell].class);
        }
    }
    labels
}

/// Full ground truth (labels + noisy sensor images) at `stamp`.
pub fn generate_frame(spec: &SceneSpec, seed: u64, stamp: VirtualTime) -> GroundTruthBundle {
    let cells = cells_for_seed(spec, seed);
    let labels = labels_from_cells(spec, &cells, stamp);
    let prototypes = class_prototypes();

    let mut rgb = RgbImage::new(spec.width, spec.height);
    let mut depth = DepthImage::new(spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x0f0f ^ stamp.millis()));
    let noise = Normal::new(0.0, spec.pixel_noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let noisy = spec.pixel_noise_sigma > 0.0;

    for (i, &label) in labels.iter().enumerate() {
        let proto = prototypes[label as usize];
        let mut px = proto.rgb;
        let mut d = proto.depth;
        if noisy {
            for channel in &mut px {
                *channel = (*channel + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            d = (d + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        rgb.data[i * 3] = px[0];
        rgb.data[i * 3 + 1] = px[1];
        rgb.data[i * 3 + 2] = px[2];
        depth.data[i] = d;
    }

    GroundTruthBundle { stamp, labels, rgb, depth }
}

/// SplitMix64-style seed mixing so the per-purpose RNG streams are
/// independent of each other and of event ordering.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
