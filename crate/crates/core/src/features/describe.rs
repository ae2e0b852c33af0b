//! Steered 256-bit binary descriptors from pairwise intensity tests.

use image::imageops;
use image::GrayImage;

use super::detect::{Keypoint, Pyramid, EDGE};
use super::BinaryDescriptor;

pub const DESCRIPTOR_BITS: usize = 256;
/// Standard deviation of the smoothing applied before sampling.
pub const SMOOTHING_SIGMA: f32 = 2.0;
const PATTERN_SEED: u64 = 0x5eed_b41e_f00d_cafe;
const PATTERN_CLAMP: i32 = 15;

const fn splitmix(state: u64) -> (u64, u64) {
    let s = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = s;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (s, z ^ (z >> 31))
}

/// Approximately Gaussian offset: sum of three uniform draws in [-7, 7],
/// clamped to the pattern radius.
const fn offset(state: u64) -> (u64, i8) {
    let mut s = state;
    let mut sum = 0i32;
    let mut i = 0;
    while i < 3 {
        let (next, z) = splitmix(s);
        s = next;
        sum += (z % 15) as i32 - 7;
        i += 1;
    }
    if sum > PATTERN_CLAMP {
        sum = PATTERN_CLAMP;
    } else if sum < -PATTERN_CLAMP {
        sum = -PATTERN_CLAMP;
    }
    (s, sum as i8)
}

const fn build_pattern() -> [[i8; 4]; DESCRIPTOR_BITS] {
    let mut out = [[0i8; 4]; DESCRIPTOR_BITS];
    let mut s = PATTERN_SEED;
    let mut i = 0;
    while i < DESCRIPTOR_BITS {
        let mut c = 0;
        while c < 4 {
            let (next, v) = offset(s);
            s = next;
            out[i][c] = v;
            c += 1;
        }
        // A test comparing a point with itself carries no information.
        if out[i][0] == out[i][2] && out[i][1] == out[i][3] {
            out[i][2] = -out[i][0];
            out[i][3] = if out[i][1] == 0 { 1 } else { -out[i][1] };
        }
        i += 1;
    }
    out
}

/// Sampling pairs `(x1, y1, x2, y2)` relative to the keypoint, fixed at
/// compile time.
pub const PATTERN: [[i8; 4]; DESCRIPTOR_BITS] = build_pattern();

/// Descriptors for the keypoints that have full support, plus the indices
/// (into `kps`) of the ones that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Described {
    pub descriptors: Vec<BinaryDescriptor>,
    /// Index into the input keypoint list for each descriptor.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Keypoint position in level pixel indices, or `None` if its support
/// leaves the level image.
fn level_position(pyramid: &Pyramid, kp: &Keypoint) -> Option<(i32, i32)> {
    let level = pyramid.levels.get(kp.scale_level)?;
    let lx = (kp.x / level.scale_x - 0.5).round();
    let ly = (kp.y / level.scale_y - 0.5).round();
    let (w, h) = level.image.dimensions();
    let e = EDGE as f64;
    if lx < e || ly < e || lx >= w as f64 - e || ly >= h as f64 - e {
        return None;
    }
    Some((lx as i32, ly as i32))
}

fn describe_one(img: &GrayImage, x: i32, y: i32, angle: f64) -> BinaryDescriptor {
    let (sn, cs) = angle.sin_cos();
    let at = |dx: i8, dy: i8| {
        let (dx, dy) = (dx as f64, dy as f64);
        let px = x + (cs * dx - sn * dy).round() as i32;
        let py = y + (sn * dx + cs * dy).round() as i32;
        img.get_pixel(px as u32, py as u32).0[0]
    };
    let mut bits = [0u64; 4];
    for (i, p) in PATTERN.iter().enumerate() {
        if at(p[0], p[1]) < at(p[2], p[3]) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    BinaryDescriptor(bits)
}

/// Describe keypoints against a pyramid built with the detector's settings.
pub fn describe_in(pyramid: &Pyramid, kps: &[Keypoint]) -> Described {
    let smoothed: Vec<GrayImage> = pyramid.levels.iter().map(|l| imageops::blur(&l.image, SMOOTHING_SIGMA)).collect();
    let mut out = Described {
        descriptors: Vec::with_capacity(kps.len()),
        kept: Vec::with_capacity(kps.len()),
        dropped: Vec::new(),
    };
    for (i, kp) in kps.iter().enumerate() {
        match level_position(pyramid, kp) {
            Some((x, y)) => {
                out.descriptors.push(describe_one(&smoothed[kp.scale_level], x, y, kp.angle));
                out.kept.push(i);
            }
            None => out.dropped.push(i),
        }
    }
    out
}

pub fn describe(image: &GrayImage, kps: &[Keypoint], scale_factor: f64, levels: usize) -> Described {
    let needed = kps.iter().map(|k| k.scale_level + 1).max().unwrap_or(1).min(levels.max(1));
    describe_in(&Pyramid::build(image, scale_factor, needed), kps)
}
