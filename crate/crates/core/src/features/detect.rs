//! Oriented FAST corners over a scale pyramid, ranked by Harris response.

use image::imageops::{self, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};

/// Keypoints closer than this to a level's border are not produced; it is
/// also the descriptor support used by [`super::describe`].
pub const EDGE: u32 = 31;
/// Radius of the intensity-centroid patch for orientation.
pub const ORIENTATION_RADIUS: i32 = 15;

/// A detected feature. `x`, `y` are continuous pixel coordinates in the
/// level-0 image (pixel `(k, l)` has its center at `(k + 0.5, l + 0.5)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    /// Radians, image frame (`y` down), from the intensity centroid.
    pub angle: f64,
    pub scale_level: usize,
}

impl Keypoint {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            response: 0.0,
            angle: 0.0,
            scale_level: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub max_keypoints: usize,
    pub scale_factor: f64,
    pub levels: usize,
    /// Segment-test intensity threshold.
    pub fast_threshold: u8,
    /// Contiguous arc length of the segment test.
    pub fast_arc: usize,
    pub harris_k: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2048,
            scale_factor: 1.2,
            levels: 8,
            fast_threshold: 20,
            fast_arc: 9,
            harris_k: 0.04,
        }
    }
}

/// One pyramid level with its per-axis scale relative to level 0.
#[derive(Debug, Clone)]
pub struct Level {
    pub image: GrayImage,
    pub scale_x: f64,
    pub scale_y: f64,
}

#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Level>,
}

impl Pyramid {
    /// Levels stop early once they get smaller than twice the border.
    pub fn build(image: &GrayImage, scale_factor: f64, levels: usize) -> Self {
        let (w, h) = image.dimensions();
        let mut out = vec![Level {
            image: image.clone(),
            scale_x: 1.0,
            scale_y: 1.0,
        }];
        for i in 1..levels {
            let s = scale_factor.powi(i as i32);
            let lw = (w as f64 / s).round() as u32;
            let lh = (h as f64 / s).round() as u32;
            if lw <= 2 * EDGE || lh <= 2 * EDGE {
                break;
            }
            out.push(Level {
                image: imageops::resize(image, lw, lh, FilterType::Triangle),
                scale_x: w as f64 / lw as f64,
                scale_y: h as f64 / lh as f64,
            });
        }
        Self { levels: out }
    }
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Segment test: `arc` contiguous circle pixels all brighter than
/// `center + t` or all darker than `center − t`.
fn is_fast_corner(img: &GrayImage, x: u32, y: u32, t: u8, arc: usize) -> bool {
    let c = img.get_pixel(x, y).0[0] as i16;
    let t = t as i16;
    let mut states = [0i8; 16];
    for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
        let p = img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0] as i16;
        states[i] = if p > c + t {
            1
        } else if p < c - t {
            -1
        } else {
            0
        };
    }
    for want in [1i8, -1] {
        let mut run = 0;
        for i in 0..32 {
            if states[i % 16] == want {
                run += 1;
                if run >= arc {
                    return true;
                }
            } else {
                run = 0;
            }
        }
    }
    false
}

/// Harris response over a 7×7 block of Sobel gradients.
fn harris(img: &GrayImage, x: u32, y: u32, k: f64) -> f64 {
    let px = |x: i32, y: i32| img.get_pixel(x as u32, y as u32).0[0] as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for dy in -3..=3 {
        for dx in -3..=3 {
            let (cx, cy) = (x as i32 + dx, y as i32 + dy);
            let gx = (px(cx + 1, cy - 1) + 2.0 * px(cx + 1, cy) + px(cx + 1, cy + 1))
                - (px(cx - 1, cy - 1) + 2.0 * px(cx - 1, cy) + px(cx - 1, cy + 1));
            let gy = (px(cx - 1, cy + 1) + 2.0 * px(cx, cy + 1) + px(cx + 1, cy + 1))
                - (px(cx - 1, cy - 1) + 2.0 * px(cx, cy - 1) + px(cx + 1, cy - 1));
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    // Normalize so responses are comparable to OpenCV's scaling.
    let norm = 1.0 / (4.0 * 49.0 * 255.0);
    let (sxx, syy, sxy) = (sxx * norm * norm, syy * norm * norm, sxy * norm * norm);
    sxx * syy - sxy * sxy - k * (sxx + syy) * (sxx + syy)
}

/// Orientation from the intensity centroid of a circular patch.
pub fn intensity_centroid_angle(img: &GrayImage, x: u32, y: u32) -> f64 {
    let r = ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0.0f64, 0.0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let v = img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0] as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

fn detect_level(level: &Level, index: usize, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let img = &level.image;
    let (w, h) = img.dimensions();
    if w <= 2 * EDGE || h <= 2 * EDGE {
        return Vec::new();
    }
    let stride = w as usize;
    let mut response = vec![f64::NEG_INFINITY; (w * h) as usize];
    let mut corners = Vec::new();
    for y in EDGE..h - EDGE {
        for x in EDGE..w - EDGE {
            if is_fast_corner(img, x, y, cfg.fast_threshold, cfg.fast_arc) {
                response[y as usize * stride + x as usize] = harris(img, x, y, cfg.harris_k);
                corners.push((x, y));
            }
        }
    }
    let mut out = Vec::new();
    for (x, y) in corners {
        let r = response[y as usize * stride + x as usize];
        // 3×3 non-maximum suppression; ties go to the earlier pixel in scan order.
        let mut keep = true;
        'nms: for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let n = response[(y as i32 + dy) as usize * stride + (x as i32 + dx) as usize];
                let earlier = dy < 0 || (dy == 0 && dx < 0);
                if n > r || (n == r && earlier) {
                    keep = false;
                    break 'nms;
                }
            }
        }
        if keep {
            out.push(Keypoint {
                x: (x as f64 + 0.5) * level.scale_x,
                y: (y as f64 + 0.5) * level.scale_y,
                response: r,
                angle: intensity_centroid_angle(img, x, y),
                scale_level: index,
            });
        }
    }
    out
}

fn by_response(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.scale_level.cmp(&b.scale_level))
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

/// Detect keypoints on a prebuilt pyramid. Each level gets a quota that
/// shrinks geometrically with scale; capacity left unused by sparse levels
/// goes to the strongest remaining corners of any level. The union is sorted
/// by response.
pub fn detect_in(pyramid: &Pyramid, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let n = pyramid.levels.len();
    if n == 0 || cfg.max_keypoints == 0 {
        return Vec::new();
    }
    let f = 1.0 / cfg.scale_factor;
    let first = cfg.max_keypoints as f64 * (1.0 - f) / (1.0 - f.powi(n as i32));
    let mut all = Vec::new();
    let mut spare = Vec::new();
    let mut assigned = 0usize;
    for (i, level) in pyramid.levels.iter().enumerate() {
        let quota = if i + 1 == n {
            cfg.max_keypoints.saturating_sub(assigned)
        } else {
            (first * f.powi(i as i32)).round() as usize
        };
        assigned += quota;
        let mut kps = detect_level(level, i, cfg);
        kps.sort_by(by_response);
        if kps.len() > quota {
            spare.extend(kps.split_off(quota));
        }
        all.extend(kps);
    }
    if all.len() < cfg.max_keypoints {
        spare.sort_by(by_response);
        spare.truncate(cfg.max_keypoints - all.len());
        all.extend(spare);
    }
    all.sort_by(by_response);
    all.truncate(cfg.max_keypoints);
    all
}

/// Detect oriented corners. Images too small for the border yield nothing.
pub fn detect(image: &GrayImage, cfg: &DetectorConfig) -> Vec<Keypoint> {
    if image.width() <= 2 * EDGE || image.height() <= 2 * EDGE {
        return Vec::new();
    }
    detect_in(&Pyramid::build(image, cfg.scale_factor, cfg.levels), cfg)
}
