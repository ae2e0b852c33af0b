//! Classical feature pipeline: oriented FAST corners, steered binary
//! descriptors and brute-force Hamming matching, plus the match file format
//! shared with external matchers.

pub mod describe;
pub mod detect;
pub mod matching;
pub mod matchset;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use describe::{describe, describe_in, Described};
pub use detect::{detect, detect_in, DetectorConfig, Keypoint, Pyramid};
pub use matching::{match_float_nn, match_nn, Match};
pub use matchset::{load_matchset, ImageInfo, MatchMeta, MatchSet, MatchSetError};

/// Name recorded in `meta.matcher` for the builtin pipeline.
pub const BUILTIN_MATCHER: &str = "builtin-orb";

/// A 256-bit descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    pub const BITS: u32 = 256;

    pub fn hamming(&self, other: &Self) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalConfig {
    pub detector: DetectorConfig,
    pub cross_check: bool,
    pub max_distance: u32,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            cross_check: true,
            max_distance: matching::DEFAULT_MAX_DISTANCE,
        }
    }
}

/// Detect and describe; only keypoints with a descriptor are returned.
pub fn extract(image: &GrayImage, cfg: &DetectorConfig) -> (Vec<Keypoint>, Vec<BinaryDescriptor>) {
    if image.width() <= 2 * detect::EDGE || image.height() <= 2 * detect::EDGE {
        return (Vec::new(), Vec::new());
    }
    let pyramid = Pyramid::build(image, cfg.scale_factor, cfg.levels);
    let kps = detect_in(&pyramid, cfg);
    let d = describe_in(&pyramid, &kps);
    (d.kept.iter().map(|&i| kps[i]).collect(), d.descriptors)
}

/// Run the builtin pipeline on two images. Keypoints are in the pixel frame
/// of the images passed in.
pub fn match_images(img0: &GrayImage, img1: &GrayImage, cfg: &ClassicalConfig) -> (Vec<Keypoint>, Vec<Keypoint>, Vec<Match>) {
    let ((k0, d0), (k1, d1)) = rayon::join(|| extract(img0, &cfg.detector), || extract(img1, &cfg.detector));
    let matches = match_nn(&d0, &d1, cfg.cross_check, cfg.max_distance);
    (k0, k1, matches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_bounds() {
        let a = BinaryDescriptor([0; 4]);
        let b = BinaryDescriptor([u64::MAX; 4]);
        assert_eq!(a.hamming(&a), 0);
        assert_eq!(a.hamming(&b), 256);
        assert!(b.bit(255) && !a.bit(0));
    }
}
