//! Absolute pose from 2D–3D correspondences: P3P hypotheses inside RANSAC,
//! then Levenberg–Marquardt on the consensus set.
//!
//! World points should be centered (see [`crate::camera::center_points`])
//! before calling [`pnp_ransac`]; the returned translation then lives in the
//! centered frame.

use serde::{Deserialize, Serialize};

use super::lm::{self, LmReport};
use super::p3p::p3p_solve;
use super::ransac::{self, is_inlier, Estimator, RansacConfig};
use crate::camera::{Intrinsics, Pose};
use crate::geo::PixelPoint;
use crate::Vec3;

/// Re-estimate the consensus set after refinement at most this many times.
const REFINE_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub num_iterations: usize,
    pub mean_inlier_reproj_px: f64,
    pub success: bool,
    pub refinement: Option<LmReport>,
}

impl PoseEstimate {
    pub fn failure(n: usize, iterations: usize) -> Self {
        Self {
            pose: Pose::identity(),
            inlier_mask: vec![false; n],
            num_iterations: iterations,
            mean_inlier_reproj_px: f64::INFINITY,
            success: false,
            refinement: None,
        }
    }

    pub fn num_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Pixel distance between the projection of `x` and `observed`; infinite
/// when `x` is not in front of the camera.
pub fn reprojection_error(pose: &Pose, x: &Vec3, observed: PixelPoint, k: &Intrinsics) -> f64 {
    lm::residual(pose, x, observed, k).map_or(f64::INFINITY, |r| r.norm())
}

/// Mask of correspondences whose reprojection error passes [`is_inlier`].
pub fn inlier_mask(pose: &Pose, world: &[Vec3], pixels: &[PixelPoint], k: &Intrinsics, threshold: f64) -> Vec<bool> {
    world
        .iter()
        .zip(pixels)
        .map(|(x, p)| is_inlier(reprojection_error(pose, x, *p, k), threshold))
        .collect()
}

struct PnpProblem<'a> {
    world: &'a [Vec3],
    pixels: &'a [PixelPoint],
    bearings: Vec<Vec3>,
    k: &'a Intrinsics,
}

impl Estimator for PnpProblem<'_> {
    type Model = Pose;

    fn len(&self) -> usize {
        self.world.len()
    }

    fn sample_size(&self) -> usize {
        4
    }

    fn minimal_size(&self) -> usize {
        3
    }

    fn fit(&self, s: &[usize]) -> Option<Pose> {
        let world = [self.world[s[0]], self.world[s[1]], self.world[s[2]]];
        let rays = [self.bearings[s[0]], self.bearings[s[1]], self.bearings[s[2]]];
        let candidates = p3p_solve(&world, &rays).ok()?;
        candidates
            .into_iter()
            .map(|pose| (reprojection_error(&pose, &self.world[s[3]], self.pixels[s[3]], self.k), pose))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, pose)| pose)
    }

    fn residual(&self, pose: &Pose, i: usize) -> f64 {
        reprojection_error(pose, &self.world[i], self.pixels[i], self.k)
    }
}

/// Robust absolute pose. Never panics on bad data: fewer than four
/// correspondences, or no hypothesis with four inliers, yields
/// `success == false` with an all-false mask.
pub fn pnp_ransac(world: &[Vec3], pixels: &[PixelPoint], k: &Intrinsics, cfg: &RansacConfig) -> PoseEstimate {
    let n = world.len().min(pixels.len());
    if n < 4 || world.len() != pixels.len() || cfg.validate().is_err() {
        return PoseEstimate::failure(world.len(), 0);
    }
    let problem = PnpProblem {
        world,
        pixels,
        bearings: pixels.iter().map(|p| k.bearing(*p)).collect(),
        k,
    };
    let out = ransac::ransac(&problem, cfg);
    let Some(mut pose) = out.model.filter(|_| out.num_inliers >= 4) else {
        return PoseEstimate::failure(n, out.iterations);
    };

    let mut mask = out.inliers;
    let mut report = None;
    for _ in 0..REFINE_ROUNDS {
        let (refined, rep) = lm::lm_refine_pose(&pose, world, pixels, k, &mask);
        let new_mask = inlier_mask(&refined, world, pixels, k, cfg.threshold);
        let count = new_mask.iter().filter(|&&b| b).count();
        if count < 4 {
            break;
        }
        pose = refined;
        report = Some(rep);
        let unchanged = new_mask == mask;
        mask = new_mask;
        if unchanged {
            break;
        }
    }

    let errors: Vec<f64> = (0..n)
        .filter(|&i| mask[i])
        .map(|i| reprojection_error(&pose, &world[i], pixels[i], k))
        .collect();
    if errors.len() < 4 {
        return PoseEstimate::failure(n, out.iterations);
    }
    PoseEstimate {
        pose,
        mean_inlier_reproj_px: errors.iter().sum::<f64>() / errors.len() as f64,
        inlier_mask: mask,
        num_iterations: out.iterations,
        success: true,
        refinement: report,
    }
}
