//! Homography estimation by Hartley-normalized DLT.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::ransac::{self, Estimator, RansacConfig};
use super::EstimError;
use crate::{Mat3, Vec2, Vec3};

/// Plane projective map, scaled so `H[2][2] = 1` whenever that entry is
/// non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub Mat3);

impl Homography {
    pub fn new(m: Mat3) -> Self {
        let s = m[(2, 2)];
        if s.abs() > 1e-300 {
            Self(m / s)
        } else {
            Self(m)
        }
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// `None` when the point maps to infinity.
    pub fn apply(&self, p: Vec2) -> Option<Vec2> {
        let q = self.0 * Vec3::new(p.x, p.y, 1.0);
        if q.z.abs() < 1e-300 {
            return None;
        }
        Some(Vec2::new(q.x / q.z, q.y / q.z))
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.try_inverse().map(Self::new)
    }

    pub fn compose(&self, other: &Homography) -> Self {
        Self::new(self.0 * other.0)
    }
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(pts: &[Vec2]) -> Mat3 {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply_affine(t: &Mat3, p: &Vec2) -> Vec2 {
    Vec2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

fn collinear(a: &Vec2, b: &Vec2, c: &Vec2) -> bool {
    let cross = (b - a).perp(&(c - a));
    let scale = (b - a).norm_squared().max((c - a).norm_squared());
    cross.abs() <= 1e-12 * scale
}

/// Direct linear transform mapping `pts0[i]` to `pts1[i]`.
pub fn homography_dlt(pts0: &[Vec2], pts1: &[Vec2]) -> Result<Homography, EstimError> {
    if pts0.len() != pts1.len() {
        return Err(EstimError::LengthMismatch(pts0.len(), pts1.len()));
    }
    let n = pts0.len();
    if n < 4 {
        return Err(EstimError::TooFewPoints { needed: 4, got: n });
    }
    if n == 4 {
        for pts in [pts0, pts1] {
            for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
                if collinear(&pts[i], &pts[j], &pts[k]) {
                    return Err(EstimError::Degenerate("three of four points are collinear"));
                }
            }
        }
    }
    let t0 = normalizer(pts0);
    let t1 = normalizer(pts1);
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in pts0.iter().zip(pts1).enumerate() {
        let p = apply_affine(&t0, p);
        let q = apply_affine(&t1, q);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(EstimError::Degenerate("SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    let largest = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[second] <= 1e-10 * largest {
        return Err(EstimError::Degenerate("rank-deficient DLT system"));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t1_inv = t1.try_inverse().ok_or(EstimError::Degenerate("singular normalizer"))?;
    let m = t1_inv * hn * t0;
    if m.determinant().abs() < 1e-300 {
        return Err(EstimError::Degenerate("singular homography"));
    }
    Ok(Homography::new(m))
}

struct HomographyProblem<'a> {
    pts0: &'a [Vec2],
    pts1: &'a [Vec2],
}

impl Estimator for HomographyProblem<'_> {
    type Model = Homography;
    fn len(&self) -> usize {
        self.pts0.len()
    }
    fn sample_size(&self) -> usize {
        4
    }
    fn fit(&self, sample: &[usize]) -> Option<Homography> {
        let a: Vec<Vec2> = sample.iter().map(|&i| self.pts0[i]).collect();
        let b: Vec<Vec2> = sample.iter().map(|&i| self.pts1[i]).collect();
        homography_dlt(&a, &b).ok()
    }
    fn residual(&self, h: &Homography, i: usize) -> f64 {
        h.apply(self.pts0[i]).map_or(f64::INFINITY, |p| (p - self.pts1[i]).norm())
    }
}

/// RANSAC over 4-point DLT, refit by DLT on the final inliers.
pub fn homography_ransac(pts0: &[Vec2], pts1: &[Vec2], cfg: &RansacConfig) -> Result<(Homography, Vec<bool>), EstimError> {
    cfg.validate()?;
    if pts0.len() != pts1.len() {
        return Err(EstimError::LengthMismatch(pts0.len(), pts1.len()));
    }
    let problem = HomographyProblem { pts0, pts1 };
    let out = ransac::ransac(&problem, cfg);
    let model = out.model.ok_or(EstimError::TooFewPoints {
        needed: 4,
        got: out.num_inliers,
    })?;
    let idx: Vec<usize> = (0..pts0.len()).filter(|&i| out.inliers[i]).collect();
    let a: Vec<Vec2> = idx.iter().map(|&i| pts0[i]).collect();
    let b: Vec<Vec2> = idx.iter().map(|&i| pts1[i]).collect();
    let refit = homography_dlt(&a, &b).unwrap_or(model);
    let (mask, _, _) = ransac::score(&problem, &refit, cfg.threshold);
    Ok((refit, mask))
}
