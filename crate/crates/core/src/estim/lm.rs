//! Levenberg–Marquardt refinement of a pose on reprojection error.
//!
//! Parameters are a tangent rotation `ω` and a translation step `δt`,
//! applied as `R ← exp([ω]×) R`, `t ← t + δt`, so every iterate stays on
//! SO(3).

use nalgebra::{Matrix2x6, Rotation3, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose};
use crate::geo::PixelPoint;
use crate::{Vec2, Vec3};

type Mat6 = SMatrix<f64, 6, 6>;

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_COST_TOL: f64 = 1e-10;
const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// No step could reduce the cost from the initial pose although the
    /// cost is not at its floor; the initial pose is returned.
    pub diverged: bool,
}

/// `R ← exp([ω]×) R`, `t ← t + δt` with `delta = (ω, δt)`.
pub fn apply_update(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    let r = Rotation3::from_scaled_axis(w) * Rotation3::from_matrix_unchecked(pose.rotation);
    // Rotation3 composition keeps orthonormality to rounding; renormalize to
    // stop drift across many iterations.
    let r = Rotation3::from_matrix_eps(r.matrix(), 1e-15, 10, r);
    Pose {
        rotation: r.into_inner(),
        translation: pose.translation + Vec3::new(delta[3], delta[4], delta[5]),
    }
}

/// Reprojection residual `π(R x + t) − observed` for one point, or `None`
/// if the point is not in front of the camera.
pub fn residual(pose: &Pose, x: &Vec3, observed: PixelPoint, k: &Intrinsics) -> Option<Vec2> {
    let p = pose.rotation * x + pose.translation;
    if !(p.z > 0.0) {
        return None;
    }
    let q = k.project_cam(&p);
    Some(Vec2::new(q.u - observed.u, q.v - observed.v))
}

/// Analytic Jacobian of [`residual`] with respect to `(ω, δt)` at zero.
pub fn residual_jacobian(pose: &Pose, x: &Vec3, k: &Intrinsics) -> Matrix2x6<f64> {
    let rx = pose.rotation * x;
    let p = rx + pose.translation;
    let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));
    // d(u, v)/dp
    let dproj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz2, 0.0, k.fy * iz, -k.fy * p.y * iz2);
    // dp/dω = −[R x]×, dp/dδt = I
    let dp_dw = -rx.cross_matrix();
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * dp_dw));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
    j
}

fn cost(pose: &Pose, world: &[Vec3], pixels: &[PixelPoint], k: &Intrinsics, idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| residual(pose, &world[i], pixels[i], k).map_or(f64::INFINITY, |r| r.norm_squared()))
        .sum()
}

/// Minimize the summed squared reprojection error over the masked points.
///
/// Stops when the relative cost decrease falls below [`RELATIVE_COST_TOL`]
/// or after [`MAX_ITERATIONS`]. The returned pose never has a higher cost
/// than `initial`.
pub fn lm_refine_pose(initial: &Pose, world: &[Vec3], pixels: &[PixelPoint], k: &Intrinsics, inlier_mask: &[bool]) -> (Pose, LmReport) {
    let idx: Vec<usize> = (0..world.len().min(pixels.len()))
        .filter(|&i| inlier_mask.get(i).copied().unwrap_or(false))
        .collect();
    let initial_cost = cost(initial, world, pixels, k, &idx);
    let mut report = LmReport {
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        diverged: false,
    };
    if idx.is_empty() || !initial_cost.is_finite() {
        report.diverged = !idx.is_empty();
        return (*initial, report);
    }
    let mut pose = *initial;
    let mut current = initial_cost;
    let mut lambda = 1e-3;
    let mut accepted_any = false;
    let floor = 1e-24 * idx.len() as f64;

    while report.iterations < MAX_ITERATIONS && current > floor {
        report.iterations += 1;
        let mut jtj = Mat6::zeros();
        let mut jtr = Vector6::zeros();
        for &i in &idx {
            let r = residual(&pose, &world[i], pixels[i], k).expect("finite cost implies positive depth");
            let j = residual_jacobian(&pose, &world[i], k);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut stepped = false;
        while lambda <= MAX_DAMPING {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = apply_update(&pose, &delta);
            let new_cost = cost(&candidate, world, pixels, k, &idx);
            if new_cost < current {
                let rel = (current - new_cost) / current;
                pose = candidate;
                current = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                accepted_any = true;
                if rel < RELATIVE_COST_TOL {
                    report.final_cost = current;
                    return (pose, report);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }
    report.final_cost = current;
    if !accepted_any && current > floor {
        // Either already at a minimum or the damping ran out. Distinguish by
        // the gradient: a stationary point is not a divergence.
        let grad: f64 = idx
            .iter()
            .map(|&i| {
                let r = residual(&pose, &world[i], pixels[i], k).unwrap();
                (residual_jacobian(&pose, &world[i], k).transpose() * r).norm()
            })
            .sum();
        report.diverged = grad > 1e-6 * current.sqrt().max(1.0);
    }
    (pose, report)
}
