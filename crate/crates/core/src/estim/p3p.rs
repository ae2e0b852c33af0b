//! Minimal absolute pose from three points (Grunert's formulation).
//!
//! With unit bearings `j_i`, world points `x_i` and unknown depths `s_i`,
//! the law of cosines on the three triangle sides reduces (with
//! `u = s2/s1`, `v = s3/s1`) to a quartic in `v`. Each positive real root
//! gives depths, the camera-frame points `s_i j_i`, and finally `(R, t)` by
//! aligning the two triangles.

use nalgebra::Matrix3;

use super::EstimError;
use crate::camera::Pose;
use crate::{Mat3, Vec3};

/// Candidates whose bearing residual exceeds this (radians) are discarded.
const MAX_BEARING_RESIDUAL: f64 = 1e-8;

fn horner(poly: &[f64], x: f64) -> f64 {
    poly.iter().fold(0.0, |acc, &a| acc * x + a)
}

/// Magnitude scale of the terms of `poly` at `x`, for relative zero tests.
fn horner_abs(poly: &[f64], x: f64) -> f64 {
    poly.iter().fold(0.0, |acc, &a| acc * x.abs() + a.abs())
}

/// Root of `poly` in `[lo, hi]` given a sign change, by safeguarded Newton.
fn bracketed_root(poly: &[f64], deriv: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = horner(poly, lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = horner(poly, x);
        if f == 0.0 {
            return x;
        }
        if (f < 0.0) == (f_lo < 0.0) {
            lo = x;
            f_lo = f;
        } else {
            hi = x;
        }
        let d = horner(deriv, x);
        let newton = x - f / d;
        x = if d != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

/// Real roots of the polynomial with coefficients `poly` (highest degree
/// first, `poly[0] != 0`), ascending. Roots of the derivative bracket the
/// roots; a critical point where the polynomial vanishes is a multiple root.
fn real_roots(poly: &[f64]) -> Vec<f64> {
    let degree = poly.len() - 1;
    match degree {
        0 => return Vec::new(),
        1 => return vec![-poly[1] / poly[0]],
        2 => {
            let (a, b, c) = (poly[0], poly[1], poly[2]);
            let disc = b * b - 4.0 * a * c;
            if disc < -1e-14 * (b * b).max((4.0 * a * c).abs()) {
                return Vec::new();
            }
            let sq = disc.max(0.0).sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q == 0.0 {
                return vec![0.0];
            }
            let mut r = vec![q / a, c / q];
            r.sort_by(f64::total_cmp);
            return r;
        }
        _ => {}
    }
    let deriv: Vec<f64> = poly[..degree].iter().enumerate().map(|(i, &a)| a * (degree - i) as f64).collect();
    let bound = 1.0 + poly[1..].iter().map(|a| (a / poly[0]).abs()).fold(0.0, f64::max);
    let mut knots = vec![-bound];
    knots.extend(real_roots(&deriv).into_iter().filter(|c| c.abs() < bound));
    knots.push(bound);
    let mut roots = Vec::new();
    for (i, w) in knots.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (horner(poly, a), horner(poly, b));
        if i > 0 && fa.abs() <= 1e-12 * horner_abs(poly, a) {
            roots.push(a);
            continue;
        }
        if (fa < 0.0) != (fb < 0.0) && fb.abs() > 1e-12 * horner_abs(poly, b) {
            roots.push(bracketed_root(poly, &deriv, a, b));
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    roots
}

/// Real roots of `c[0] x⁴ + c[1] x³ + c[2] x² + c[3] x + c[4]`, ascending.
/// Degrades to lower degree when leading terms vanish.
pub(crate) fn real_roots_quartic(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
    let first = c.iter().position(|v| v.abs() > 1e-14).unwrap_or(4);
    real_roots(&c[first..])
}

/// Rigid transform `P ≈ R X + t` from three point pairs (Kabsch).
fn align(world: &[Vec3; 3], cam: &[Vec3; 3]) -> Option<Pose> {
    let wc = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (cam[i] - cc) * (world[i] - wc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    Some(Pose {
        rotation: r,
        translation: cc - r * wc,
    })
}

/// Angle between the bearing `ray` and the direction of `R x + t`.
pub fn bearing_residual(pose: &Pose, x: &Vec3, ray: &Vec3) -> f64 {
    let p = pose.rotation * x + pose.translation;
    let c = p.normalize().cross(ray).norm();
    let d = p.normalize().dot(ray);
    c.atan2(d)
}

/// Newton polish of the depths on the three side-length equations.
fn polish_depths(s: &mut [f64; 3], cosines: &[f64; 3], d2: &[f64; 3]) {
    // Equation k uses the pair (i, j) opposite vertex k.
    const PAIRS: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];
    for _ in 0..5 {
        let mut f = Vec3::zeros();
        let mut jac = Mat3::zeros();
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            f[k] = s[i] * s[i] + s[j] * s[j] - 2.0 * s[i] * s[j] * cosines[k] - d2[k];
            jac[(k, i)] = 2.0 * s[i] - 2.0 * s[j] * cosines[k];
            jac[(k, j)] = 2.0 * s[j] - 2.0 * s[i] * cosines[k];
        }
        let Some(step) = jac.lu().solve(&f) else { return };
        for (k, sk) in s.iter_mut().enumerate() {
            *sk -= step[k];
        }
        if step.norm() <= 1e-15 * (s[0] + s[1] + s[2]) {
            return;
        }
    }
}

/// Up to four poses consistent with three world points and their unit
/// bearing vectors. Collinear world points are an error; an empty list
/// means the quartic has no admissible root.
pub fn p3p_solve(world: &[Vec3; 3], rays: &[Vec3; 3]) -> Result<Vec<Pose>, EstimError> {
    let e1 = world[1] - world[0];
    let e2 = world[2] - world[0];
    if e1.cross(&e2).norm() <= 1e-12 * e1.norm_squared().max(e2.norm_squared()) {
        return Err(EstimError::Degenerate("collinear world points"));
    }
    let j = rays.map(|r| r.normalize());
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    let (ca, cb, cg) = (j[1].dot(&j[2]), j[0].dot(&j[2]), j[0].dot(&j[1]));

    let p = (a2 - c2) / b2;
    let q = (a2 + c2) / b2;
    let coeffs = [
        (p - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (p * (1.0 - p) * cb - (1.0 - q) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (p * p - 1.0 + 2.0 * p * p * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca - 4.0 * q * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-p * (1.0 + p) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - q) * ca * cg),
        (1.0 + p).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];

    let mut poses = Vec::new();
    for v in real_roots_quartic(coeffs) {
        if !(v > 0.0) {
            continue;
        }
        // s1 from side b, then u from side c (a quadratic); side a picks the
        // consistent root. Grunert's closed form for u divides by
        // cos γ − v cos α, which vanishes in symmetric configurations.
        let den_b = 1.0 + v * v - 2.0 * v * cb;
        if !(den_b > 0.0) {
            continue;
        }
        let s1_sq = b2 / den_b;
        let disc = cg * cg - 1.0 + c2 / s1_sq;
        if disc < -1e-10 {
            continue;
        }
        let root = disc.max(0.0).sqrt();
        for u in [cg - root, cg + root] {
            if !(u > 0.0) {
                continue;
            }
            let side_a = s1_sq * (u * u + v * v - 2.0 * u * v * ca);
            if (side_a - a2).abs() > 1e-6 * a2.max(c2).max(b2) {
                continue;
            }
            let s1 = s1_sq.sqrt();
            let mut s = [s1, u * s1, v * s1];
            polish_depths(&mut s, &[ca, cb, cg], &[a2, b2, c2]);
            if !s.iter().all(|&d| d > 0.0 && d.is_finite()) {
                continue;
            }
            let cam = [j[0] * s[0], j[1] * s[1], j[2] * s[2]];
            let Some(pose) = align(world, &cam) else { continue };
            let ok = (0..3).all(|i| bearing_residual(&pose, &world[i], &j[i]) < MAX_BEARING_RESIDUAL);
            let duplicate = poses.iter().any(|q: &Pose| (q.rotation - pose.rotation).abs().max() < 1e-10);
            if ok && !duplicate {
                poses.push(pose);
            }
        }
    }
    Ok(poses)
}
