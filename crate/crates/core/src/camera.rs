//! Pinhole camera model and pose conventions.
//!
//! A [`Pose`] maps world to camera: `p_cam = R x + t`, where `t` is the world
//! origin expressed in the camera frame and the camera center is `−Rᵀ t`.
//! Image coordinates have their origin at the top-left corner, `u` right and
//! `v` down. There is no lens distortion: images and keypoints are expected
//! to be undistorted already.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::PixelPoint;
use crate::numeric;
use crate::{Mat3, Vec2, Vec3};

/// Rotations off by less than this (max |RᵀR − I| entry or |det − 1|) are
/// silently projected to the nearest rotation; larger violations are errors.
pub const ROTATION_REPAIR_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("not a rotation matrix: orthonormality error {orthonormality}, det {det}")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cannot center an empty point set")]
    EmptyPointSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsWire")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct IntrinsicsWire {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsWire> for Intrinsics {
    type Error = CameraError;
    fn try_from(w: IntrinsicsWire) -> Result<Self, Self::Error> {
        Intrinsics::new(w.fx, w.fy, w.cx, w.cy, w.width, w.height)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got {fx}, {fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidIntrinsics(format!("image size {width}x{height}")));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn k_matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel → point on the unit-depth plane.
    pub fn normalize(&self, p: PixelPoint) -> Vec2 {
        Vec2::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy)
    }

    /// Pixel → unit bearing vector in the camera frame.
    pub fn bearing(&self, p: PixelPoint) -> Vec3 {
        let n = self.normalize(p);
        Vec3::new(n.x, n.y, 1.0).normalize()
    }

    /// Camera-frame point → pixel, without a depth check.
    pub fn project_cam(&self, p: &Vec3) -> PixelPoint {
        PixelPoint::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }
}

/// World → camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseWire", into = "PoseWire")]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Rotation row-major, world→camera.
#[derive(Serialize, Deserialize)]
struct PoseWire {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<PoseWire> for Pose {
    type Error = CameraError;
    fn try_from(w: PoseWire) -> Result<Self, Self::Error> {
        let r = Mat3::from_row_slice(&w.rotation);
        Pose::new(r, Vec3::from(w.translation))
    }
}

impl From<Pose> for PoseWire {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

/// Closest rotation in Frobenius norm (polar decomposition via SVD).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

impl Pose {
    /// Validated pose. Rotations within [`ROTATION_REPAIR_TOL`] of SO(3) are
    /// re-orthonormalized; rotations already exact to rounding are kept bit for bit.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, CameraError> {
        if !rotation.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFinite("rotation"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFinite("translation"));
        }
        let orth = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if orth > ROTATION_REPAIR_TOL || (det - 1.0).abs() > ROTATION_REPAIR_TOL {
            return Err(CameraError::NotARotation { orthonormality: orth, det });
        }
        let rotation = if orth > 1e-12 || (det - 1.0).abs() > 1e-12 {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose from a camera center in world coordinates: `t = −R c`.
    pub fn from_center(rotation: Mat3, center: Vec3) -> Self {
        Self {
            rotation,
            translation: -numeric::affine3(&rotation, &center, &Vec3::zeros()),
        }
    }

    /// Camera center in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// `R x + t`, with compensated accumulation so large world coordinates
    /// do not lose the sub-millimetre part of the result.
    pub fn transform(&self, x: &Vec3) -> Vec3 {
        numeric::affine3(&self.rotation, x, &self.translation)
    }

    pub fn rotation3(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation)
    }
}

pub fn project(x: &Vec3, pose: &Pose, k: &Intrinsics) -> Result<PixelPoint, CameraError> {
    let p = pose.transform(x);
    if !(p.z > 0.0) {
        return Err(CameraError::BehindCamera { depth: p.z });
    }
    Ok(k.project_cam(&p))
}

/// Subtract the component-wise mean. Returns `(centered, offset)`.
pub fn center_points(points: &[Vec3]) -> Result<(Vec<Vec3>, Vec3), CameraError> {
    if points.is_empty() {
        return Err(CameraError::EmptyPointSet);
    }
    let offset = Vec3::new(
        numeric::mean(points.iter().map(|p| p.x)),
        numeric::mean(points.iter().map(|p| p.y)),
        numeric::mean(points.iter().map(|p| p.z)),
    );
    Ok((points.iter().map(|p| p - offset).collect(), offset))
}

/// Ground-truth translation in the centered frame: `t + R · offset`.
pub fn offset_gt_translation(gt: &Pose, offset: &Vec3) -> Vec3 {
    numeric::affine3(&gt.rotation, offset, &gt.translation)
}

/// Ground-truth pose re-expressed for world points shifted by `−offset`.
pub fn centered_pose(gt: &Pose, offset: &Vec3) -> Pose {
    Pose {
        rotation: gt.rotation,
        translation: offset_gt_translation(gt, offset),
    }
}

/// Geodesic angle between two rotations, degrees in `[0, 180]`.
///
/// Same value as `acos((tr(RaᵀRb) − 1) / 2)`, evaluated with `atan2` so that
/// small angles keep full precision.
pub fn rotation_error_deg(ra: &Mat3, rb: &Mat3) -> f64 {
    let r = ra.transpose() * rb;
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = (axis.norm() / 2.0).min(1.0);
    sin.atan2(cos).to_degrees()
}

pub fn translation_error_m(ta: &Vec3, tb: &Vec3) -> f64 {
    (ta - tb).norm()
}

/// Distance between camera centers; a diagnostic next to the t-space error.
pub fn camera_center_error_m(a: &Pose, b: &Pose) -> f64 {
    (a.center() - b.center()).norm()
}

/// Intersect the viewing ray of `p` with the plane through `plane_point`
/// with normal `normal`. `None` if the ray is parallel or hits behind.
pub fn backproject_to_plane(p: PixelPoint, pose: &Pose, k: &Intrinsics, plane_point: &Vec3, normal: &Vec3) -> Option<Vec3> {
    let center = pose.center();
    let n = k.normalize(p);
    let dir = pose.rotation.transpose() * Vec3::new(n.x, n.y, 1.0);
    let denom = normal.dot(&dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let lambda = normal.dot(&(plane_point - center)) / denom;
    (lambda > 0.0).then(|| center + lambda * dir)
}

/// Intrinsics plus ground-truth pose for one camera image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub image_path: String,
    pub intrinsics: Intrinsics,
    #[serde(rename = "pose")]
    pub gt_pose: Pose,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl CameraRecord {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k100() -> Intrinsics {
        Intrinsics::new(100., 100., 50., 50., 100, 100).unwrap()
    }

    fn random_rotation(rng: &mut impl Rng) -> Mat3 {
        let axis = Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI)).into_inner()
    }

    #[test]
    fn principal_point_on_axis() {
        let pose = Pose::new(Mat3::identity(), Vec3::new(0., 0., 5.)).unwrap();
        let p = project(&Vec3::zeros(), &pose, &k100()).unwrap();
        assert_eq!(p, PixelPoint::new(50., 50.));
    }

    #[test]
    fn unit_plane_arithmetic() {
        let p = project(&Vec3::new(1., 0., 1.), &Pose::identity(), &k100()).unwrap();
        assert_eq!(p, PixelPoint::new(150., 50.));
    }

    #[test]
    fn behind_camera_is_error() {
        let err = project(&Vec3::new(0., 0., -1.), &Pose::identity(), &k100()).unwrap_err();
        assert!(matches!(err, CameraError::BehindCamera { .. }));
        assert!(project(&Vec3::new(0., 0., 0.), &Pose::identity(), &k100()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0., 1., 0., 0., 10, 10).is_err());
        assert!(Intrinsics::new(1., 1., f64::NAN, 0., 10, 10).is_err());
    }

    #[test]
    fn centering_examples() {
        let (c, o) = center_points(&[Vec3::new(2., 0., 0.), Vec3::new(-2., 0., 0.)]).unwrap();
        assert_eq!(o, Vec3::zeros());
        assert_eq!(c, vec![Vec3::new(2., 0., 0.), Vec3::new(-2., 0., 0.)]);
        let p = Vec3::new(691000.25, 5336000.5, 510.125);
        let (c, o) = center_points(&[p]).unwrap();
        assert_eq!(o, p);
        assert_eq!(c, vec![Vec3::zeros()]);
        assert_eq!(center_points(&[]), Err(CameraError::EmptyPointSet));
    }

    #[test]
    fn utm_centering_matches_extended_precision_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    691000. + rng.random_range(0.0..30.0),
                    5336000. + rng.random_range(0.0..1.0),
                    510. + rng.random_range(0.0..15.0),
                )
            })
            .collect();
        let (centered, offset) = center_points(&pts).unwrap();
        // Oracle: integer-scaled sums in i128 are exact for these dyadic-ish
        // inputs up to 2^-40 resolution.
        for axis in 0..3 {
            let scale = (1u64 << 40) as f64;
            let sum: i128 = pts.iter().map(|p| (p[axis] * scale).round() as i128).sum();
            let mean = sum as f64 / pts.len() as f64 / scale;
            assert!((offset[axis] - mean).abs() < 1e-9, "axis {axis}");
        }
        for c in &centered {
            assert!(c.x.abs() < 30. && c.y.abs() < 1. && c.z.abs() < 15.);
        }
    }

    #[test]
    fn offset_gt_translation_examples() {
        let gt = Pose::new(Mat3::identity(), Vec3::new(1., 2., 3.)).unwrap();
        assert_eq!(offset_gt_translation(&gt, &Vec3::zeros()), gt.translation);
        let gt = Pose::identity();
        assert_eq!(offset_gt_translation(&gt, &Vec3::new(1., 2., 3.)), Vec3::new(1., 2., 3.));
    }

    #[test]
    fn rotation_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ra = random_rotation(&mut rng);
        assert_eq!(rotation_error_deg(&ra, &ra), 0.0);
        let axis = Unit::new_normalize(Vec3::new(0.3, -0.2, 0.9));
        let rb = ra * Rotation3::from_axis_angle(&axis, 30f64.to_radians()).into_inner();
        assert_abs_diff_eq!(rotation_error_deg(&ra, &rb), 30.0, epsilon = 1e-9);
        let flip = Rotation3::from_axis_angle(&axis, std::f64::consts::PI).into_inner();
        assert_abs_diff_eq!(rotation_error_deg(&Mat3::identity(), &flip), 180.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_error_matches_quaternion_oracle() {
        use nalgebra::UnitQuaternion;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let ra = random_rotation(&mut rng);
            let rb = random_rotation(&mut rng);
            let qa = UnitQuaternion::from_matrix(&ra);
            let qb = UnitQuaternion::from_matrix(&rb);
            let oracle = (2.0 * qa.coords.dot(&qb.coords).abs().min(1.0).acos()).to_degrees();
            assert_abs_diff_eq!(rotation_error_deg(&ra, &rb), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn translation_error_pythagorean() {
        assert_eq!(translation_error_m(&Vec3::new(3., 4., 0.), &Vec3::zeros()), 5.0);
        assert_eq!(translation_error_m(&Vec3::new(3., 4., 0.), &Vec3::new(3., 4., 0.)), 0.0);
    }

    #[test]
    fn pose_validation_and_repair() {
        let mut r = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        r[(0, 0)] += 1e-8;
        let pose = Pose::new(r, Vec3::zeros()).unwrap();
        assert!(orthonormality_error(&pose.rotation) < 1e-12);
        r[(0, 0)] += 1e-3;
        assert!(matches!(Pose::new(r, Vec3::zeros()), Err(CameraError::NotARotation { .. })));
        let reflect = Mat3::from_diagonal(&Vec3::new(1., 1., -1.));
        assert!(Pose::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn center_and_translation_agree() {
        let r = Rotation3::from_euler_angles(0.4, -0.1, 1.2).into_inner();
        let c = Vec3::new(691005., 5335990., 512.);
        let pose = Pose::from_center(r, c);
        assert_abs_diff_eq!(pose.center(), c, epsilon = 1e-8);
    }

    #[test]
    fn project_then_backproject_recovers_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let r = Rotation3::from_euler_angles(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )
            .into_inner();
            let pose = Pose::new(r, Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 10.0)).unwrap();
            let normal = Vec3::new(0.1, 0.2, 1.0).normalize();
            let plane_point = Vec3::new(0.5, -0.5, 1.0);
            // A point on the plane: pick (x, y), solve for z.
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let z = plane_point.z - (normal.x * (x - plane_point.x) + normal.y * (y - plane_point.y)) / normal.z;
            let w = Vec3::new(x, y, z);
            let px = project(&w, &pose, &k100()).unwrap();
            let back = backproject_to_plane(px, &pose, &k100(), &plane_point, &normal).unwrap();
            assert_abs_diff_eq!(back, w, epsilon = 1e-9);
        }
    }

    #[test]
    fn camera_record_json_row_major() {
        let r = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        let rec = CameraRecord {
            image_path: "img/0001.png".into(),
            intrinsics: k100(),
            gt_pose: Pose::new(r, Vec3::new(1., 2., 3.)).unwrap(),
            tags: vec!["car".into()],
        };
        let json = rec.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["pose"]["rotation"][1].as_f64().unwrap(), r[(0, 1)]);
        assert_eq!(CameraRecord::from_json(json.as_bytes()).unwrap(), rec);
        let bad = json.replace("\"fx\": 100.0", "\"fx\": -1.0");
        assert!(CameraRecord::from_json(bad.as_bytes()).is_err());
    }
}
