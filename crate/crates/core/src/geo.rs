//! Texture pixel → st → world conversion.
//!
//! A texture pixel `(u, v)` (origin top-left, `v` down) maps to st-space by
//! `s = u / width`, `t = 1 − v / height`. The st-space is tied to the world
//! through a face-aligned basis spanned by two ring edges sharing a vertex:
//! the st coordinates are expressed in the 2D basis `(b1, b2)` and the same
//! coefficients scale the 3D edge vectors `(w1, w2)`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gml::TexturedFace;
use crate::{Vec2, Vec3};

/// Minimum `|det A|` for an st-space basis.
pub const DET_EPS: f64 = 1e-12;
/// Minimum `|w1 × w2|` for a world-space basis.
pub const CROSS_EPS: f64 = 1e-12;

pub type WorldPoint = Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("texture size must be positive, got {width}x{height}")]
    EmptyTexture { width: u32, height: u32 },
    #[error("face {0}: every vertex triple is degenerate, no basis")]
    DegenerateFace(String),
    #[error("face {face_id}: {count} vertices, need at least 3")]
    TooFewVertices { face_id: String, count: usize },
}

/// Continuous pixel position; `(0, 0)` is the top-left corner of the
/// top-left pixel, so pixel `(k, l)` has its center at `(k + 0.5, l + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of the pixel with integer index `(k, l)`.
    pub fn from_index(k: u32, l: u32) -> Self {
        Self::new(k as f64 + 0.5, l as f64 + 0.5)
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.u, self.v)
    }

    fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StPoint {
    pub s: f64,
    pub t: f64,
}

impl StPoint {
    pub const fn new(s: f64, t: f64) -> Self {
        Self { s, t }
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.s, self.t)
    }
}

pub fn pixel_to_st(p: PixelPoint, width: u32, height: u32) -> Result<StPoint, GeoError> {
    if width == 0 || height == 0 {
        return Err(GeoError::EmptyTexture { width, height });
    }
    if !p.is_finite() {
        return Err(GeoError::NonFinite);
    }
    Ok(StPoint::new(p.u / width as f64, 1.0 - p.v / height as f64))
}

/// Inverse of [`pixel_to_st`].
pub fn st_to_pixel(st: StPoint, width: u32, height: u32) -> PixelPoint {
    PixelPoint::new(st.s * width as f64, (1.0 - st.t) * height as f64)
}

/// Face-aligned basis built from ring vertices `0`, `j`, `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceBasis {
    pub origin_st: Vec2,
    pub origin_world: Vec3,
    pub b1: Vec2,
    pub b2: Vec2,
    pub w1: Vec3,
    pub w2: Vec3,
    pub a_inv: Matrix2<f64>,
    /// Ring indices `(0, j, k)` the basis was built from.
    pub vertices: (usize, usize, usize),
}

impl FaceBasis {
    fn from_triple(face: &TexturedFace, j: usize, k: usize) -> Option<Self> {
        let origin_st = face.st_ring[0];
        let origin_world = face.world_ring[0];
        let b1 = face.st_ring[j] - origin_st;
        let b2 = face.st_ring[k] - origin_st;
        let w1 = face.world_ring[j] - origin_world;
        let w2 = face.world_ring[k] - origin_world;
        let a = Matrix2::from_columns(&[b1, b2]);
        if a.determinant().abs() <= DET_EPS || w1.cross(&w2).norm() <= CROSS_EPS {
            return None;
        }
        Some(Self {
            origin_st,
            origin_world,
            b1,
            b2,
            w1,
            w2,
            a_inv: a.try_inverse()?,
            vertices: (0, j, k),
        })
    }

    /// Coefficients of `st − origin_st` in the `(b1, b2)` basis.
    pub fn intermediate(&self, st: StPoint) -> Vec2 {
        self.a_inv * (st.to_vec() - self.origin_st)
    }

    /// Unit normal of the basis plane.
    pub fn normal(&self) -> Vec3 {
        self.w1.cross(&self.w2).normalize()
    }
}

/// Build the basis from the first triple `(0, j, k)`, `j < k` in ring order,
/// whose st edges and world edges are both non-degenerate.
pub fn build_face_basis(face: &TexturedFace) -> Result<FaceBasis, GeoError> {
    let n = face.st_ring.len().min(face.world_ring.len());
    if n < 3 {
        return Err(GeoError::TooFewVertices {
            face_id: face.face_id.clone(),
            count: n,
        });
    }
    (1..n)
        .flat_map(|j| (j + 1..n).map(move |k| (j, k)))
        .find_map(|(j, k)| FaceBasis::from_triple(face, j, k))
        .ok_or_else(|| GeoError::DegenerateFace(face.face_id.clone()))
}

pub fn st_to_world(st: StPoint, basis: &FaceBasis) -> Result<WorldPoint, GeoError> {
    if !(st.s.is_finite() && st.t.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    let xb = basis.intermediate(st);
    // Sum the in-plane offset first so the UTM-sized origin is rounded once.
    Ok(basis.origin_world + (xb.x * basis.w1 + xb.y * basis.w2))
}

pub fn pixel_to_world(p: PixelPoint, face: &TexturedFace) -> Result<WorldPoint, GeoError> {
    let basis = build_face_basis(face)?;
    pixel_to_world_with(p, face, &basis)
}

/// [`pixel_to_world`] with a precomputed basis, for batches on one face.
pub fn pixel_to_world_with(p: PixelPoint, face: &TexturedFace, basis: &FaceBasis) -> Result<WorldPoint, GeoError> {
    st_to_world(pixel_to_st(p, face.image_width, face.image_height)?, basis)
}

/// Per-face consistency diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceDiagnostics {
    pub face_id: String,
    /// Distance between each vertex's mapped st position and its world twin.
    pub vertex_residuals_m: Vec<f64>,
    pub max_vertex_residual_m: f64,
    pub planarity_deviation_m: f64,
    /// True when some vertex does not map to its twin within the tolerance,
    /// i.e. the texturing is not affine over the face.
    pub non_affine: bool,
}

pub fn face_diagnostics(face: &TexturedFace, tolerance_m: f64) -> Result<FaceDiagnostics, GeoError> {
    let basis = build_face_basis(face)?;
    let residuals: Vec<f64> = face
        .st_ring
        .iter()
        .zip(&face.world_ring)
        .map(|(st, w)| {
            st_to_world(StPoint::new(st.x, st.y), &basis)
                .map(|p| (p - w).norm())
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let max = residuals.iter().copied().fold(0.0, f64::max);
    Ok(FaceDiagnostics {
        face_id: face.face_id.clone(),
        vertex_residuals_m: residuals,
        max_vertex_residual_m: max,
        planarity_deviation_m: face.planarity_deviation(),
        non_affine: max > tolerance_m,
    })
}

/// Whether an st position falls inside the face's st polygon (even–odd rule).
/// Texture margins outside the polygon still transform; this lets callers
/// tag or drop them.
pub fn st_inside_polygon(st: StPoint, ring: &[Vec2]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + n - 1) % n];
        if (a.y > st.t) != (b.y > st.t) {
            let x = (b.x - a.x) * (st.t - a.y) / (b.y - a.y) + a.x;
            if st.s < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square() -> TexturedFace {
        TexturedFace::new(
            "sq",
            "t.png",
            vec![Vec2::new(0., 0.), Vec2::new(1., 0.), Vec2::new(1., 1.), Vec2::new(0., 1.)],
            vec![
                Vec3::new(100., 200., 10.),
                Vec3::new(110., 200., 10.),
                Vec3::new(110., 200., 15.),
                Vec3::new(100., 200., 15.),
            ],
            400,
            200,
        )
        .unwrap()
    }

    #[test]
    fn pixel_to_st_corners() {
        let (w, h) = (400, 200);
        assert_eq!(pixel_to_st(PixelPoint::new(0., 200.), w, h).unwrap(), StPoint::new(0., 0.));
        assert_eq!(pixel_to_st(PixelPoint::new(400., 0.), w, h).unwrap(), StPoint::new(1., 1.));
        assert_eq!(pixel_to_st(PixelPoint::new(200., 100.), w, h).unwrap(), StPoint::new(0.5, 0.5));
        assert_eq!(pixel_to_st(PixelPoint::new(f64::NAN, 1.), w, h), Err(GeoError::NonFinite));
        assert!(pixel_to_st(PixelPoint::new(1., 1.), 0, h).is_err());
    }

    #[test]
    fn basis_of_unit_square() {
        let b = build_face_basis(&unit_square()).unwrap();
        assert_eq!(b.vertices, (0, 1, 2));
        assert_eq!(b.b1, Vec2::new(1., 0.));
        assert_eq!(b.b2, Vec2::new(1., 1.));
        assert_eq!(b.w1, Vec3::new(10., 0., 0.));
        assert_eq!(b.w2, Vec3::new(10., 0., 5.));
    }

    #[test]
    fn basis_skips_collinear_triple() {
        // Vertex 1 sits on the edge 0→2, so (0,1,2) is degenerate.
        let face = TexturedFace::new(
            "c",
            "t.png",
            vec![Vec2::new(0., 0.), Vec2::new(0.5, 0.), Vec2::new(1., 0.), Vec2::new(0., 1.)],
            vec![
                Vec3::new(0., 0., 0.),
                Vec3::new(5., 0., 0.),
                Vec3::new(10., 0., 0.),
                Vec3::new(0., 0., 5.),
            ],
            10,
            10,
        )
        .unwrap();
        assert_eq!(build_face_basis(&face).unwrap().vertices, (0, 1, 3));
    }

    #[test]
    fn identical_st_vertices_fail() {
        let face = TexturedFace::new(
            "deg",
            "t.png",
            vec![Vec2::new(0.3, 0.3); 3],
            vec![Vec3::new(0., 0., 0.), Vec3::new(1., 0., 0.), Vec3::new(0., 0., 1.)],
            10,
            10,
        )
        .unwrap();
        assert_eq!(build_face_basis(&face), Err(GeoError::DegenerateFace("deg".into())));
    }

    #[test]
    fn st_to_world_fixture_values() {
        let face = unit_square();
        let b = build_face_basis(&face).unwrap();
        assert_eq!(st_to_world(StPoint::new(0., 0.), &b).unwrap(), face.world_ring[0]);
        assert_eq!(st_to_world(StPoint::new(1., 0.), &b).unwrap(), face.world_ring[1]);
        let mid = st_to_world(StPoint::new(0.5, 0.5), &b).unwrap();
        // Independent route: the square is E = 100 + 10 s, U = 10 + 5 t on N = 200.
        let oracle = Vec3::new(100. + 10. * 0.5, 200., 10. + 5. * 0.5);
        assert_abs_diff_eq!(mid, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(mid, Vec3::new(105., 200., 12.5), epsilon = 1e-12);
    }

    #[test]
    fn vertex_pixel_maps_to_vertex() {
        let face = unit_square();
        let px = st_to_pixel(StPoint::new(1., 1.), face.image_width, face.image_height);
        let w = pixel_to_world(px, &face).unwrap();
        assert_abs_diff_eq!(w, face.world_ring[2], epsilon = 1e-9);
    }

    #[test]
    fn margins_are_not_clamped() {
        let face = unit_square();
        let st = StPoint::new(1.5, -0.25);
        assert!(!st_inside_polygon(st, &face.st_ring));
        let w = st_to_world(st, &build_face_basis(&face).unwrap()).unwrap();
        assert_abs_diff_eq!(w, Vec3::new(115., 200., 8.75), epsilon = 1e-12);
        assert!(st_inside_polygon(StPoint::new(0.5, 0.5), &face.st_ring));
    }

    #[test]
    fn diagnostics_flag_non_affine_texturing() {
        let mut face = unit_square();
        assert!(!face_diagnostics(&face, 1e-9).unwrap().non_affine);
        face.st_ring[3] = Vec2::new(0.1, 1.0);
        let d = face_diagnostics(&face, 1e-9).unwrap();
        assert!(d.non_affine);
        assert!(d.vertex_residuals_m[3] > 0.5);
    }
}
