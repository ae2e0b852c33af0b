//! Synthetic single-facade scenes with exact ground truth.
//!
//! A rectangular facade at UTM-sized coordinates carries a procedural
//! texture; a pinhole camera looks at it from a configurable orbit position
//! and the view is rendered by inverse warping through the plane-induced
//! homography.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraRecord, Intrinsics, Pose};
use crate::estim::Homography;
use crate::features::{ImageInfo, Keypoint, Match, MatchMeta, MatchSet};
use crate::geo::{build_face_basis, pixel_to_world_with, PixelPoint};
use crate::gml::{write_citygml, TexturedFace};
use crate::{Mat3, Vec2, Vec3};

pub const TEXTURE_FILE: &str = "texture.png";
pub const VIEW_FILE: &str = "view.png";
pub const GML_FILE: &str = "scene.gml";
pub const CAMERA_FILE: &str = "camera.json";
pub const GT_MATCHES_FILE: &str = "gt.matchset.json";
pub const FACE_ID: &str = "facade_0";
/// Gray level outside the facade in rendered views.
pub const BACKGROUND: u8 = 96;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("facade is not in front of the camera")]
    FacadeBehindCamera,
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    /// World position of the facade's lower-left corner.
    pub origin: [f64; 3],
    /// Direction of the facade's horizontal edge, degrees from east towards north.
    pub azimuth_deg: f64,
    pub facade_width_m: f64,
    pub facade_height_m: f64,
    pub texture_width: u32,
    pub texture_height: u32,
    /// Distance from the camera to the facade center.
    pub standoff_m: f64,
    /// Orbit angle about the vertical axis through the facade center; 0 is frontal.
    pub yaw_deg: f64,
    /// Orbit elevation; positive looks up at the facade.
    pub pitch_deg: f64,
    pub intrinsics: Intrinsics,
    /// Number of exact ground-truth correspondences to emit.
    pub num_gt_matches: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            origin: [691_000.0, 5_336_000.0, 510.0],
            azimuth_deg: 30.0,
            facade_width_m: 20.0,
            facade_height_m: 12.0,
            texture_width: 800,
            texture_height: 480,
            standoff_m: 25.0,
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            intrinsics: Intrinsics {
                fx: 800.0,
                fy: 800.0,
                cx: 512.0,
                cy: 384.0,
                width: 1024,
                height: 768,
            },
            num_gt_matches: 400,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.facade_width_m > 0.0 && self.facade_height_m > 0.0) {
            return bad("facade size must be positive");
        }
        if self.texture_width < 2 || self.texture_height < 2 {
            return bad("texture must be at least 2x2");
        }
        if !(self.standoff_m > 0.0) {
            return bad("standoff must be positive");
        }
        if !(self.pitch_deg.abs() < 89.0) {
            return bad("pitch must be within ±89°");
        }
        if !self.origin.iter().chain([&self.azimuth_deg, &self.yaw_deg]).all(|v| v.is_finite()) {
            return bad("non-finite parameter");
        }
        Intrinsics::new(
            self.intrinsics.fx,
            self.intrinsics.fy,
            self.intrinsics.cx,
            self.intrinsics.cy,
            self.intrinsics.width,
            self.intrinsics.height,
        )
        .map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub face: TexturedFace,
    pub gml_document: String,
    pub camera: CameraRecord,
    pub texture: GrayImage,
    pub view_image: GrayImage,
    /// Texture pixels → camera pixels.
    pub plane_homography: Homography,
    pub gt_matches: MatchSet,
    pub rng_seed: u64,
}

/// Facade frame: horizontal edge direction, outward normal and world up.
fn facade_axes(azimuth_deg: f64) -> (Vec3, Vec3, Vec3) {
    let a = azimuth_deg.to_radians();
    let along = Vec3::new(a.cos(), a.sin(), 0.0);
    let up = Vec3::z();
    (along, along.cross(&up), up)
}

/// World→camera rotation looking from `eye` towards `target` (x right,
/// y down, z forward), with world `up` kept upright.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Option<Mat3> {
    let z = (target - eye).try_normalize(1e-12)?;
    let x = z.cross(up).try_normalize(1e-12)?;
    let y = z.cross(&x);
    Some(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

/// Smooth value noise: random lattice values at `cell` px spacing, bicubic
/// (smoothstep) interpolated.
fn value_noise(rng: &mut impl Rng, w: u32, h: u32, cell: u32) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let at = |i: u32, j: u32| lattice[(j * gw + i) as usize];
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = (x / cell, y / cell);
            let fx = smooth((x % cell) as f64 / cell as f64);
            let fy = smooth((y % cell) as f64 / cell as f64);
            let top = at(gx, gy) * (1.0 - fx) + at(gx + 1, gy) * fx;
            let bottom = at(gx, gy + 1) * (1.0 - fx) + at(gx + 1, gy + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Procedural facade texture: faint checker, band-limited noise and a
/// scatter of flat rectangles whose corners give the detector structure.
pub fn procedural_texture(rng: &mut impl Rng, w: u32, h: u32) -> GrayImage {
    let noise = value_noise(rng, w, h, 24);
    let mut img = GrayImage::from_fn(w, h, |x, y| {
        let checker = if ((x / 32) + (y / 32)) % 2 == 0 { 12.0 } else { -12.0 };
        let v = 128.0 + checker + 50.0 * noise[(y * w + x) as usize];
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    let count = (w as u64 * h as u64 / 3200).max(8);
    for _ in 0..count {
        let rw = rng.random_range(8..=(w / 10).max(9));
        let rh = rng.random_range(8..=(h / 8).max(9));
        let x0 = rng.random_range(0..w.saturating_sub(rw).max(1));
        let y0 = rng.random_range(0..h.saturating_sub(rh).max(1));
        let value: u8 = rng.random();
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                img.put_pixel(x, y, Luma([value]));
            }
        }
    }
    img
}

/// Bilinear sample at continuous pixel coordinates (pixel `(k, l)` centered
/// at `(k + 0.5, l + 0.5)`), clamping at the border. `None` outside
/// `[0, w) × [0, h)`.
pub fn sample_bilinear(img: &GrayImage, p: Vec2) -> Option<f64> {
    let (w, h) = img.dimensions();
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64) {
        return None;
    }
    let (fx, fy) = (p.x - 0.5, p.y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let clamp = |v: f64, max: u32| v.clamp(0.0, (max - 1) as f64) as u32;
    let px = |x: f64, y: f64| img.get_pixel(clamp(x, w), clamp(y, h)).0[0] as f64;
    let top = px(x0, y0) * (1.0 - ax) + px(x0 + 1.0, y0) * ax;
    let bottom = px(x0, y0 + 1.0) * (1.0 - ax) + px(x0 + 1.0, y0 + 1.0) * ax;
    Some(top * (1.0 - ay) + bottom * ay)
}

/// Render `dst = src ∘ h⁻¹` where `h` maps source pixels to destination
/// pixels. Destination pixels without a source get `fill`.
pub fn warp(src: &GrayImage, h: &Homography, width: u32, height: u32, fill: u8) -> GrayImage {
    let inv = h.inverse();
    GrayImage::from_fn(width, height, |x, y| {
        let q = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
        inv.as_ref()
            .and_then(|inv| inv.apply(q))
            .and_then(|p| sample_bilinear(src, p))
            .map_or(Luma([fill]), |v| Luma([v.round().clamp(0.0, 255.0) as u8]))
    })
}

/// Homography taking texture pixels of a rectangular facade to camera
/// pixels, built directly from the facade frame (not from the face rings).
fn plane_homography(cfg: &SceneConfig, pose: &Pose, top_left: &Vec3, along: &Vec3, up: &Vec3) -> Homography {
    let k = cfg.intrinsics.k_matrix();
    let r = pose.rotation;
    let du = along * (cfg.facade_width_m / cfg.texture_width as f64);
    let dv = -up * (cfg.facade_height_m / cfg.texture_height as f64);
    // Camera-relative offset keeps the UTM magnitude out of the sum.
    let rel = top_left - pose.center();
    let m = Mat3::from_columns(&[r * du, r * dv, r * rel]);
    Homography::new(k * m)
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let origin = Vec3::from(cfg.origin);
    let (along, normal, up) = facade_axes(cfg.azimuth_deg);
    let (fw, fh) = (cfg.facade_width_m, cfg.facade_height_m);
    let world_ring = vec![origin, origin + along * fw, origin + along * fw + up * fh, origin + up * fh];
    let st_ring = vec![Vec2::new(0., 0.), Vec2::new(1., 0.), Vec2::new(1., 1.), Vec2::new(0., 1.)];
    let face = TexturedFace::new(
        FACE_ID,
        TEXTURE_FILE,
        st_ring,
        world_ring.clone(),
        cfg.texture_width,
        cfg.texture_height,
    )
    .map_err(|e| SynthError::Config(e.to_string()))?;

    let center = origin + along * (fw / 2.0) + up * (fh / 2.0);
    let (yaw, pitch) = (cfg.yaw_deg.to_radians(), cfg.pitch_deg.to_radians());
    let dir = normal * (pitch.cos() * yaw.cos()) + along * (pitch.cos() * yaw.sin()) + up * pitch.sin();
    let eye = center + dir * cfg.standoff_m;
    if dir.dot(&normal) <= 1e-9 {
        return Err(SynthError::FacadeBehindCamera);
    }
    let rotation = look_at(&eye, &center, &up).ok_or(SynthError::FacadeBehindCamera)?;
    let pose = Pose::from_center(rotation, eye);
    if world_ring.iter().any(|x| pose.transform(x).z <= 0.0) {
        return Err(SynthError::FacadeBehindCamera);
    }
    let k = cfg.intrinsics;
    let camera = CameraRecord {
        image_path: VIEW_FILE.into(),
        intrinsics: k,
        gt_pose: pose,
        tags: vec!["synthetic".into()],
    };

    let texture = procedural_texture(&mut rng, cfg.texture_width, cfg.texture_height);
    let h = plane_homography(cfg, &pose, &(origin + up * fh), &along, &up);
    let view_image = warp(&texture, &h, k.width, k.height, BACKGROUND);
    let gml_document = write_citygml(std::slice::from_ref(&face));

    let basis = build_face_basis(&face).map_err(|e| SynthError::Config(e.to_string()))?;
    let (tw, th) = (cfg.texture_width as f64, cfg.texture_height as f64);
    let mut kps0 = Vec::new();
    let mut kps1 = Vec::new();
    // Rejection-sample texture points whose projection lands in the view.
    let mut attempts = 0;
    while kps0.len() < cfg.num_gt_matches && attempts < 100 * cfg.num_gt_matches.max(1) {
        attempts += 1;
        let p = PixelPoint::new(rng.random_range(0.0..tw), rng.random_range(0.0..th));
        let Ok(x) = pixel_to_world_with(p, &face, &basis) else { continue };
        let Ok(q) = project(&x, &pose, &k) else { continue };
        if !k.contains(q) {
            continue;
        }
        kps0.push(Keypoint::at(p.u, p.v));
        kps1.push(Keypoint::at(q.u, q.v));
    }
    let matches = (0..kps0.len())
        .map(|i| Match {
            index0: i,
            index1: i,
            score: 1.0,
        })
        .collect();
    let gt_matches = MatchSet::new(
        ImageInfo {
            path: TEXTURE_FILE.into(),
            width: cfg.texture_width,
            height: cfg.texture_height,
        },
        ImageInfo {
            path: VIEW_FILE.into(),
            width: k.width,
            height: k.height,
        },
        kps0,
        kps1,
        matches,
        MatchMeta {
            matcher: "synth-gt".into(),
            resize_long_edge: None,
            extra: Default::default(),
        },
    )
    .map_err(|e| SynthError::Config(e.to_string()))?;

    Ok(SynthScene {
        face,
        gml_document,
        camera,
        texture,
        view_image,
        plane_homography: h,
        gt_matches,
        rng_seed: cfg.seed,
    })
}

/// Paths written by [`SynthScene::write`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub texture: PathBuf,
    pub view: PathBuf,
    pub gml: PathBuf,
    pub camera: PathBuf,
    pub gt_matches: PathBuf,
}

impl SynthScene {
    pub fn write(&self, dir: &Path) -> Result<SceneFiles, SynthError> {
        std::fs::create_dir_all(dir)?;
        let files = SceneFiles {
            texture: dir.join(TEXTURE_FILE),
            view: dir.join(VIEW_FILE),
            gml: dir.join(GML_FILE),
            camera: dir.join(CAMERA_FILE),
            gt_matches: dir.join(GT_MATCHES_FILE),
        };
        self.texture.save(&files.texture)?;
        self.view_image.save(&files.view)?;
        std::fs::write(&files.gml, &self.gml_document)?;
        std::fs::write(&files.camera, self.camera.to_json())?;
        std::fs::write(&files.gt_matches, self.gt_matches.to_json())?;
        Ok(files)
    }
}

/// Which matches [`corrupt_matches`] turned into outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    /// Per match, in match order.
    pub outlier: Vec<bool>,
}

impl Corruption {
    pub fn num_outliers(&self) -> usize {
        self.outlier.iter().filter(|&&o| o).count()
    }
}

/// Replace the image-1 keypoints of `round(fraction · n)` seeded-random
/// matches with uniform in-bounds pixels and add N(0, σ²) noise to the
/// image-1 keypoints of the others.
pub fn corrupt_matches(ms: &MatchSet, outlier_fraction: f64, noise_sigma_px: f64, seed: u64) -> Result<(MatchSet, Corruption), SynthError> {
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(SynthError::Config(format!("outlier fraction {outlier_fraction} not in [0, 1)")));
    }
    if !(noise_sigma_px >= 0.0 && noise_sigma_px.is_finite()) {
        return Err(SynthError::Config(format!("noise sigma {noise_sigma_px} must be finite and ≥ 0")));
    }
    let n = ms.matches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (outlier_fraction * n as f64).round() as usize;
    let mut outlier = vec![false; n];
    for i in index::sample(&mut rng, n, count) {
        outlier[i] = true;
    }
    let mut out = ms.clone();
    let (w, h) = (ms.image1.width as f64, ms.image1.height as f64);
    let noise = Normal::new(0.0, noise_sigma_px).expect("sigma validated");
    // Largest representable coordinate strictly inside the image.
    let inside = |v: f64, max: f64| v.clamp(0.0, max - max * f64::EPSILON);
    for (m, &is_out) in ms.matches.iter().zip(&outlier) {
        let kp = &mut out.keypoints1[m.index1];
        if is_out {
            kp.x = rng.random_range(0.0..w);
            kp.y = rng.random_range(0.0..h);
        } else if noise_sigma_px > 0.0 {
            kp.x = inside(kp.x + noise.sample(&mut rng), w);
            kp.y = inside(kp.y + noise.sample(&mut rng), h);
        }
    }
    Ok((out, Corruption { outlier }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::pixel_to_world;
    use crate::gml::{parse_citygml, FixedTextureSize, IngestOptions};

    fn small() -> SceneConfig {
        SceneConfig {
            texture_width: 400,
            texture_height: 240,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(a.texture, b.texture);
        assert_eq!(a.view_image, b.view_image);
        assert_eq!(a.gml_document, b.gml_document);
        assert_eq!(a.gt_matches, b.gt_matches);
        let c = generate_scene(&SceneConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.texture, c.texture);
    }

    #[test]
    fn frontal_homography_is_similarity() {
        let s = generate_scene(&small()).unwrap();
        let h = s.plane_homography.0;
        assert!(h[(2, 0)].abs() < 1e-9 && h[(2, 1)].abs() < 1e-9);
        assert!((h[(0, 0)] - h[(1, 1)]).abs() < 1e-9 && (h[(0, 1)] + h[(1, 0)]).abs() < 1e-9);
    }

    #[test]
    fn consistency_equation() {
        for (yaw, pitch) in [(0.0, 0.0), (35.0, 10.0), (-50.0, -15.0)] {
            let cfg = SceneConfig {
                yaw_deg: yaw,
                pitch_deg: pitch,
                ..small()
            };
            let s = generate_scene(&cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..1000 {
                let p = PixelPoint::new(rng.random_range(0.0..400.0), rng.random_range(0.0..240.0));
                let x = pixel_to_world(p, &s.face).unwrap();
                let q = project(&x, &s.camera.gt_pose, &s.camera.intrinsics).unwrap();
                let hq = s.plane_homography.apply(p.to_vec()).unwrap();
                assert!((q.to_vec() - hq).norm() < 1e-6, "{:?} vs {:?}", q, hq);
            }
        }
    }

    #[test]
    fn gml_round_trip() {
        let s = generate_scene(&small()).unwrap();
        let ingest = parse_citygml(s.gml_document.as_bytes(), &FixedTextureSize(400, 240), &IngestOptions::default()).unwrap();
        assert_eq!(ingest.faces, vec![s.face.clone()]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = PixelPoint::new(rng.random_range(0.0..400.0), rng.random_range(0.0..240.0));
            let a = pixel_to_world(p, &s.face).unwrap();
            let b = pixel_to_world(p, &ingest.faces[0]).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn facade_behind_camera_rejected() {
        let cfg = SceneConfig { yaw_deg: 120.0, ..small() };
        assert!(matches!(generate_scene(&cfg), Err(SynthError::FacadeBehindCamera)));
        assert!(matches!(
            generate_scene(&SceneConfig {
                standoff_m: -1.0,
                ..small()
            }),
            Err(SynthError::Config(_))
        ));
    }

    #[test]
    fn gt_matches_are_exact_projections() {
        let s = generate_scene(&small()).unwrap();
        assert_eq!(s.gt_matches.num_matches(), 400);
        for (a, b) in s.gt_matches.matched_points() {
            let x = pixel_to_world(PixelPoint::new(a.x, a.y), &s.face).unwrap();
            let q = project(&x, &s.camera.gt_pose, &s.camera.intrinsics).unwrap();
            assert!((q.u - b.x).abs() < 1e-9 && (q.v - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn corruption_counts() {
        let s = generate_scene(&small()).unwrap();
        let (same, c) = corrupt_matches(&s.gt_matches, 0.0, 0.0, 1).unwrap();
        assert_eq!(same, s.gt_matches);
        assert_eq!(c.num_outliers(), 0);
        let mut ms = s.gt_matches.clone();
        ms.matches.truncate(100);
        let (bad, c) = corrupt_matches(&ms, 0.5, 1.0, 1).unwrap();
        assert_eq!(c.num_outliers(), 50);
        bad.validate().unwrap();
        assert_eq!(corrupt_matches(&ms, 0.5, 1.0, 1).unwrap().1, c);
        assert!(corrupt_matches(&ms, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn bilinear_half_pixel_convention() {
        let img = GrayImage::from_fn(4, 1, |x, _| Luma([(x * 10) as u8]));
        assert_eq!(sample_bilinear(&img, Vec2::new(0.5, 0.5)), Some(0.0));
        assert_eq!(sample_bilinear(&img, Vec2::new(1.0, 0.5)), Some(5.0));
        assert_eq!(sample_bilinear(&img, Vec2::new(3.9, 0.5)), Some(30.0));
        assert_eq!(sample_bilinear(&img, Vec2::new(4.0, 0.5)), None);
    }
}
