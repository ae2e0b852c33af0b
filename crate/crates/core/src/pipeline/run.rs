//! Per-pair evaluation and the parallel run driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use image::imageops::{self, FilterType};
use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{center_points, centered_pose, offset_gt_translation, rotation_error_deg, translation_error_m, CameraRecord};
use crate::estim::{pnp_ransac, RansacConfig};
use crate::features::{match_images, ImageInfo, Keypoint, MatchMeta, MatchSet, BUILTIN_MATCHER};
use crate::geo::{build_face_basis, pixel_to_world_with, PixelPoint};
use crate::gml::{parse_citygml, IngestOptions, TextureDir, TexturedFace};
use crate::metrics::{aggregate, precision_at, reprojection_errors, PairResult, SummaryTable};

use super::manifest::{MatchSource, PairManifest, PairSpec};
use super::{PipelineError, RunConfig};

pub const REPORT_SCHEMA: &str = "report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of config and manifest.
    pub config_hash: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    /// Conventions a reader needs to compare numbers with other sources.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub summary: SummaryTable,
    pub pairs: Vec<PairResult>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let r: Self = serde_json::from_slice(bytes).map_err(|e| PipelineError::validation(format!("report: {e}")))?;
        if r.schema != REPORT_SCHEMA {
            return Err(PipelineError::validation(format!("report: unsupported schema {:?}", r.schema)));
        }
        Ok(r)
    }

    /// Aggregate again from the per-pair results.
    pub fn recompute_summary(&self) -> Result<SummaryTable, PipelineError> {
        aggregate(&self.pairs, &self.config.metrics).map_err(|e| PipelineError::Runtime(e.to_string()))
    }
}

const NOTES: [&str; 3] = [
    "means and AUCs are over all pairs; failed pairs count with infinite pose error, zero precision and zero inliers",
    "AUC integrates the empirical recall step function exactly (no interpolation)",
    "trans_err_m compares translations in the frame centered on the matched world points",
];

pub fn config_hash(cfg: &RunConfig, manifest: &PairManifest) -> String {
    let canonical = serde_json::json!({"config": cfg, "manifest": manifest});
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// RANSAC seed for one pair: the run seed mixed with a hash of the pair id,
/// so results do not depend on pair order or scheduling.
pub fn pair_seed(seed: u64, pair_id: &str) -> u64 {
    let d = Sha256::digest(pair_id.as_bytes());
    seed ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Resize so the longer side equals `long_edge`. Returns the image and the
/// per-axis factors mapping resized coordinates back to the original.
pub fn resize_long_edge(img: &GrayImage, long_edge: u32) -> (GrayImage, f64, f64) {
    let (w, h) = img.dimensions();
    let s = long_edge as f64 / w.max(h) as f64;
    let nw = ((w as f64 * s).round() as u32).max(1);
    let nh = ((h as f64 * s).round() as u32).max(1);
    if (nw, nh) == (w, h) {
        return (img.clone(), 1.0, 1.0);
    }
    let out = imageops::resize(img, nw, nh, FilterType::Triangle);
    (out, w as f64 / nw as f64, h as f64 / nh as f64)
}

/// Map keypoints from a resized image back to original continuous pixels.
fn rescale(kps: Vec<Keypoint>, sx: f64, sy: f64, w: u32, h: u32) -> Vec<Keypoint> {
    // Largest coordinate strictly inside the original image.
    let inside = |v: f64, max: u32| v.min(max as f64 * (1.0 - f64::EPSILON));
    kps.into_iter()
        .map(|k| Keypoint {
            x: inside(k.x * sx, w),
            y: inside(k.y * sy, h),
            ..k
        })
        .collect()
}

struct PairInputs {
    face: TexturedFace,
    camera: CameraRecord,
    texture_path: PathBuf,
}

fn load_inputs(spec: &PairSpec, base: &Path) -> Result<PairInputs, String> {
    let gml_path = base.join(&spec.gml);
    let gml_dir = gml_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let bytes = std::fs::read(&gml_path).map_err(|e| format!("reading {}: {e}", spec.gml))?;
    let ingest =
        parse_citygml(&bytes, &TextureDir(gml_dir.clone()), &IngestOptions::default()).map_err(|e| format!("parsing {}: {e}", spec.gml))?;
    let face = ingest
        .faces
        .into_iter()
        .find(|f| f.face_id == spec.face_id)
        .ok_or_else(|| format!("face {:?} not found in {} (or its texture is unreadable)", spec.face_id, spec.gml))?;
    let camera = CameraRecord::from_json(&std::fs::read(base.join(&spec.camera)).map_err(|e| format!("reading {}: {e}", spec.camera))?)
        .map_err(|e| format!("parsing {}: {e}", spec.camera))?;
    let texture_path = gml_dir.join(&face.texture_path);
    Ok(PairInputs {
        face,
        camera,
        texture_path,
    })
}

fn load_gray(path: &Path) -> Result<GrayImage, String> {
    Ok(image::open(path)
        .map_err(|e| format!("loading {}: {e}", path.display()))?
        .to_luma8())
}

/// Run the builtin matcher, optionally on resized images; keypoints come
/// back in original pixels.
fn builtin_matches(spec: &PairSpec, base: &Path, inputs: &PairInputs, cfg: &RunConfig) -> Result<(MatchSet, f64), String> {
    let tex = load_gray(&inputs.texture_path)?;
    let cam = load_gray(&base.join(&spec.camera_image))?;
    if tex.dimensions() != (inputs.face.image_width, inputs.face.image_height) {
        return Err("texture size differs from the face record".into());
    }
    let k = &inputs.camera.intrinsics;
    if cam.dimensions() != (k.width, k.height) {
        return Err(format!(
            "camera image is {:?}, intrinsics say {}x{}",
            cam.dimensions(),
            k.width,
            k.height
        ));
    }
    let start = Instant::now();
    let (k0, k1, matches) = match cfg.resize_long_edge {
        Some(l) => {
            let (t, tx, ty) = resize_long_edge(&tex, l);
            let (c, cx, cy) = resize_long_edge(&cam, l);
            let (k0, k1, m) = match_images(&t, &c, &cfg.matcher);
            (
                rescale(k0, tx, ty, tex.width(), tex.height()),
                rescale(k1, cx, cy, cam.width(), cam.height()),
                m,
            )
        }
        None => match_images(&tex, &cam, &cfg.matcher),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let ms = MatchSet::new(
        ImageInfo {
            path: inputs.texture_path.to_string_lossy().into_owned(),
            width: tex.width(),
            height: tex.height(),
        },
        ImageInfo {
            path: spec.camera_image.clone(),
            width: cam.width(),
            height: cam.height(),
        },
        k0,
        k1,
        matches,
        MatchMeta {
            matcher: BUILTIN_MATCHER.into(),
            resize_long_edge: cfg.resize_long_edge,
            extra: Default::default(),
        },
    )
    .map_err(|e| format!("builtin matcher produced an invalid match set: {e}"))?;
    Ok((ms, elapsed))
}

fn file_matches(path: &str, base: &Path, inputs: &PairInputs) -> Result<MatchSet, String> {
    let bytes = std::fs::read(base.join(path)).map_err(|e| format!("reading {path}: {e}"))?;
    let ms = crate::features::load_matchset(&bytes).map_err(|e| format!("{path}: {e}"))?;
    let k = &inputs.camera.intrinsics;
    if (ms.image0.width, ms.image0.height) != (inputs.face.image_width, inputs.face.image_height) {
        return Err(format!("{path}: image0 size does not match the texture"));
    }
    if (ms.image1.width, ms.image1.height) != (k.width, k.height) {
        return Err(format!("{path}: image1 size does not match the camera"));
    }
    Ok(ms)
}

/// `meta.matcher` of a match file that may not pass validation, so a pair
/// whose file is broken still lands in its method's summary row.
fn declared_matcher(path: &Path) -> Option<String> {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).ok()?).ok()?;
    v.get("meta")?.get("matcher")?.as_str().map(str::to_string)
}

/// Evaluate one pair. Never fails: problems become a failed [`PairResult`].
pub fn evaluate_pair(spec: &PairSpec, base: &Path, cfg: &RunConfig) -> PairResult {
    let default_method = match &spec.matches {
        MatchSource::Builtin => BUILTIN_MATCHER.to_string(),
        MatchSource::File(path) => declared_matcher(&base.join(path)).unwrap_or_else(|| "file".to_string()),
    };
    let method = spec.method.clone().unwrap_or(default_method);
    let fail = |reason: String| PairResult::failed(&spec.pair_id, &method, reason, &cfg.metrics);
    let inputs = match load_inputs(spec, base) {
        Ok(i) => i,
        Err(e) => return fail(e),
    };
    let (ms, runtime) = match &spec.matches {
        MatchSource::Builtin => match builtin_matches(spec, base, &inputs, cfg) {
            Ok(r) => r,
            Err(e) => return fail(e),
        },
        MatchSource::File(path) => match file_matches(path, base, &inputs) {
            Ok(ms) => (ms, 0.0),
            Err(e) => return fail(e),
        },
    };
    let method = spec.method.clone().unwrap_or_else(|| match &spec.matches {
        MatchSource::Builtin => BUILTIN_MATCHER.to_string(),
        MatchSource::File(_) => ms.meta.matcher.clone(),
    });
    score_pair(
        &spec.pair_id,
        &method,
        &ms,
        &inputs.face,
        &inputs.camera,
        cfg,
        if cfg.timing { runtime } else { 0.0 },
    )
}

/// Metrics and pose estimation for a match set against ground truth.
pub fn score_pair(
    pair_id: &str,
    method: &str,
    ms: &MatchSet,
    face: &TexturedFace,
    cam: &CameraRecord,
    cfg: &RunConfig,
    runtime_s: f64,
) -> PairResult {
    let errors = reprojection_errors(ms, face, cam);
    let mut result = PairResult {
        pair_id: pair_id.to_string(),
        method: method.to_string(),
        precision_at: precision_at(&errors, &cfg.metrics.precision_thresholds_px),
        per_match_reproj_px: errors,
        rot_err_deg: f64::INFINITY,
        trans_err_m: f64::INFINITY,
        center_err_m: f64::INFINITY,
        num_keypoints0: ms.keypoints0.len(),
        num_keypoints1: ms.keypoints1.len(),
        num_matches: ms.num_matches(),
        num_inliers: 0,
        runtime_s,
        failure: true,
        failure_reason: None,
    };
    let Ok(basis) = build_face_basis(face) else {
        result.failure_reason = Some("degenerate face".into());
        return result;
    };
    let mut world = Vec::with_capacity(ms.num_matches());
    let mut pixels = Vec::with_capacity(ms.num_matches());
    for (a, b) in ms.matched_points() {
        if let Ok(x) = pixel_to_world_with(PixelPoint::new(a.x, a.y), face, &basis) {
            world.push(x);
            pixels.push(PixelPoint::new(b.x, b.y));
        }
    }
    let Ok((centered, offset)) = center_points(&world) else {
        result.failure_reason = Some("no matches".into());
        return result;
    };
    let ransac = RansacConfig {
        seed: pair_seed(cfg.seed, pair_id),
        ..cfg.ransac
    };
    let est = pnp_ransac(&centered, &pixels, &cam.intrinsics, &ransac);
    if !est.success {
        result.failure_reason = Some(format!("pose estimation failed with {} matches", ms.num_matches()));
        return result;
    }
    let gt_t = offset_gt_translation(&cam.gt_pose, &offset);
    result.rot_err_deg = rotation_error_deg(&est.pose.rotation, &cam.gt_pose.rotation);
    result.trans_err_m = translation_error_m(&est.pose.translation, &gt_t);
    result.center_err_m = (est.pose.center() - centered_pose(&cam.gt_pose, &offset).center()).norm();
    result.num_inliers = est.num_inliers();
    result.failure = false;
    result
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Evaluate every pair of `manifest` (paths relative to `base`). File
/// references are checked before any work; per-pair problems only fail
/// that pair.
pub fn run_evaluation(manifest: &PairManifest, base: &Path, cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    manifest.validate(base)?;
    if manifest.pairs.is_empty() {
        return Err(PipelineError::validation("manifest has no pairs"));
    }
    let started_at = cfg.timing.then(timestamp);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Runtime(format!("thread pool: {e}")))?;
    let mut pairs: Vec<PairResult> = pool.install(|| manifest.pairs.par_iter().map(|p| evaluate_pair(p, base, cfg)).collect());
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    for p in &pairs {
        if let Some(reason) = &p.failure_reason {
            log::warn!("pair {}: {reason}", p.pair_id);
        }
    }
    let summary = aggregate(&pairs, &cfg.metrics).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    Ok(RunReport {
        schema: REPORT_SCHEMA.into(),
        provenance: Provenance {
            config_hash: config_hash(cfg, manifest),
            seed: cfg.seed,
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            started_at,
            finished_at: cfg.timing.then(timestamp),
            notes: NOTES.iter().map(|s| s.to_string()).collect(),
        },
        config: cfg.clone(),
        summary,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_factors() {
        let img = GrayImage::new(2000, 1000);
        let (r, sx, sy) = resize_long_edge(&img, 1024);
        assert_eq!(r.dimensions(), (1024, 512));
        assert_eq!((sx, sy), (2000.0 / 1024.0, 1000.0 / 512.0));
        let (r, sx, _) = resize_long_edge(&GrayImage::new(1024, 10), 1024);
        assert_eq!((r.width(), sx), (1024, 1.0));
    }

    #[test]
    fn pair_seed_depends_on_id_only() {
        assert_eq!(pair_seed(5, "a"), pair_seed(5, "a"));
        assert_ne!(pair_seed(5, "a"), pair_seed(5, "b"));
        assert_ne!(pair_seed(5, "a"), pair_seed(6, "a"));
    }
}
