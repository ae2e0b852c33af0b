//! Pair manifests and visibility-based pair building.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraRecord;
use crate::gml::TexturedFace;
use crate::{Vec2, Vec3};

use super::PipelineError;

pub const MANIFEST_SCHEMA: &str = "manifest/1";

/// Where a pair's matches come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSource {
    /// Run the builtin classical matcher on the two images.
    Builtin,
    /// Read a `matchset/1` file.
    File(String),
}

/// One texture/camera-image pair. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub pair_id: String,
    pub gml: String,
    pub face_id: String,
    pub camera_image: String,
    pub camera: String,
    pub matches: MatchSource,
    /// Method name for reporting; defaults to the matcher's own name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub schema: String,
    pub pairs: Vec<PairSpec>,
}

impl Default for PairManifest {
    fn default() -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            pairs: Vec::new(),
        }
    }
}

impl PairManifest {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let m: Self = serde_json::from_slice(bytes).map_err(|e| PipelineError::validation(format!("manifest: {e}")))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(PipelineError::validation(format!(
                "manifest: unsupported schema {:?}, expected {MANIFEST_SCHEMA:?}",
                m.schema
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Unique pair ids and, resolved against `base`, existing files for
    /// every direct reference. All problems are reported together.
    pub fn validate(&self, base: &Path) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.pair_id.is_empty() {
                problems.push(format!("pairs[{i}].pair_id: empty"));
            } else if !ids.insert(p.pair_id.as_str()) {
                problems.push(format!("pairs[{i}].pair_id: duplicate {:?}", p.pair_id));
            }
            if p.pair_id.contains(['/', '\\']) {
                problems.push(format!("pairs[{i}].pair_id: must not contain path separators"));
            }
            let mut files = vec![("gml", &p.gml), ("camera_image", &p.camera_image), ("camera", &p.camera)];
            if let MatchSource::File(f) = &p.matches {
                files.push(("matches.file", f));
            }
            for (field, rel) in files {
                if !base.join(rel).is_file() {
                    problems.push(format!("pairs[{i}].{field}: file not found: {rel}"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(problems))
        }
    }
}

/// When a camera sees a face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityRule {
    /// Minimum area of the projected face inside the image, as a fraction
    /// of the image area.
    pub min_overlap: f64,
}

impl Default for VisibilityRule {
    fn default() -> Self {
        Self { min_overlap: 0.05 }
    }
}

/// Clip `subject` to the axis-aligned rectangle `[0, w] × [0, h]`
/// (Sutherland–Hodgman; correct area for non-convex subjects too).
pub fn clip_to_rect(subject: &[Vec2], w: f64, h: f64) -> Vec<Vec2> {
    // Signed distance to each of the four half-planes.
    let edges: [fn(&Vec2, f64, f64) -> f64; 4] = [|p, _, _| p.x, |p, w, _| w - p.x, |p, _, _| p.y, |p, _, h| h - p.y];
    let mut poly = subject.to_vec();
    for dist in edges {
        if poly.is_empty() {
            break;
        }
        let input = std::mem::take(&mut poly);
        for i in 0..input.len() {
            let (a, b) = (input[i], input[(i + 1) % input.len()]);
            let (da, db) = (dist(&a, w, h), dist(&b, w, h));
            if da >= 0.0 {
                poly.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                poly.push(a + (b - a) * (da / (da - db)));
            }
        }
    }
    poly
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].perp(&poly[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

/// Fraction of the image covered by the face's projection, or `None` if any
/// vertex is not in front of the camera.
pub fn overlap_fraction(face: &TexturedFace, cam: &CameraRecord) -> Option<f64> {
    let k = &cam.intrinsics;
    let mut projected = Vec::with_capacity(face.world_ring.len());
    for x in &face.world_ring {
        let p: Vec3 = cam.gt_pose.transform(x);
        if !(p.z > 0.0) {
            return None;
        }
        projected.push(k.project_cam(&p).to_vec());
    }
    let (w, h) = (k.width as f64, k.height as f64);
    Some(polygon_area(&clip_to_rect(&projected, w, h)) / (w * h))
}

pub fn is_visible(face: &TexturedFace, cam: &CameraRecord, rule: &VisibilityRule) -> bool {
    overlap_fraction(face, cam).is_some_and(|f| f >= rule.min_overlap)
}

/// A face together with the GML file it came from.
#[derive(Debug, Clone)]
pub struct FaceRef {
    pub gml: PathBuf,
    pub face: TexturedFace,
}

/// A camera record together with the JSON file it came from.
#[derive(Debug, Clone)]
pub struct CameraRef {
    pub record_path: PathBuf,
    pub record: CameraRecord,
}

fn rel_string(path: &Path, base: &Path) -> String {
    let p = path.strip_prefix(base).unwrap_or(path);
    p.to_string_lossy().replace('\\', "/")
}

/// One pair per visible (face, camera) combination, all with builtin
/// matching. Paths are written relative to `base` where possible; camera
/// image paths in records are taken relative to their record file.
pub fn build_pairs(faces: &[FaceRef], cameras: &[CameraRef], rule: &VisibilityRule, base: &Path) -> PairManifest {
    let mut pairs = Vec::new();
    let mut ids = HashSet::new();
    for f in faces {
        for c in cameras {
            if !is_visible(&f.face, &c.record, rule) {
                continue;
            }
            let stem = Path::new(&c.record.image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "camera".into());
            let face_id: String = f
                .face
                .face_id
                .chars()
                .map(|ch| if ch == '/' || ch == '\\' { '_' } else { ch })
                .collect();
            let mut id = format!("{face_id}__{stem}");
            let mut n = 2;
            while !ids.insert(id.clone()) {
                id = format!("{face_id}__{stem}:{n}");
                n += 1;
            }
            let image = c.record_path.parent().unwrap_or(Path::new("")).join(&c.record.image_path);
            pairs.push(PairSpec {
                pair_id: id,
                gml: rel_string(&f.gml, base),
                face_id: f.face.face_id.clone(),
                camera_image: rel_string(&image, base),
                camera: rel_string(&c.record_path, base),
                matches: MatchSource::Builtin,
                method: None,
            });
        }
    }
    PairManifest {
        schema: MANIFEST_SCHEMA.into(),
        pairs,
    }
}
