//! CityGML appearance ingestion.
//!
//! Supports the subset needed to geo-reference facade textures:
//! `ParameterizedTexture` / `TexCoordList` / `textureCoordinates` keyed by
//! ring id, and `LinearRing` geometry given as a 3D `posList` (or a run of
//! `pos` elements). Everything else in the document is ignored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Vec2, Vec3};

/// Ring closure tolerance for dropping the duplicated closing vertex.
const CLOSURE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GmlError {
    #[error("document is not valid UTF-8: {0}")]
    Utf8(#[from] std::str::Utf8Error),
    #[error("XML parse error at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("invalid face {face_id}: {reason}")]
    InvalidFace { face_id: String, reason: String },
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
}

/// One planar model face with its texture link and vertex rings.
///
/// `st_ring[j]` and `world_ring[j]` are the same polygon vertex. Rings are
/// open: the closing duplicate of the first vertex is removed at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturedFace {
    pub face_id: String,
    pub texture_path: String,
    pub st_ring: Vec<Vec2>,
    pub world_ring: Vec<Vec3>,
    pub image_width: u32,
    pub image_height: u32,
}

impl TexturedFace {
    pub fn new(
        face_id: impl Into<String>,
        texture_path: impl Into<String>,
        st_ring: Vec<Vec2>,
        world_ring: Vec<Vec3>,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GmlError> {
        let face = Self {
            face_id: face_id.into(),
            texture_path: texture_path.into(),
            st_ring,
            world_ring,
            image_width,
            image_height,
        };
        face.validate()?;
        Ok(face)
    }

    pub fn validate(&self) -> Result<(), GmlError> {
        let fail = |reason: String| GmlError::InvalidFace {
            face_id: self.face_id.clone(),
            reason,
        };
        if self.st_ring.len() != self.world_ring.len() {
            return Err(fail(format!(
                "st ring has {} vertices, world ring has {}",
                self.st_ring.len(),
                self.world_ring.len()
            )));
        }
        if self.st_ring.len() < 3 {
            return Err(fail(format!("ring has {} vertices, need at least 3", self.st_ring.len())));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(fail("texture dimensions must be positive".into()));
        }
        let finite =
            self.st_ring.iter().all(|p| p.iter().all(|v| v.is_finite())) && self.world_ring.iter().all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(fail("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// Largest distance (m) of a world vertex from the least-squares plane.
    pub fn planarity_deviation(&self) -> f64 {
        planarity_deviation(&self.world_ring)
    }
}

/// Max point-to-plane distance for the best-fit plane of `points`.
pub fn planarity_deviation(points: &[Vec3]) -> f64 {
    if points.len() < 4 {
        return 0.0;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut m = nalgebra::DMatrix::<f64>::zeros(points.len(), 3);
    for (i, p) in points.iter().enumerate() {
        let d = p - centroid;
        m.set_row(i, &d.transpose());
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three singular values");
    let normal = Vec3::new(v_t[(idx, 0)], v_t[(idx, 1)], v_t[(idx, 2)]);
    points.iter().map(|p| (p - centroid).dot(&normal).abs()).fold(0.0, f64::max)
}

/// Non-fatal ingest/filter events. A face named in a warning is either
/// skipped (`skipped == true`) or kept with a diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub face_id: String,
    pub kind: WarningKind,
    pub detail: String,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    MissingRing,
    LengthMismatch,
    InteriorRing,
    TooFewVertices,
    BadCoordinates,
    UnresolvedTexture,
    NonPlanar,
    BelowMinSize,
    TooMuchNoData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Constant added to every U coordinate (height-datum correction).
    pub vertical_offset_m: f64,
    /// Faces deviating more than this from planarity get a `NonPlanar` warning.
    pub planarity_tolerance_m: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            vertical_offset_m: 0.0,
            planarity_tolerance_m: 0.05,
        }
    }
}

/// Resolves a texture reference to its pixel dimensions.
pub trait TextureSizer {
    fn texture_size(&self, texture_path: &str) -> Result<(u32, u32), String>;
}

/// Every texture has the same size. Handy for fixtures without image files.
#[derive(Debug, Clone, Copy)]
pub struct FixedTextureSize(pub u32, pub u32);

impl TextureSizer for FixedTextureSize {
    fn texture_size(&self, _: &str) -> Result<(u32, u32), String> {
        Ok((self.0, self.1))
    }
}

/// Reads image headers relative to a base directory (usually the GML's).
#[derive(Debug, Clone)]
pub struct TextureDir(pub PathBuf);

impl TextureSizer for TextureDir {
    fn texture_size(&self, texture_path: &str) -> Result<(u32, u32), String> {
        image::image_dimensions(self.0.join(texture_path)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ingest {
    pub faces: Vec<TexturedFace>,
    pub warnings: Vec<IngestWarning>,
}

struct RingGeom {
    coords: Result<Vec<Vec3>, String>,
    interior: bool,
    polygon_has_holes: bool,
}

fn local_attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    node.attributes().find(|a| a.name() == name).map(|a| a.value())
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number {tok:?}"))
        })
        .collect()
}

fn ring_coords(ring: roxmltree::Node) -> Result<Vec<Vec3>, String> {
    let mut values = Vec::new();
    let mut dim = 3usize;
    for child in ring.children().filter(|c| c.is_element()) {
        match child.tag_name().name() {
            "posList" => {
                if let Some(d) = local_attr(child, "srsDimension") {
                    dim = d.parse().map_err(|_| format!("bad srsDimension {d:?}"))?;
                }
                values.extend(parse_numbers(child.text().unwrap_or(""))?);
            }
            "pos" => {
                let p = parse_numbers(child.text().unwrap_or(""))?;
                if p.len() != 3 {
                    return Err(format!("pos with {} values, expected 3", p.len()));
                }
                values.extend(p);
            }
            _ => {}
        }
    }
    if dim != 3 {
        return Err(format!("srsDimension {dim} unsupported, need 3"));
    }
    if values.len() % 3 != 0 {
        return Err(format!("{} coordinate values is not a multiple of 3", values.len()));
    }
    Ok(values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn drop_closing<T, F>(ring: &mut Vec<T>, dist: F)
where
    F: Fn(&T, &T) -> f64,
{
    if ring.len() >= 2 && dist(&ring[0], &ring[ring.len() - 1]) <= CLOSURE_EPS {
        ring.pop();
    }
}

/// Parse a CityGML document into textured faces.
///
/// One face is produced per `textureCoordinates` element whose ring resolves.
/// Faces that cannot be built are skipped and reported in
/// [`Ingest::warnings`]; only malformed XML is an error.
pub fn parse_citygml(document: &[u8], sizer: &dyn TextureSizer, opts: &IngestOptions) -> Result<Ingest, GmlError> {
    let text = std::str::from_utf8(document)?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        GmlError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let mut rings: HashMap<&str, RingGeom> = HashMap::new();
    for ring in doc.descendants().filter(|n| n.tag_name().name() == "LinearRing") {
        let Some(id) = local_attr(ring, "id") else { continue };
        let parent = ring.parent_element();
        let interior = parent.is_some_and(|p| p.tag_name().name() == "interior");
        let polygon_has_holes = parent
            .and_then(|p| p.parent_element())
            .is_some_and(|poly| poly.children().any(|c| c.tag_name().name() == "interior"));
        rings.insert(
            id,
            RingGeom {
                coords: ring_coords(ring),
                interior,
                polygon_has_holes,
            },
        );
    }

    let mut out = Ingest::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for tex in doc.descendants().filter(|n| n.tag_name().name() == "ParameterizedTexture") {
        let image_uri = tex
            .children()
            .find(|c| c.tag_name().name() == "imageURI")
            .and_then(|c| c.text())
            .map(str::trim)
            .unwrap_or("");
        for coords in tex.descendants().filter(|n| n.tag_name().name() == "textureCoordinates") {
            let ring_ref = local_attr(coords, "ring").unwrap_or("").trim_start_matches('#');
            let base_id = if ring_ref.is_empty() { "<unnamed>" } else { ring_ref };
            let count = seen.entry(base_id.to_string()).or_insert(0);
            *count += 1;
            let face_id = if *count == 1 {
                base_id.to_string()
            } else {
                format!("{base_id}:{count}")
            };
            let mut warn = |kind, detail: String| {
                out.warnings.push(IngestWarning {
                    face_id: face_id.clone(),
                    kind,
                    detail,
                    skipped: true,
                });
            };
            if image_uri.is_empty() {
                warn(WarningKind::UnresolvedTexture, "ParameterizedTexture without imageURI".into());
                continue;
            }
            let Some(geom) = rings.get(ring_ref) else {
                warn(WarningKind::MissingRing, format!("texture targets ring {ring_ref:?}, not found"));
                continue;
            };
            if geom.interior || geom.polygon_has_holes {
                warn(WarningKind::InteriorRing, "polygons with interior rings are not supported".into());
                continue;
            }
            let mut world = match &geom.coords {
                Ok(c) => c.clone(),
                Err(e) => {
                    warn(WarningKind::BadCoordinates, format!("posList: {e}"));
                    continue;
                }
            };
            let st_values = match parse_numbers(coords.text().unwrap_or("")) {
                Ok(v) if v.len() % 2 == 0 => v,
                Ok(v) => {
                    warn(WarningKind::BadCoordinates, format!("{} texture coordinate values is odd", v.len()));
                    continue;
                }
                Err(e) => {
                    warn(WarningKind::BadCoordinates, format!("textureCoordinates: {e}"));
                    continue;
                }
            };
            let mut st: Vec<Vec2> = st_values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
            drop_closing(&mut st, |a, b| (a - b).norm());
            drop_closing(&mut world, |a, b| (a - b).norm());
            if st.len() != world.len() {
                warn(
                    WarningKind::LengthMismatch,
                    format!("{} st vertices against {} ring vertices", st.len(), world.len()),
                );
                continue;
            }
            if st.len() < 3 {
                warn(WarningKind::TooFewVertices, format!("{} vertices", st.len()));
                continue;
            }
            let (w, h) = match sizer.texture_size(image_uri) {
                Ok((w, h)) if w > 0 && h > 0 => (w, h),
                Ok((w, h)) => {
                    warn(WarningKind::UnresolvedTexture, format!("{image_uri}: empty image {w}x{h}"));
                    continue;
                }
                Err(e) => {
                    warn(WarningKind::UnresolvedTexture, format!("{image_uri}: {e}"));
                    continue;
                }
            };
            for p in &mut world {
                p.z += opts.vertical_offset_m;
            }
            let face = TexturedFace {
                face_id: face_id.clone(),
                texture_path: image_uri.to_string(),
                st_ring: st,
                world_ring: world,
                image_width: w,
                image_height: h,
            };
            let dev = face.planarity_deviation();
            if dev > opts.planarity_tolerance_m {
                out.warnings.push(IngestWarning {
                    face_id: face_id.clone(),
                    kind: WarningKind::NonPlanar,
                    detail: format!("max deviation {dev:.4} m from best-fit plane"),
                    skipped: false,
                });
            }
            out.faces.push(face);
        }
    }
    Ok(out)
}

/// Serialize faces as a minimal CityGML 2.0 document that [`parse_citygml`]
/// reads back to the same rings. Numbers use shortest round-trip formatting.
pub fn write_citygml(faces: &[TexturedFace]) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <core:CityModel xmlns:core=\"http://www.opengis.net/citygml/2.0\" \
         xmlns:bldg=\"http://www.opengis.net/citygml/building/2.0\" \
         xmlns:app=\"http://www.opengis.net/citygml/appearance/2.0\" \
         xmlns:gml=\"http://www.opengis.net/gml\">\n",
    );
    s.push_str("  <core:cityObjectMember>\n    <bldg:Building gml:id=\"building_0\">\n");
    for face in faces {
        let _ = write!(
            s,
            "      <bldg:boundedBy>\n        <bldg:WallSurface>\n          <bldg:lod2MultiSurface>\n            <gml:MultiSurface>\n              <gml:surfaceMember>\n                <gml:Polygon gml:id=\"poly_{id}\">\n                  <gml:exterior>\n                    <gml:LinearRing gml:id=\"{id}\">\n                      <gml:posList srsDimension=\"3\">",
            id = xml_escape(&face.face_id)
        );
        let closed = face.world_ring.iter().chain(face.world_ring.first());
        let coords: Vec<String> = closed.map(|p| format!("{} {} {}", p.x, p.y, p.z)).collect();
        s.push_str(&coords.join(" "));
        s.push_str(
            "</gml:posList>\n                    </gml:LinearRing>\n                  </gml:exterior>\n                </gml:Polygon>\n              </gml:surfaceMember>\n            </gml:MultiSurface>\n          </bldg:lod2MultiSurface>\n        </bldg:WallSurface>\n      </bldg:boundedBy>\n",
        );
    }
    s.push_str("      <app:appearance>\n        <app:Appearance>\n          <app:theme>rgbTexture</app:theme>\n");
    for face in faces {
        let _ = write!(
            s,
            "          <app:surfaceDataMember>\n            <app:ParameterizedTexture>\n              <app:imageURI>{uri}</app:imageURI>\n              <app:target uri=\"#poly_{id}\">\n                <app:TexCoordList>\n                  <app:textureCoordinates ring=\"#{id}\">",
            uri = xml_escape(&face.texture_path),
            id = xml_escape(&face.face_id)
        );
        let closed = face.st_ring.iter().chain(face.st_ring.first());
        let coords: Vec<String> = closed.map(|p| format!("{} {}", p.x, p.y)).collect();
        s.push_str(&coords.join(" "));
        s.push_str(
            "</app:textureCoordinates>\n                </app:TexCoordList>\n              </app:target>\n            </app:ParameterizedTexture>\n          </app:surfaceDataMember>\n",
        );
    }
    s.push_str("        </app:Appearance>\n      </app:appearance>\n    </bldg:Building>\n  </core:cityObjectMember>\n</core:CityModel>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Texture quality thresholds applied before matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_width: u32,
    pub min_height: u32,
    pub max_nodata_fraction: f64,
}

impl FilterPolicy {
    pub fn new(min_width: u32, min_height: u32, max_nodata_fraction: f64) -> Result<Self, GmlError> {
        let p = Self {
            min_width,
            min_height,
            max_nodata_fraction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GmlError> {
        if self.min_width < 1 || self.min_height < 1 {
            return Err(GmlError::InvalidPolicy("minimum size must be at least 1x1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_nodata_fraction) {
            return Err(GmlError::InvalidPolicy(format!(
                "max_nodata_fraction {} outside [0, 1]",
                self.max_nodata_fraction
            )));
        }
        Ok(())
    }
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_width: 64,
            min_height: 64,
            max_nodata_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureStats {
    pub width: u32,
    pub height: u32,
    pub nodata_fraction: f64,
}

impl TextureStats {
    pub fn of(img: &DynamicImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            nodata_fraction: nodata_fraction(img),
        }
    }
}

/// Fraction of no-data pixels: alpha == 0 when the image has alpha,
/// otherwise exact black.
pub fn nodata_fraction(img: &DynamicImage) -> f64 {
    let total = img.width() as u64 * img.height() as u64;
    if total == 0 {
        return 1.0;
    }
    let rgba = img.to_rgba16();
    let nodata = if img.color().has_alpha() {
        rgba.pixels().filter(|p| p.0[3] == 0).count()
    } else {
        rgba.pixels().filter(|p| p.0[..3].iter().all(|&c| c == 0)).count()
    };
    nodata as f64 / total as f64
}

/// Source of texture statistics for [`filter_faces`].
pub trait ImageStore {
    fn stats(&self, texture_path: &str) -> Result<TextureStats, String>;
}

/// Images on disk, resolved relative to `root`.
#[derive(Debug, Clone)]
pub struct DirImageStore {
    pub root: PathBuf,
}

impl DirImageStore {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }
}

impl ImageStore for DirImageStore {
    fn stats(&self, texture_path: &str) -> Result<TextureStats, String> {
        let img = image::open(self.root.join(texture_path)).map_err(|e| e.to_string())?;
        Ok(TextureStats::of(&img))
    }
}

impl ImageStore for HashMap<String, DynamicImage> {
    fn stats(&self, texture_path: &str) -> Result<TextureStats, String> {
        self.get(texture_path)
            .map(TextureStats::of)
            .ok_or_else(|| format!("no image for {texture_path:?}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<TexturedFace>,
    pub warnings: Vec<IngestWarning>,
}

/// Keep faces whose texture is large enough and mostly valid. Order preserved.
pub fn filter_faces(faces: &[TexturedFace], policy: &FilterPolicy, images: &dyn ImageStore) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for face in faces {
        let mut reject = |kind, detail: String| {
            out.warnings.push(IngestWarning {
                face_id: face.face_id.clone(),
                kind,
                detail,
                skipped: true,
            })
        };
        let stats = match images.stats(&face.texture_path) {
            Ok(s) => s,
            Err(e) => {
                reject(WarningKind::UnresolvedTexture, e);
                continue;
            }
        };
        if face.image_width < policy.min_width || face.image_height < policy.min_height {
            reject(
                WarningKind::BelowMinSize,
                format!(
                    "{}x{} below {}x{}",
                    face.image_width, face.image_height, policy.min_width, policy.min_height
                ),
            );
            continue;
        }
        if stats.nodata_fraction > policy.max_nodata_fraction {
            reject(
                WarningKind::TooMuchNoData,
                format!("{:.3} no-data above {:.3}", stats.nodata_fraction, policy.max_nodata_fraction),
            );
            continue;
        }
        out.kept.push(face.clone());
    }
    out
}
