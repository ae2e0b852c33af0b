//! The `matchset/1` wire format and its validation.

use std::collections::{BTreeMap, HashSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::detect::Keypoint;
use super::matching::Match;

pub const SCHEMA: &str = "matchset/1";

/// A validation failure, located by a JSON path such as `matches[3][1]`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct MatchSetError {
    pub field: String,
    pub message: String,
}

fn err(field: impl Into<String>, message: impl Into<String>) -> MatchSetError {
    MatchSetError {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInfo {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchMeta {
    pub matcher: String,
    pub resize_long_edge: Option<u32>,
    /// Any further keys, kept verbatim.
    pub extra: BTreeMap<String, Value>,
}

/// Keypoints of two images and a partial injective mapping between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub image0: ImageInfo,
    pub image1: ImageInfo,
    pub keypoints0: Vec<Keypoint>,
    pub keypoints1: Vec<Keypoint>,
    pub matches: Vec<Match>,
    pub meta: MatchMeta,
}

fn check_keypoints(kps: &[Keypoint], img: &ImageInfo, name: &str) -> Result<(), MatchSetError> {
    for (i, k) in kps.iter().enumerate() {
        if !(k.x.is_finite() && k.y.is_finite()) {
            return Err(err(format!("{name}[{i}]"), "coordinates must be finite"));
        }
        if !(k.x >= 0.0 && k.x < img.width as f64 && k.y >= 0.0 && k.y < img.height as f64) {
            return Err(err(
                format!("{name}[{i}]"),
                format!("({}, {}) outside {}x{} image", k.x, k.y, img.width, img.height),
            ));
        }
    }
    Ok(())
}

impl MatchSet {
    /// Construct and validate.
    pub fn new(
        image0: ImageInfo,
        image1: ImageInfo,
        keypoints0: Vec<Keypoint>,
        keypoints1: Vec<Keypoint>,
        matches: Vec<Match>,
        meta: MatchMeta,
    ) -> Result<Self, MatchSetError> {
        let ms = Self {
            image0,
            image1,
            keypoints0,
            keypoints1,
            matches,
            meta,
        };
        ms.validate()?;
        Ok(ms)
    }

    pub fn validate(&self) -> Result<(), MatchSetError> {
        for (name, img) in [("image0", &self.image0), ("image1", &self.image1)] {
            if img.width == 0 || img.height == 0 {
                return Err(err(name.to_string(), "width and height must be positive"));
            }
        }
        check_keypoints(&self.keypoints0, &self.image0, "keypoints0")?;
        check_keypoints(&self.keypoints1, &self.image1, "keypoints1")?;
        let mut used0 = HashSet::new();
        let mut used1 = HashSet::new();
        for (i, m) in self.matches.iter().enumerate() {
            if m.index0 >= self.keypoints0.len() {
                return Err(err(
                    format!("matches[{i}][0]"),
                    format!("index out of range: {} >= {}", m.index0, self.keypoints0.len()),
                ));
            }
            if m.index1 >= self.keypoints1.len() {
                return Err(err(
                    format!("matches[{i}][1]"),
                    format!("index out of range: {} >= {}", m.index1, self.keypoints1.len()),
                ));
            }
            if !m.score.is_finite() {
                return Err(err(format!("matches[{i}][2]"), "score must be finite"));
            }
            let dup0 = !used0.insert(m.index0);
            let dup1 = !used1.insert(m.index1);
            if dup0 && dup1 {
                return Err(err(format!("matches[{i}]"), "duplicate pair"));
            }
            if dup0 {
                return Err(err(format!("matches[{i}][0]"), format!("keypoint {} matched twice", m.index0)));
            }
            if dup1 {
                return Err(err(format!("matches[{i}][1]"), format!("keypoint {} matched twice", m.index1)));
            }
        }
        Ok(())
    }

    pub fn num_matches(&self) -> usize {
        self.matches.len()
    }

    /// Matched keypoint coordinates as `(image0, image1)` pairs.
    pub fn matched_points(&self) -> impl Iterator<Item = (&Keypoint, &Keypoint)> + '_ {
        self.matches
            .iter()
            .map(|m| (&self.keypoints0[m.index0], &self.keypoints1[m.index1]))
    }

    pub fn to_value(&self) -> Value {
        let image = |i: &ImageInfo| json!({"path": i.path, "width": i.width, "height": i.height});
        let kps = |k: &[Keypoint]| Value::Array(k.iter().map(|k| json!([k.x, k.y])).collect());
        let mut meta = Map::new();
        meta.insert("matcher".into(), json!(self.meta.matcher));
        meta.insert("resize_long_edge".into(), json!(self.meta.resize_long_edge));
        for (k, v) in &self.meta.extra {
            meta.insert(k.clone(), v.clone());
        }
        json!({
            "schema": SCHEMA,
            "image0": image(&self.image0),
            "image1": image(&self.image1),
            "keypoints0": kps(&self.keypoints0),
            "keypoints1": kps(&self.keypoints1),
            "matches": self.matches.iter().map(|m| json!([m.index0, m.index1, m.score])).collect::<Vec<_>>(),
            "meta": meta,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("matchset values are finite")
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, MatchSetError> {
    obj.get(key).ok_or_else(|| err(join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, MatchSetError> {
    v.as_object().ok_or_else(|| err(path, "expected an object"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, MatchSetError> {
    v.as_array().ok_or_else(|| err(path, "expected an array"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, MatchSetError> {
    v.as_f64().ok_or_else(|| err(path, "expected a number"))
}

fn as_index(v: &Value, path: &str) -> Result<usize, MatchSetError> {
    v.as_u64()
        .map(|i| i as usize)
        .ok_or_else(|| err(path, "expected a non-negative integer"))
}

fn as_dim(v: &Value, path: &str) -> Result<u32, MatchSetError> {
    v.as_u64()
        .and_then(|d| u32::try_from(d).ok())
        .ok_or_else(|| err(path, "expected a non-negative 32-bit integer"))
}

fn parse_image(v: &Value, path: &str) -> Result<ImageInfo, MatchSetError> {
    let o = as_object(v, path)?;
    let p = field(o, path, "path")?;
    Ok(ImageInfo {
        path: p.as_str().ok_or_else(|| err(join(path, "path"), "expected a string"))?.to_string(),
        width: as_dim(field(o, path, "width")?, &join(path, "width"))?,
        height: as_dim(field(o, path, "height")?, &join(path, "height"))?,
    })
}

fn parse_keypoints(v: &Value, path: &str) -> Result<Vec<Keypoint>, MatchSetError> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, kp)| {
            let p = format!("{path}[{i}]");
            let xy = as_array(kp, &p)?;
            if xy.len() != 2 {
                return Err(err(&p, format!("expected [x, y], got {} elements", xy.len())));
            }
            Ok(Keypoint::at(
                as_f64(&xy[0], &format!("{p}[0]"))?,
                as_f64(&xy[1], &format!("{p}[1]"))?,
            ))
        })
        .collect()
}

fn parse_matches(v: &Value) -> Result<Vec<Match>, MatchSetError> {
    as_array(v, "matches")?
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p = format!("matches[{i}]");
            let t = as_array(m, &p)?;
            if t.len() != 3 {
                return Err(err(&p, format!("expected [index0, index1, score], got {} elements", t.len())));
            }
            Ok(Match {
                index0: as_index(&t[0], &format!("{p}[0]"))?,
                index1: as_index(&t[1], &format!("{p}[1]"))?,
                score: as_f64(&t[2], &format!("{p}[2]"))?,
            })
        })
        .collect()
}

fn parse_meta(v: &Value) -> Result<MatchMeta, MatchSetError> {
    let o = as_object(v, "meta")?;
    let matcher = field(o, "meta", "matcher")?
        .as_str()
        .ok_or_else(|| err("meta.matcher", "expected a string"))?
        .to_string();
    let resize_long_edge = match o.get("resize_long_edge") {
        None | Some(Value::Null) => None,
        Some(r) => Some(as_dim(r, "meta.resize_long_edge")?),
    };
    let extra = o
        .iter()
        .filter(|(k, _)| k.as_str() != "matcher" && k.as_str() != "resize_long_edge")
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(MatchMeta {
        matcher,
        resize_long_edge,
        extra,
    })
}

/// Parse and validate a `matchset/1` document. Every error names the
/// offending field.
pub fn load_matchset(bytes: &[u8]) -> Result<MatchSet, MatchSetError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| err("$", format!("invalid JSON: {e}")))?;
    let o = as_object(&v, "$")?;
    match field(o, "", "schema")?.as_str() {
        Some(SCHEMA) => {}
        Some(other) => return Err(err("schema", format!("unsupported schema {other:?}, expected {SCHEMA:?}"))),
        None => return Err(err("schema", "expected a string")),
    }
    MatchSet::new(
        parse_image(field(o, "", "image0")?, "image0")?,
        parse_image(field(o, "", "image1")?, "image1")?,
        parse_keypoints(field(o, "", "keypoints0")?, "keypoints0")?,
        parse_keypoints(field(o, "", "keypoints1")?, "keypoints1")?,
        parse_matches(field(o, "", "matches")?)?,
        parse_meta(field(o, "", "meta")?)?,
    )
}
