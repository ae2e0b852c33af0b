//! Per-pair and aggregate evaluation metrics.
//!
//! Failures carry infinite pose error and count in every denominator, so a
//! matcher cannot improve its scores by abstaining.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, CameraRecord};
use crate::estim::{is_inlier, Homography};
use crate::features::MatchSet;
use crate::geo::{build_face_basis, pixel_to_world_with, PixelPoint};
use crate::gml::TexturedFace;
use crate::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no values to aggregate")]
    Empty,
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
}

/// Serde for `f64` that writes non-finite values as the strings `"inf"`,
/// `"-inf"` and `"nan"`, since JSON has no literal for them.
pub mod float_or_inf {
    use super::*;

    pub fn to_value(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::json!(v)
        } else if v.is_nan() {
            serde_json::json!("nan")
        } else if v > 0.0 {
            serde_json::json!("inf")
        } else {
            serde_json::json!("-inf")
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_value(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Num(f64),
            Str(String),
        }
        match Wire::deserialize(d)? {
            Wire::Num(v) => Ok(v),
            Wire::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_value(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Item(#[serde(with = "super")] f64);
            Ok(Vec::<Item>::deserialize(d)?.into_iter().map(|i| i.0).collect())
        }
    }
}

/// Ordered `threshold → value` map. Serialized as a JSON object whose keys
/// are the thresholds in shortest round-trip form (`3`, `0.5`, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdMap(pub Vec<(f64, f64)>);

impl ThresholdMap {
    pub fn get(&self, threshold: f64) -> Option<f64> {
        self.0.iter().find(|(t, _)| *t == threshold).map(|(_, v)| *v)
    }
}

impl Serialize for ThresholdMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (t, v) in &self.0 {
            m.serialize_entry(&format!("{t}"), &float_or_inf::to_value(*v))?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for ThresholdMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ThresholdMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from threshold to value")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut a: A) -> Result<ThresholdMap, A::Error> {
                #[derive(Deserialize)]
                struct Item(#[serde(with = "float_or_inf")] f64);
                let mut out = Vec::new();
                while let Some((k, v)) = a.next_entry::<String, Item>()? {
                    let t: f64 = k.parse().map_err(|_| de::Error::custom(format!("bad threshold key {k:?}")))?;
                    out.push((t, v.0));
                }
                out.sort_by(|a, b| a.0.total_cmp(&b.0));
                Ok(ThresholdMap(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Thresholds used when scoring and aggregating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub precision_thresholds_px: Vec<f64>,
    pub auc_rotation_deg: Vec<f64>,
    pub auc_translation_m: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            precision_thresholds_px: vec![3.0, 30.0],
            auc_rotation_deg: vec![3.0],
            auc_translation_m: vec![1.0],
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for &t in self
            .precision_thresholds_px
            .iter()
            .chain(&self.auc_rotation_deg)
            .chain(&self.auc_translation_m)
        {
            if !(t > 0.0 && t.is_finite()) {
                return Err(MetricsError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

/// Evaluation of one (texture, camera image) pair by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair_id: String,
    pub method: String,
    #[serde(with = "float_or_inf::vec")]
    pub per_match_reproj_px: Vec<f64>,
    pub precision_at: ThresholdMap,
    #[serde(with = "float_or_inf")]
    pub rot_err_deg: f64,
    /// Distance between estimated and ground-truth translation in the
    /// centered frame.
    #[serde(with = "float_or_inf")]
    pub trans_err_m: f64,
    #[serde(with = "float_or_inf")]
    pub center_err_m: f64,
    pub num_keypoints0: usize,
    pub num_keypoints1: usize,
    pub num_matches: usize,
    pub num_inliers: usize,
    pub runtime_s: f64,
    pub failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl PairResult {
    /// A pair on which nothing could be evaluated.
    pub fn failed(pair_id: impl Into<String>, method: impl Into<String>, reason: impl Into<String>, cfg: &MetricConfig) -> Self {
        Self {
            pair_id: pair_id.into(),
            method: method.into(),
            per_match_reproj_px: Vec::new(),
            precision_at: precision_at(&[], &cfg.precision_thresholds_px),
            rot_err_deg: f64::INFINITY,
            trans_err_m: f64::INFINITY,
            center_err_m: f64::INFINITY,
            num_keypoints0: 0,
            num_keypoints1: 0,
            num_matches: 0,
            num_inliers: 0,
            runtime_s: 0.0,
            failure: true,
            failure_reason: Some(reason.into()),
        }
    }

    /// Structural invariants: precision in [0, 1] and
    /// inliers ≤ matches ≤ min(keypoints).
    pub fn check(&self) -> Result<(), String> {
        if let Some((t, p)) = self.precision_at.0.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(format!("precision@{t} = {p} outside [0, 1]"));
        }
        if self.num_inliers > self.num_matches {
            return Err(format!("{} inliers > {} matches", self.num_inliers, self.num_matches));
        }
        if self.num_matches > self.num_keypoints0.min(self.num_keypoints1) {
            return Err(format!("{} matches exceed keypoint counts", self.num_matches));
        }
        Ok(())
    }
}

/// Ground-truth reprojection error of every match: the texture keypoint is
/// lifted to the facade and projected with the ground-truth pose.
/// Non-liftable or behind-camera points get infinite error.
pub fn reprojection_errors(ms: &MatchSet, face: &TexturedFace, cam: &CameraRecord) -> Vec<f64> {
    let Ok(basis) = build_face_basis(face) else {
        return vec![f64::INFINITY; ms.matches.len()];
    };
    ms.matched_points()
        .map(|(a, b)| {
            pixel_to_world_with(PixelPoint::new(a.x, a.y), face, &basis)
                .ok()
                .and_then(|x| project(&x, &cam.gt_pose, &cam.intrinsics).ok())
                .map_or(f64::INFINITY, |q| (q.to_vec() - Vec2::new(b.x, b.y)).norm())
        })
        .collect()
}

/// Fraction of errors `≤ θ` among all errors, for each threshold. An empty
/// error list gives 0.
pub fn precision_at(errors: &[f64], thresholds: &[f64]) -> ThresholdMap {
    ThresholdMap(
        thresholds
            .iter()
            .map(|&t| {
                if errors.is_empty() {
                    return (t, 0.0);
                }
                let hits = errors.iter().filter(|&&e| e <= t).count();
                (t, hits as f64 / errors.len() as f64)
            })
            .collect(),
    )
}

/// Count of errors passing the shared RANSAC inlier predicate.
pub fn count_inliers(errors: &[f64], threshold: f64) -> usize {
    errors.iter().filter(|&&e| is_inlier(e, threshold)).count()
}

/// Area under the recall curve `r(e) = #{eᵢ ≤ e} / N` on `[0, T]`, divided
/// by `T`. Integrated exactly: each error `eᵢ < T` contributes `(T − eᵢ)/(N T)`.
pub fn auc(errors: &[f64], max_threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let mut finite: Vec<f64> = errors.iter().copied().filter(|e| *e < max_threshold).collect();
    finite.sort_by(f64::total_cmp);
    let area: f64 = finite.iter().map(|e| max_threshold - e.max(0.0)).sum();
    area / (errors.len() as f64 * max_threshold)
}

pub fn mean_average_accuracy(aucs: &[f64]) -> Result<f64, MetricsError> {
    if aucs.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(mean(aucs))
}

/// Mean distance between the images of the four corners under the two
/// homographies.
pub fn homography_corner_error(h_est: &Homography, h_gt: &Homography, width: f64, height: f64) -> f64 {
    let corners = [
        Vec2::new(0., 0.),
        Vec2::new(width, 0.),
        Vec2::new(width, height),
        Vec2::new(0., height),
    ];
    let total: f64 = corners
        .iter()
        .map(|c| match (h_est.apply(*c), h_gt.apply(*c)) {
            (Some(a), Some(b)) => (a - b).norm(),
            _ => f64::INFINITY,
        })
        .sum();
    total / 4.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median with infinities ordered last; an even count averages the middle pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Recall curve of `errors` as `(error, recall)` steps up to `max`, for plots.
pub fn recall_curve(errors: &[f64], max: f64) -> Vec<(f64, f64)> {
    let n = errors.len() as f64;
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| *e <= max).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![(0.0, 0.0)];
    for (i, e) in sorted.iter().enumerate() {
        out.push((*e, out.last().unwrap().1));
        out.push((*e, (i + 1) as f64 / n));
    }
    out.push((max, out.last().unwrap().1));
    out
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub num_pairs: usize,
    pub num_failures: usize,
    pub mean_precision: ThresholdMap,
    pub auc_rotation: ThresholdMap,
    pub auc_translation: ThresholdMap,
    /// Mean of all AUC values in the row.
    pub maa: f64,
    pub mean_inliers: f64,
    /// Mean over pairs of `100 · inliers / matches` (0 without matches).
    pub mean_inlier_pct: f64,
    /// Median rotation error in degrees.
    #[serde(with = "float_or_inf")]
    pub median_rot_err_deg: f64,
    /// Mean over pairs of the average keypoint count of the two images.
    pub mean_keypoints: f64,
    pub mean_matches: f64,
    pub mean_runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub config: MetricConfig,
    pub rows: Vec<SummaryRow>,
}

fn summarize(method: &str, results: &[&PairResult], cfg: &MetricConfig) -> SummaryRow {
    let n = results.len() as f64;
    let mean_of = |f: &dyn Fn(&PairResult) -> f64| results.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_precision = ThresholdMap(
        cfg.precision_thresholds_px
            .iter()
            .map(|&t| {
                let v = mean_of(&|r| if r.failure { 0.0 } else { r.precision_at.get(t).unwrap_or(0.0) });
                (t, v)
            })
            .collect(),
    );
    let pose_err =
        |f: &dyn Fn(&PairResult) -> f64| -> Vec<f64> { results.iter().map(|r| if r.failure { f64::INFINITY } else { f(r) }).collect() };
    let rot = pose_err(&|r| r.rot_err_deg);
    let trans = pose_err(&|r| r.trans_err_m);
    let auc_rotation = ThresholdMap(cfg.auc_rotation_deg.iter().map(|&t| (t, auc(&rot, t))).collect());
    let auc_translation = ThresholdMap(cfg.auc_translation_m.iter().map(|&t| (t, auc(&trans, t))).collect());
    let all_aucs: Vec<f64> = auc_rotation.0.iter().chain(&auc_translation.0).map(|(_, v)| *v).collect();
    SummaryRow {
        method: method.to_string(),
        num_pairs: results.len(),
        num_failures: results.iter().filter(|r| r.failure).count(),
        mean_precision,
        auc_rotation,
        auc_translation,
        maa: mean_average_accuracy(&all_aucs).unwrap_or(0.0),
        mean_inliers: mean_of(&|r| r.num_inliers as f64),
        mean_inlier_pct: mean_of(&|r| {
            if r.num_matches == 0 {
                0.0
            } else {
                100.0 * r.num_inliers as f64 / r.num_matches as f64
            }
        }),
        median_rot_err_deg: median(&rot).unwrap_or(f64::INFINITY),
        mean_keypoints: mean_of(&|r| (r.num_keypoints0 + r.num_keypoints1) as f64 / 2.0),
        mean_matches: mean_of(&|r| r.num_matches as f64),
        mean_runtime_s: mean_of(&|r| r.runtime_s),
    }
}

/// One row per method, ordered by method name. Within a method, pairs are
/// folded in the order given.
pub fn aggregate(results: &[PairResult], cfg: &MetricConfig) -> Result<SummaryTable, MetricsError> {
    cfg.validate()?;
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_method: BTreeMap<&str, Vec<&PairResult>> = BTreeMap::new();
    for r in results {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    Ok(SummaryTable {
        config: cfg.clone(),
        rows: by_method.iter().map(|(m, rs)| summarize(m, rs, cfg)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;
    use proptest::prelude::*;

    fn result(method: &str, rot: f64, trans: f64, inliers: usize, failure: bool) -> PairResult {
        PairResult {
            pair_id: format!("{method}-{rot}"),
            method: method.into(),
            per_match_reproj_px: vec![1.0, 40.0],
            precision_at: precision_at(&[1.0, 40.0], &[3.0, 30.0]),
            rot_err_deg: rot,
            trans_err_m: trans,
            center_err_m: trans,
            num_keypoints0: 100,
            num_keypoints1: 120,
            num_matches: 50,
            num_inliers: inliers,
            runtime_s: 0.0,
            failure,
            failure_reason: None,
        }
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at(&[1.0, 2.0], &[3.0]).get(3.0), Some(1.0));
        assert_eq!(precision_at(&[10.0, 20.0, 40.0, f64::INFINITY], &[30.0]).get(30.0), Some(0.5));
        assert_eq!(precision_at(&[], &[30.0]).get(30.0), Some(0.0));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0; 5], 3.0), 1.0);
        assert_eq!(auc(&[3.0, 4.0, f64::INFINITY], 3.0), 0.0);
        assert!((auc(&[1.0, 3.0, f64::INFINITY], 3.0) - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn maa_examples() {
        assert_eq!(mean_average_accuracy(&[0.5]), Ok(0.5));
        assert_eq!(mean_average_accuracy(&[0.0, 1.0]), Ok(0.5));
        assert_eq!(mean_average_accuracy(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn corner_error_examples() {
        let h = Homography::new(Mat3::new(1.1, 0.02, 5., -0.01, 0.95, 3., 1e-4, 2e-5, 1.));
        assert_eq!(homography_corner_error(&h, &h, 640., 480.), 0.0);
        let shift = Homography::new(Mat3::new(1., 0., 3., 0., 1., 4., 0., 0., 1.));
        assert!((homography_corner_error(&shift.compose(&h), &h, 640., 480.) - 5.0).abs() < 1e-9);
        let vanish = Homography(Mat3::new(1., 0., 0., 0., 1., 0., 1., 0., 0.));
        assert_eq!(homography_corner_error(&vanish, &h, 640., 480.), f64::INFINITY);
    }

    #[test]
    fn median_orders_infinity_last() {
        assert_eq!(median(&[f64::INFINITY, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[1.0, f64::INFINITY]), Some(f64::INFINITY));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn single_pair_row_equals_pair() {
        let r = result("m", 1.5, 0.25, 30, false);
        let t = aggregate(std::slice::from_ref(&r), &MetricConfig::default()).unwrap();
        let row = &t.rows[0];
        assert_eq!(row.mean_inliers, 30.0);
        assert_eq!(row.mean_precision, r.precision_at);
        assert_eq!(row.median_rot_err_deg, 1.5);
        assert_eq!(row.auc_rotation.get(3.0), Some(auc(&[1.5], 3.0)));
        assert_eq!(row.mean_keypoints, 110.0);
    }

    #[test]
    fn failure_accounting() {
        let ok = result("m", 1.5, 0.25, 30, false);
        let mut bad = result("m", 0.0, 0.0, 0, true);
        bad.pair_id = "b".into();
        let t = aggregate(&[ok.clone(), bad], &MetricConfig::default()).unwrap();
        let row = &t.rows[0];
        assert_eq!(row.mean_inliers, 15.0);
        assert_eq!(row.num_failures, 1);
        assert_eq!(row.auc_rotation.get(3.0), Some(auc(&[1.5, f64::INFINITY], 3.0)));
        assert_eq!(row.mean_precision.get(3.0), Some(0.25));
    }

    #[test]
    fn rows_sorted_by_method() {
        let rs = [result("zeta", 1.0, 0.1, 5, false), result("alpha", 2.0, 0.2, 6, false)];
        let t = aggregate(&rs, &MetricConfig::default()).unwrap();
        let names: Vec<_> = t.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["alpha", "zeta"]);
        assert_eq!(aggregate(&[], &MetricConfig::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn pair_result_json_round_trip() {
        let mut r = result("m", f64::INFINITY, f64::INFINITY, 0, true);
        r.per_match_reproj_px.push(f64::INFINITY);
        r.failure_reason = Some("pose".into());
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"rot_err_deg\":\"inf\""));
        assert!(s.contains("\"precision_at\":{\"3\":0.5,\"30\":0.5}"));
        let back: PairResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pair_invariants() {
        let mut r = result("m", 1.0, 1.0, 10, false);
        assert!(r.check().is_ok());
        r.num_inliers = 60;
        assert!(r.check().is_err());
    }

    proptest! {
        #[test]
        fn auc_monotone_and_permutation_invariant(mut errs in prop::collection::vec(prop_oneof![0.0..20.0f64, Just(f64::INFINITY)], 1..40), t in 0.1..20.0f64, dt in 0.0..5.0f64) {
            let a = auc(&errs, t);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(auc(&errs, t + dt) >= a - 1e-15);
            errs.reverse();
            prop_assert_eq!(auc(&errs, t), a);
            errs.push(f64::INFINITY);
            prop_assert!(auc(&errs, t) <= a);
        }

        #[test]
        fn precision_monotone(errs in prop::collection::vec(0.0..50.0f64, 0..30), t in 0.1..40.0f64, dt in 0.0..10.0f64) {
            let p = precision_at(&errs, &[t, t + dt]);
            prop_assert!(p.0[0].1 <= p.0[1].1);
        }
    }
}
