//! Camera localization against textured CityGML LoD2 building models.
//!
//! The crate turns facade textures into geo-referenced 2D–3D correspondence
//! sources, estimates absolute camera pose from texture-to-image feature
//! matches with P3P inside RANSAC, and scores matchers with a reprojection,
//! pose-error and error–recall AUC metric suite.
//!
//! Module map:
//! - [`gml`]: CityGML appearance parsing and texture-quality filtering.
//! - [`geo`]: texture pixel → st → world conversion over a face-aligned basis.
//! - [`camera`]: pinhole intrinsics, world→camera poses, centering, pose errors.
//! - [`features`]: ORB-like detector/descriptor, Hamming matching, match files.
//! - [`estim`]: generic RANSAC, homography DLT, P3P, PnP-RANSAC, LM refinement.
//! - [`metrics`]: per-pair and aggregate evaluation metrics.
//! - [`synth`]: self-consistent synthetic facade scenes.
//! - [`pipeline`]: manifests, pair building, evaluation runs and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod estim;
pub mod features;
pub mod geo;
pub mod gml;
pub mod metrics;
mod numeric;
pub mod pipeline;
pub mod synth;

pub use camera::{CameraRecord, Intrinsics, Pose};
pub use features::{Keypoint, MatchSet};
pub use geo::{FaceBasis, PixelPoint, StPoint, WorldPoint};
pub use gml::{FilterPolicy, TexturedFace};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
