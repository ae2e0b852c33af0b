//! Robust geometric model fitting.
//!
//! - [`ransac`]: a generic, seeded hypothesize-and-verify loop.
//! - [`homography`]: Hartley-normalized DLT.
//! - [`p3p`]: Grunert's quartic minimal absolute-pose solver.
//! - [`lm`]: Levenberg–Marquardt reprojection refinement on SO(3)×R³.
//! - [`pnp`]: P3P inside RANSAC followed by LM on the consensus set.

pub mod homography;
pub mod lm;
pub mod p3p;
pub mod pnp;
pub mod ransac;

use thiserror::Error;

pub use homography::{homography_dlt, Homography};
pub use lm::{lm_refine_pose, LmReport};
pub use p3p::p3p_solve;
pub use pnp::{pnp_ransac, reprojection_error, PoseEstimate};
pub use ransac::{is_inlier, RansacConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EstimError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("correspondence lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}
