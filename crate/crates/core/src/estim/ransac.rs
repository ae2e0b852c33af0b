//! Generic RANSAC.
//!
//! Iteration `i` draws its sample from a ChaCha stream keyed by
//! `(seed, i)`, so the outcome depends only on the inputs and the seed. The
//! best hypothesis is the one with most inliers, then lowest inlier RMS
//! residual, then lowest iteration index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EstimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on the residual (pixels for reprojection).
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 10.0,
            confidence: 0.9999,
            max_iterations: 10_000,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), EstimError> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(EstimError::InvalidConfig(format!("threshold {} must be positive", self.threshold)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(EstimError::InvalidConfig(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if self.max_iterations == 0 {
            return Err(EstimError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// The inlier predicate shared by estimation and reporting.
#[inline]
pub fn is_inlier(residual: f64, threshold: f64) -> bool {
    residual < threshold
}

/// Iterations needed to draw one all-inlier minimal set with probability
/// `confidence`: `log(1 − confidence) / log(1 − w^m)`.
pub fn required_iterations(inlier_ratio: f64, confidence: f64, minimal_size: usize) -> usize {
    let p_good = inlier_ratio.clamp(0.0, 1.0).powi(minimal_size as i32);
    if p_good <= 0.0 {
        return usize::MAX;
    }
    if p_good >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        (n.ceil() as usize).max(1)
    } else {
        usize::MAX
    }
}

pub trait Estimator {
    type Model: Clone;

    /// Number of data points.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Points drawn per hypothesis.
    fn sample_size(&self) -> usize;
    /// Points that must all be inliers for a good hypothesis; drives the
    /// adaptive stopping rule.
    fn minimal_size(&self) -> usize {
        self.sample_size()
    }
    fn fit(&self, sample: &[usize]) -> Option<Self::Model>;
    fn residual(&self, model: &Self::Model, index: usize) -> f64;
}

#[derive(Debug, Clone)]
pub struct RansacOutcome<M> {
    pub model: Option<M>,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub inlier_rms: f64,
    pub iterations: usize,
}

pub fn score<E: Estimator>(est: &E, model: &E::Model, threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = vec![false; est.len()];
    let mut count = 0;
    let mut sq = 0.0;
    for (i, m) in mask.iter_mut().enumerate() {
        let r = est.residual(model, i);
        if is_inlier(r, threshold) {
            *m = true;
            count += 1;
            sq += r * r;
        }
    }
    let rms = if count > 0 { (sq / count as f64).sqrt() } else { f64::INFINITY };
    (mask, count, rms)
}

pub fn ransac<E: Estimator>(est: &E, cfg: &RansacConfig) -> RansacOutcome<E::Model> {
    let n = est.len();
    let k = est.sample_size();
    let mut best = RansacOutcome {
        model: None,
        inliers: vec![false; n],
        num_inliers: 0,
        inlier_rms: f64::INFINITY,
        iterations: 0,
    };
    if n < k || k == 0 {
        return best;
    }
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iter as u64);
        let sample = rand::seq::index::sample(&mut rng, n, k).into_vec();
        iter += 1;
        let Some(model) = est.fit(&sample) else { continue };
        let (mask, count, rms) = score(est, &model, cfg.threshold);
        if count > best.num_inliers || (count == best.num_inliers && count > 0 && rms < best.inlier_rms) {
            best.model = Some(model);
            best.inliers = mask;
            best.num_inliers = count;
            best.inlier_rms = rms;
            needed = required_iterations(count as f64 / n as f64, cfg.confidence, est.minimal_size());
        }
    }
    best.iterations = iter;
    best
}
