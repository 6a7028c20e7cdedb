//! Out-of-body scene detection.
//!
//! Frames are sampled at a fixed rate and scored by a [`FrameClassifier`]. The
//! score sequence is smoothed with a centred moving average and turned into
//! intervals by hysteresis thresholding; a privacy margin is then added around
//! each interval.

mod classifier;
mod intervals;
mod smooth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{
    classify_frames, reference_heuristic, ClassifierSpec, FrameClassifier, HeuristicClassifier, LinearModel,
    LinearModelClassifier, ANALYSIS_MAX_WIDTH,
};
pub use intervals::{extract_intervals, pad_and_merge};
pub use smooth::smooth_predictions;

use crate::media::MediaError;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid detector configuration: {0}")]
    ConfigInvalid(String),
    #[error("empty image")]
    EmptyImage,
    #[error("classifier failed: {0}")]
    ClassifierFailure(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

/// Classifier output for one sampled frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub time_s: f64,
    pub p_oob: f64,
}

/// Sampling, smoothing and thresholding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub sample_fps: f64,
    /// Odd number of samples in the centred smoothing window.
    pub smooth_window: usize,
    pub theta_on: f64,
    pub theta_off: f64,
    pub min_duration_s: f64,
    pub pad_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { sample_fps: 1.0, smooth_window: 1, theta_on: 0.7, theta_off: 0.4, min_duration_s: 1.0, pad_s: 0.5 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::ConfigInvalid(m));
        if !(self.theta_off < self.theta_on) {
            return bad(format!("theta_off {} must be below theta_on {}", self.theta_off, self.theta_on));
        }
        if !(0.0..=1.0).contains(&self.theta_on) || !(0.0..=1.0).contains(&self.theta_off) {
            return bad("thresholds must lie in [0, 1]".into());
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return bad(format!("smooth_window {} must be odd and >= 1", self.smooth_window));
        }
        if !(self.sample_fps > 0.0) || !(self.min_duration_s > 0.0) || !(self.pad_s > 0.0) {
            return bad("sample_fps, min_duration_s and pad_s must be positive".into());
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_fps
    }
}
