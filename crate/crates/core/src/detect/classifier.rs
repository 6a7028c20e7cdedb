use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DetectError, DetectorConfig, FramePrediction};
use crate::cancel::CancelToken;
use crate::media::{probe, read_frames, RgbFrame, Sampling};
use crate::progress::ProgressSink;
use crate::tool::MediaTool;

/// Frames wider than this are downscaled (aspect kept) before scoring.
pub const ANALYSIS_MAX_WIDTH: u32 = 320;

/// Scores a frame with the probability that it shows an out-of-body scene.
///
/// Implementations must be deterministic: the same pixels give the same score.
pub trait FrameClassifier: Send {
    fn classify(&mut self, frame: &RgbFrame) -> Result<f64, DetectError>;
}

fn is_skin([r, g, b]: [u8; 3]) -> bool {
    r > 95 && g > 40 && b > 20 && r > g && r > b && r - g > 15
}

/// Per-frame colour summary, every component in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Features {
    mean_rgb: [f64; 3],
    luma: f64,
    skin_ratio: f64,
}

fn features(frame: &RgbFrame) -> Result<Features, DetectError> {
    if frame.is_empty() {
        return Err(DetectError::EmptyImage);
    }
    let mut sum = [0u64; 3];
    let mut skin = 0u64;
    let mut n = 0u64;
    for px in frame.pixels() {
        for c in 0..3 {
            sum[c] += px[c] as u64;
        }
        skin += u64::from(is_skin(px));
        n += 1;
    }
    let mean_rgb = sum.map(|s| s as f64 / n as f64 / 255.0);
    let luma = 0.299 * mean_rgb[0] + 0.587 * mean_rgb[1] + 0.114 * mean_rgb[2];
    Ok(Features { mean_rgb, luma, skin_ratio: skin as f64 / n as f64 })
}

/// Colour heuristic: the average of normalised mean luma and the fraction of
/// skin-toned pixels. Bright, skin-dominated frames score high; the dark red
/// interior of a body cavity scores low.
pub fn reference_heuristic(frame: &RgbFrame) -> Result<f64, DetectError> {
    let f = features(frame)?;
    Ok((0.5 * f.luma + 0.5 * f.skin_ratio).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicClassifier;

impl FrameClassifier for HeuristicClassifier {
    fn classify(&mut self, frame: &RgbFrame) -> Result<f64, DetectError> {
        reference_heuristic(frame)
    }
}

/// Logistic model over `[mean_r, mean_g, mean_b, luma, skin_ratio]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: [f64; 5],
    pub bias: f64,
}

impl LinearModel {
    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectError::ClassifierFailure(format!("{}: {e}", path.display())))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| DetectError::ClassifierFailure(format!("{}: {e}", path.display())))?;
        if model.weights.iter().chain([&model.bias]).any(|w| !w.is_finite()) {
            return Err(DetectError::ClassifierFailure(format!("{}: non-finite parameter", path.display())));
        }
        Ok(model)
    }

    pub fn predict(&self, frame: &RgbFrame) -> Result<f64, DetectError> {
        let f = features(frame)?;
        let x = [f.mean_rgb[0], f.mean_rgb[1], f.mean_rgb[2], f.luma, f.skin_ratio];
        let z: f64 = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        Ok(1.0 / (1.0 + (-z).exp()))
    }
}

pub struct LinearModelClassifier(pub LinearModel);

impl FrameClassifier for LinearModelClassifier {
    fn classify(&mut self, frame: &RgbFrame) -> Result<f64, DetectError> {
        self.0.predict(frame)
    }
}

/// `heuristic` or `model:<path to JSON>`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ClassifierSpec {
    #[default]
    Heuristic,
    Model(PathBuf),
}

impl ClassifierSpec {
    pub fn build(&self) -> Result<Box<dyn FrameClassifier>, DetectError> {
        Ok(match self {
            Self::Heuristic => Box::new(HeuristicClassifier),
            Self::Model(p) => Box::new(LinearModelClassifier(LinearModel::load(p)?)),
        })
    }
}

impl FromStr for ClassifierSpec {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "heuristic" => Ok(Self::Heuristic),
            other => match other.strip_prefix("model:") {
                Some(p) if !p.is_empty() => Ok(Self::Model(PathBuf::from(p))),
                _ => Err(DetectError::ConfigInvalid(format!("unknown classifier {other:?}"))),
            },
        }
    }
}

impl std::fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Heuristic => f.write_str("heuristic"),
            Self::Model(p) => write!(f, "model:{}", p.display()),
        }
    }
}

impl From<ClassifierSpec> for String {
    fn from(s: ClassifierSpec) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for ClassifierSpec {
    type Error = DetectError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

fn analysis_size(width: u32, height: u32) -> (u32, u32) {
    if width <= ANALYSIS_MAX_WIDTH {
        return (width, height);
    }
    let h = (height as f64 * ANALYSIS_MAX_WIDTH as f64 / width as f64).round().max(1.0) as u32;
    (ANALYSIS_MAX_WIDTH, h)
}

/// Sample `video` at `cfg.sample_fps` and score every sample.
pub fn classify_frames(
    tool: &MediaTool,
    video: &Path,
    classifier: &mut dyn FrameClassifier,
    cfg: &DetectorConfig,
    progress: &dyn ProgressSink,
    cancel: Option<&CancelToken>,
) -> Result<Vec<FramePrediction>, DetectError> {
    cfg.validate()?;
    let info = probe(tool, video)?;
    let size = analysis_size(info.width, info.height);
    let expected = (info.duration_s * cfg.sample_fps).ceil().max(1.0);
    let mut out = Vec::new();
    for item in read_frames(tool, video, &info, Sampling::Rate(cfg.sample_fps), Some(size), cancel)? {
        let (time_s, frame) = item?;
        let p_oob = classifier.classify(&frame)?;
        if !(0.0..=1.0).contains(&p_oob) {
            return Err(DetectError::ClassifierFailure(format!("score {p_oob} outside [0, 1] at {time_s:.3}s")));
        }
        out.push(FramePrediction { time_s, p_oob });
        progress.report(100.0 * out.len() as f64 / expected);
    }
    progress.report(100.0);
    Ok(out)
}
