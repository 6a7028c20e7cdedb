use super::{DetectorConfig, FramePrediction};
use crate::interval::{normalize, SensitiveInterval};

const EPS: f64 = 1e-9;

/// Hysteresis thresholding: a run opens at the first sample with
/// `p >= theta_on` and stays open while `p >= theta_off`. A run ends at the
/// timestamp of the first sample outside it, or one sample period past the
/// last sample. Runs shorter than `min_duration_s` are dropped.
pub fn extract_intervals(preds: &[FramePrediction], cfg: &DetectorConfig) -> Vec<SensitiveInterval> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    let close = |start: f64, end: f64, out: &mut Vec<SensitiveInterval>| {
        if end - start + EPS >= cfg.min_duration_s {
            out.push(SensitiveInterval::auto(start, end));
        }
    };
    for p in preds {
        match open {
            None if p.p_oob >= cfg.theta_on => open = Some(p.time_s),
            Some(start) if p.p_oob < cfg.theta_off => {
                close(start, p.time_s, &mut out);
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(start), Some(last)) = (open, preds.last()) {
        close(start, last.time_s + cfg.sample_period(), &mut out);
    }
    out
}

/// Widen each interval by `pad_s` on both sides, clip to `[0, duration_s]`
/// and merge whatever now overlaps or touches.
pub fn pad_and_merge(intervals: &[SensitiveInterval], pad_s: f64, duration_s: f64) -> Vec<SensitiveInterval> {
    let padded = intervals
        .iter()
        .filter_map(|iv| {
            SensitiveInterval { start_s: iv.start_s - pad_s, end_s: iv.end_s + pad_s, ..*iv }.clip(0.0, duration_s)
        })
        .collect();
    normalize(padded)
}
