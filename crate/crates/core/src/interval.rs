//! Time spans that must be redacted, and the set operations the pipeline needs on them.

use serde::{Deserialize, Serialize};

/// Who decided that a span is sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalSource {
    Auto,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalLabel {
    #[default]
    OutOfBody,
}

/// Half-open span `[start_s, end_s)` requiring redaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitiveInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub source: IntervalSource,
    #[serde(default)]
    pub label: IntervalLabel,
}

impl SensitiveInterval {
    pub fn auto(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s, source: IntervalSource::Auto, label: IntervalLabel::OutOfBody }
    }

    pub fn manual(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s, source: IntervalSource::Manual, label: IntervalLabel::OutOfBody }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    /// Intersection with `[lo, hi)`, if non-empty.
    pub fn clip(&self, lo: f64, hi: f64) -> Option<Self> {
        let start_s = self.start_s.max(lo);
        let end_s = self.end_s.min(hi);
        (end_s > start_s).then_some(Self { start_s, end_s, ..*self })
    }
}

/// Sort and merge overlapping or touching spans. A merged span is `Manual`
/// if any of its parts was.
pub fn normalize(mut intervals: Vec<SensitiveInterval>) -> Vec<SensitiveInterval> {
    intervals.retain(|iv| iv.end_s > iv.start_s);
    intervals.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut out: Vec<SensitiveInterval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start_s <= last.end_s => {
                last.end_s = last.end_s.max(iv.end_s);
                if iv.source == IntervalSource::Manual {
                    last.source = IntervalSource::Manual;
                }
            }
            _ => out.push(iv),
        }
    }
    out
}

/// Remove every `[start, end)` in `keep` from `intervals`; pieces keep their source tag.
pub fn subtract(intervals: &[SensitiveInterval], keep: &[(f64, f64)]) -> Vec<SensitiveInterval> {
    let mut pieces: Vec<SensitiveInterval> = intervals.to_vec();
    for &(ks, ke) in keep {
        if ke <= ks {
            continue;
        }
        pieces = pieces
            .into_iter()
            .flat_map(|iv| {
                let left = iv.clip(f64::NEG_INFINITY, ks);
                let right = iv.clip(ke, f64::INFINITY);
                left.into_iter().chain(right)
            })
            .collect();
    }
    pieces
}

/// Total covered seconds of a disjoint set.
pub fn total_duration(intervals: &[SensitiveInterval]) -> f64 {
    intervals.iter().map(SensitiveInterval::duration).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_merges_touching_and_prefers_manual() {
        let out = normalize(vec![
            SensitiveInterval::auto(5.0, 6.0),
            SensitiveInterval::manual(1.0, 2.0),
            SensitiveInterval::auto(2.0, 3.0),
        ]);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].start_s, out[0].end_s, out[0].source), (1.0, 3.0, IntervalSource::Manual));
        assert_eq!((out[1].start_s, out[1].end_s), (5.0, 6.0));
    }

    #[test]
    fn subtract_splits_and_removes() {
        let ivs = vec![SensitiveInterval::auto(1.0, 5.0), SensitiveInterval::auto(7.0, 8.0)];
        let out = subtract(&ivs, &[(2.0, 3.0), (7.0, 8.0)]);
        let spans: Vec<_> = out.iter().map(|i| (i.start_s, i.end_s)).collect();
        assert_eq!(spans, vec![(1.0, 2.0), (3.0, 5.0)]);
    }

    #[test]
    fn exact_keep_removes_everything() {
        let ivs = vec![SensitiveInterval::auto(2.5, 5.5)];
        assert!(subtract(&ivs, &[(2.5, 5.5)]).is_empty());
    }
}
