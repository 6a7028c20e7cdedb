use serde::{Deserialize, Serialize};

use super::{MediaError, MediaInfo, Mode};
use crate::interval::SensitiveInterval;

const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    CopySpan,
    ReencodeSpan,
}

/// One contiguous span of the output timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanAction {
    pub kind: ActionKind,
    pub start_s: f64,
    pub end_s: f64,
    /// Sensitive spans clipped to `[start_s, end_s)`; always empty for copies.
    pub redact: Vec<SensitiveInterval>,
}

impl PlanAction {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Ordered list of copy / re-encode actions partitioning `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingPlan {
    pub mode: Mode,
    pub actions: Vec<PlanAction>,
}

impl ProcessingPlan {
    /// A single re-encode over the whole timeline.
    pub fn advanced(duration_s: f64, intervals: &[SensitiveInterval]) -> Result<Self, MediaError> {
        check_intervals(intervals, duration_s)?;
        Ok(Self {
            mode: Mode::Advanced,
            actions: vec![PlanAction {
                kind: ActionKind::ReencodeSpan,
                start_s: 0.0,
                end_s: duration_s,
                redact: intervals.iter().filter_map(|iv| iv.clip(0.0, duration_s)).collect(),
            }],
        })
    }

    pub fn reencoded_seconds(&self) -> f64 {
        self.actions.iter().filter(|a| a.kind == ActionKind::ReencodeSpan).map(PlanAction::duration).sum()
    }

    pub fn redact_intervals(&self) -> impl Iterator<Item = &SensitiveInterval> {
        self.actions.iter().flat_map(|a| a.redact.iter())
    }

    /// Check the structural invariants against the probed source.
    pub fn validate(&self, info: &MediaInfo) -> Result<(), MediaError> {
        let bad = |m: String| Err(MediaError::InvalidPlan(m));
        let Some(first) = self.actions.first() else { return bad("no actions".into()) };
        if first.start_s.abs() > EPS {
            return bad(format!("first action starts at {}", first.start_s));
        }
        let last = self.actions.last().expect("non-empty");
        if (last.end_s - info.duration_s).abs() > EPS {
            return bad(format!("last action ends at {} not {}", last.end_s, info.duration_s));
        }
        for w in self.actions.windows(2) {
            if (w[0].end_s - w[1].start_s).abs() > EPS {
                return bad(format!("gap or overlap at {}", w[0].end_s));
            }
        }
        for a in &self.actions {
            if a.end_s <= a.start_s {
                return bad(format!("empty action at {}", a.start_s));
            }
            if a.kind == ActionKind::CopySpan {
                if !a.redact.is_empty() {
                    return bad("copy span carries redactions".into());
                }
                let on_grid = |t: f64| {
                    t.abs() < EPS
                        || (t - info.duration_s).abs() < EPS
                        || info.keyframe_times_s.iter().any(|k| (k - t).abs() < EPS)
                };
                if !on_grid(a.start_s) || !on_grid(a.end_s) {
                    return bad(format!("copy span [{}, {}) not on keyframes", a.start_s, a.end_s));
                }
            }
            if a.redact.iter().any(|r| r.start_s < a.start_s - EPS || r.end_s > a.end_s + EPS) {
                return bad("redaction escapes its action".into());
            }
        }
        if self.mode == Mode::Advanced && self.actions.len() != 1 {
            return bad("advanced plan must be a single re-encode".into());
        }
        Ok(())
    }
}

fn check_intervals(intervals: &[SensitiveInterval], duration_s: f64) -> Result<(), MediaError> {
    let mut prev_end = f64::NEG_INFINITY;
    for iv in intervals {
        if iv.start_s < -EPS || iv.end_s > duration_s + EPS || iv.end_s <= iv.start_s || iv.start_s < prev_end - EPS {
            return Err(MediaError::IntervalOutOfRange {
                start_s: iv.start_s,
                end_s: iv.end_s,
                duration_s,
            });
        }
        prev_end = iv.end_s;
    }
    Ok(())
}

/// Fast-mode plan: every interval grows outward to the enclosing keyframe
/// boundaries, overlapping or touching expansions coalesce into one re-encode,
/// and everything between is stream-copied.
pub fn plan_fast_cuts(info: &MediaInfo, intervals: &[SensitiveInterval]) -> Result<ProcessingPlan, MediaError> {
    let duration = info.duration_s;
    check_intervals(intervals, duration)?;

    // Cut grid: keyframes inside the timeline, with 0 and the end as hard edges.
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(info.keyframe_times_s.iter().copied().filter(|k| *k > EPS && *k < duration - EPS))
        .chain(std::iter::once(duration))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < EPS);

    let mut spans: Vec<(f64, f64)> = Vec::new();
    for iv in intervals {
        let lo = grid.iter().copied().filter(|g| *g <= iv.start_s + EPS).fold(0.0, f64::max);
        let hi = grid.iter().copied().filter(|g| *g >= iv.end_s - EPS).fold(duration, f64::min);
        match spans.last_mut() {
            Some(last) if lo <= last.1 + EPS => last.1 = last.1.max(hi),
            _ => spans.push((lo, hi)),
        }
    }

    let mut actions = Vec::new();
    let mut cursor = 0.0;
    for (lo, hi) in spans {
        if lo > cursor + EPS {
            actions.push(PlanAction { kind: ActionKind::CopySpan, start_s: cursor, end_s: lo, redact: vec![] });
        }
        actions.push(PlanAction {
            kind: ActionKind::ReencodeSpan,
            start_s: lo,
            end_s: hi,
            redact: intervals.iter().filter_map(|iv| iv.clip(lo, hi)).collect(),
        });
        cursor = hi;
    }
    if cursor < duration - EPS {
        actions.push(PlanAction { kind: ActionKind::CopySpan, start_s: cursor, end_s: duration, redact: vec![] });
    }
    Ok(ProcessingPlan { mode: Mode::Fast, actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn info(duration: f64, keyframes: &[f64]) -> MediaInfo {
        MediaInfo {
            duration_s: duration,
            fps: 25.0,
            width: 640,
            height: 480,
            video_codec: "h264".into(),
            pix_fmt: Some("yuv420p".into()),
            timescale: Some(12800),
            has_audio: false,
            tags: Default::default(),
            keyframe_times_s: keyframes.to_vec(),
        }
    }

    fn spans(plan: &ProcessingPlan) -> Vec<(ActionKind, f64, f64)> {
        plan.actions.iter().map(|a| (a.kind, a.start_s, a.end_s)).collect()
    }

    /// Independent oracle: mark each grid cell that any interval touches, then
    /// read runs of marked / unmarked cells off the grid.
    fn oracle(duration: f64, keyframes: &[f64], intervals: &[(f64, f64)]) -> Vec<(ActionKind, f64, f64)> {
        let mut grid: Vec<f64> = vec![0.0];
        for &k in keyframes {
            if k > 0.0 && k < duration && !grid.contains(&k) {
                grid.push(k);
            }
        }
        grid.push(duration);
        grid.sort_by(f64::total_cmp);
        let cells = grid.len() - 1;
        let mut marked = vec![false; cells];
        for &(s, e) in intervals {
            // Tightest enclosing pair by exhaustive search.
            let mut best: Option<(usize, usize)> = None;
            for a in 0..grid.len() {
                for b in a + 1..grid.len() {
                    if grid[a] <= s && grid[b] >= e {
                        let better = best.is_none_or(|(ba, bb)| grid[b] - grid[a] < grid[bb] - grid[ba]);
                        if better {
                            best = Some((a, b));
                        }
                    }
                }
            }
            let (a, b) = best.unwrap();
            for m in marked.iter_mut().take(b).skip(a) {
                *m = true;
            }
        }
        let mut out: Vec<(ActionKind, f64, f64)> = Vec::new();
        for c in 0..cells {
            let kind = if marked[c] { ActionKind::ReencodeSpan } else { ActionKind::CopySpan };
            match out.last_mut() {
                Some(last) if last.0 == kind => last.2 = grid[c + 1],
                _ => out.push((kind, grid[c], grid[c + 1])),
            }
        }
        out
    }

    #[test]
    fn expands_outward_to_keyframes() {
        let i = info(10.0, &[0.0, 2.0, 4.0, 6.0, 8.0]);
        let plan = plan_fast_cuts(&i, &[SensitiveInterval::auto(2.5, 4.2)]).unwrap();
        assert_eq!(
            spans(&plan),
            vec![
                (ActionKind::CopySpan, 0.0, 2.0),
                (ActionKind::ReencodeSpan, 2.0, 6.0),
                (ActionKind::CopySpan, 6.0, 10.0)
            ]
        );
        assert_eq!(plan.actions[1].redact, vec![SensitiveInterval::auto(2.5, 4.2)]);
        assert_eq!(spans(&plan), oracle(10.0, &[0.0, 2.0, 4.0, 6.0, 8.0], &[(2.5, 4.2)]));
        plan.validate(&i).unwrap();
    }

    #[test]
    fn no_intervals_is_a_single_copy() {
        let i = info(10.0, &[0.0, 2.0, 4.0]);
        let plan = plan_fast_cuts(&i, &[]).unwrap();
        assert_eq!(spans(&plan), vec![(ActionKind::CopySpan, 0.0, 10.0)]);
    }

    #[test]
    fn full_coverage_degenerates_to_one_reencode() {
        let i = info(10.0, &[0.0, 2.0, 4.0]);
        let plan = plan_fast_cuts(&i, &[SensitiveInterval::auto(0.0, 10.0)]).unwrap();
        assert_eq!(spans(&plan), vec![(ActionKind::ReencodeSpan, 0.0, 10.0)]);
    }

    #[test]
    fn touching_expansions_coalesce() {
        let i = info(10.0, &[0.0, 2.0, 4.0, 6.0, 8.0]);
        let plan = plan_fast_cuts(&i, &[SensitiveInterval::auto(2.5, 3.0), SensitiveInterval::auto(4.5, 5.0)]).unwrap();
        assert_eq!(
            spans(&plan),
            vec![
                (ActionKind::CopySpan, 0.0, 2.0),
                (ActionKind::ReencodeSpan, 2.0, 6.0),
                (ActionKind::CopySpan, 6.0, 10.0)
            ]
        );
        assert_eq!(plan.actions[1].redact.len(), 2);
    }

    #[test]
    fn keyframe_aligned_interval_is_not_expanded() {
        let i = info(10.0, &[0.0, 2.0, 4.0, 6.0, 8.0]);
        let plan = plan_fast_cuts(&i, &[SensitiveInterval::auto(4.0, 6.0)]).unwrap();
        assert_eq!(plan.actions[1].start_s, 4.0);
        assert_eq!(plan.actions[1].end_s, 6.0);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let i = info(10.0, &[0.0]);
        let err = plan_fast_cuts(&i, &[SensitiveInterval::auto(9.0, 11.0)]).unwrap_err();
        assert!(matches!(err, MediaError::IntervalOutOfRange { .. }));
        let err = plan_fast_cuts(&i, &[SensitiveInterval::auto(-1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, MediaError::IntervalOutOfRange { .. }));
    }

    #[test]
    fn advanced_plan_is_single_action() {
        let i = info(10.0, &[0.0, 5.0]);
        let plan = ProcessingPlan::advanced(10.0, &[SensitiveInterval::auto(3.0, 5.0)]).unwrap();
        assert_eq!(spans(&plan), vec![(ActionKind::ReencodeSpan, 0.0, 10.0)]);
        plan.validate(&i).unwrap();
    }

    fn scenario() -> impl Strategy<Value = (f64, Vec<f64>, Vec<(f64, f64)>)> {
        (4u32..120).prop_flat_map(|dur| {
            let duration = dur as f64;
            let keys = proptest::collection::btree_set(1u32..dur * 4, 0..20)
                .prop_map(|s| s.into_iter().map(|k| k as f64 / 4.0).collect::<Vec<_>>());
            let cuts = proptest::collection::btree_set(0u32..dur * 10, 0..12).prop_map(move |s| {
                let pts: Vec<f64> = s.into_iter().map(|c| c as f64 / 10.0).collect();
                pts.chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])).collect::<Vec<_>>()
            });
            (Just(duration), keys, cuts)
        })
    }

    proptest! {
        #[test]
        fn plan_partitions_timeline_and_covers_intervals((duration, mut keys, ivs) in scenario()) {
            keys.insert(0, 0.0);
            let i = info(duration, &keys);
            let intervals: Vec<_> = ivs.iter().map(|&(s, e)| SensitiveInterval::auto(s, e)).collect();
            let plan = plan_fast_cuts(&i, &intervals).unwrap();
            plan.validate(&i).unwrap();
            let total: f64 = plan.actions.iter().map(PlanAction::duration).sum();
            prop_assert!((total - duration).abs() < 1e-6);
            for iv in &intervals {
                let covered = plan.actions.iter().any(|a| a.kind == ActionKind::ReencodeSpan
                    && a.start_s <= iv.start_s + 1e-9 && a.end_s >= iv.end_s - 1e-9);
                prop_assert!(covered, "interval {:?} not inside a re-encode", iv);
            }
            prop_assert_eq!(spans(&plan), oracle(duration, &keys, &ivs));
        }
    }
}
