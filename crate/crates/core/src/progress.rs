use std::sync::Mutex;

/// Receives completion percentages in `[0, 100]`.
pub trait ProgressSink: Sync {
    fn report(&self, percent: f64);
}

impl<F: Fn(f64) + Sync> ProgressSink for F {
    fn report(&self, percent: f64) {
        self(percent)
    }
}

/// Discards every report.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&self, _percent: f64) {}
}

/// Maps a child's `0..=100` onto `[lo, hi]` of a parent sink and never goes backwards.
pub struct ScaledProgress<'a> {
    inner: &'a dyn ProgressSink,
    lo: f64,
    hi: f64,
    last: Mutex<f64>,
}

impl<'a> ScaledProgress<'a> {
    pub fn new(inner: &'a dyn ProgressSink, lo: f64, hi: f64) -> Self {
        Self { inner, lo, hi, last: Mutex::new(f64::NEG_INFINITY) }
    }
}

impl ProgressSink for ScaledProgress<'_> {
    fn report(&self, percent: f64) {
        let p = percent.clamp(0.0, 100.0);
        let mapped = self.lo + (self.hi - self.lo) * p / 100.0;
        let mut last = self.last.lock().unwrap();
        if mapped >= *last {
            *last = mapped;
            self.inner.report(mapped);
        }
    }
}

/// Records every report; used by tests and by callers that replay progress.
#[derive(Default)]
pub struct RecordingProgress(Mutex<Vec<f64>>);

impl RecordingProgress {
    pub fn values(&self) -> Vec<f64> {
        self.0.lock().unwrap().clone()
    }
}

impl ProgressSink for RecordingProgress {
    fn report(&self, percent: f64) {
        self.0.lock().unwrap().push(percent);
    }
}
