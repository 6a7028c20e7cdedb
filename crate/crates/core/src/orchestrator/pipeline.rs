use std::path::{Path, PathBuf};

use super::job::{FailureKind, Job, JobError, ProcessingReport, Stage};
use super::{JobContext, Pipeline};
use crate::detect::{classify_frames, extract_intervals, pad_and_merge, smooth_predictions};
use crate::interval::SensitiveInterval;
use crate::media::{
    execute_plan, merge_segments, plan_fast_cuts, probe, strip_metadata, temp_sibling, ExecContext, MediaError, Mode,
    OutputProfile, ProcessingPlan, TempGuard,
};
use crate::registry::verify_deidentified_as;
use crate::tool::MediaTool;

/// Merged, standardised recording kept in `work/<job>/` for review and re-runs.
pub const INTERMEDIATE_FILE: &str = "merged.mp4";

/// The production pipeline: merge, detect, redact, strip, finalize.
pub struct MediaPipeline {
    tool: MediaTool,
}

impl MediaPipeline {
    pub fn new(tool: MediaTool) -> Self {
        Self { tool }
    }

    pub fn tool(&self) -> &MediaTool {
        &self.tool
    }

    fn merge(&self, job: &Job, ctx: &JobContext<'_>, work: &Path, exec: ExecContext<'_>) -> Result<PathBuf, JobError> {
        let segments = &job.case.segment_paths;
        let first = probe(&self.tool, &segments[0]).map_err(|e| match e {
            MediaError::Cancelled => e,
            _ => MediaError::SegmentUnreadable { index: 0 },
        })?;
        // Segments are unified at the first one's geometry; only the codec is standardised.
        let profile = OutputProfile::native(&first).with_drop_audio(job.case.profile.drop_audio);
        let merged = work.join(INTERMEDIATE_FILE);
        merge_segments(&self.tool, segments, &profile, &merged, exec)?;
        ctx.log().line(&format!("merged {} segment(s) at {}x{} {:.3} fps", segments.len(), profile.width, profile.height, profile.fps));
        Ok(merged)
    }

    fn detect(&self, job: &Job, ctx: &JobContext<'_>, merged: &Path) -> Result<Vec<SensitiveInterval>, JobError> {
        let cfg = &job.case.detector_cfg;
        let mut classifier = job.case.classifier.build()?;
        let sink = ctx.sink();
        let preds = classify_frames(&self.tool, merged, classifier.as_mut(), cfg, &sink, Some(ctx.cancel_token()))?;
        let duration = probe(&self.tool, merged)?.duration_s;
        let raw = extract_intervals(&smooth_predictions(&preds, cfg.smooth_window), cfg);
        let padded = pad_and_merge(&raw, cfg.pad_s, duration);
        ctx.log().line(&format!("classified {} sample(s) with {}", preds.len(), job.case.classifier));
        ctx.log().line(&format!("detected {} span(s): {}", padded.len(), describe(&padded)));
        Ok(padded)
    }
}

fn describe(intervals: &[SensitiveInterval]) -> String {
    if intervals.is_empty() {
        return "none".into();
    }
    intervals.iter().map(|i| format!("[{:.3}, {:.3})", i.start_s, i.end_s)).collect::<Vec<_>>().join(" ")
}

impl Pipeline for MediaPipeline {
    fn run(&self, job: &Job, ctx: &JobContext<'_>) -> Result<ProcessingReport, JobError> {
        let ws = ctx.workspace();
        let work = ws.job_work_dir(job.id.as_str());
        std::fs::create_dir_all(&work).map_err(|e| JobError::from(MediaError::io(&work, e)))?;
        let cancel = ctx.cancel_token();
        let sink = ctx.sink();
        let exec = ExecContext::default().with_cancel(cancel).with_log(ctx.log()).with_progress(&sink);

        let (merged, intervals) = match &job.rerun {
            None => {
                ctx.enter(Stage::Merge)?;
                let merged = self.merge(job, ctx, &work, exec)?;
                ctx.enter(Stage::Detect)?;
                let intervals = self.detect(job, ctx, &merged)?;
                ctx.set_intervals(intervals.clone());
                (merged, intervals)
            }
            Some(rerun) => {
                let merged = ws.job_work_dir(job.intermediate_of.as_str()).join(INTERMEDIATE_FILE);
                if !merged.is_file() {
                    return Err(JobError::new(
                        FailureKind::IntermediateMissing,
                        format!("merged intermediate of job {} is no longer retained", job.intermediate_of),
                    ));
                }
                ctx.log().line(&format!("re-run of job {} with {} span(s): {}", rerun.source, rerun.intervals.len(), describe(&rerun.intervals)));
                (merged, rerun.intervals.clone())
            }
        };

        ctx.enter(Stage::Redact)?;
        let info = probe(&self.tool, &merged)?;
        let (plan, profile) = match job.case.mode {
            Mode::Fast => (
                plan_fast_cuts(&info, &intervals)?,
                OutputProfile::native(&info).with_drop_audio(job.case.profile.drop_audio),
            ),
            Mode::Advanced => (ProcessingPlan::advanced(info.duration_s, &intervals)?, job.case.profile.clone()),
        };
        ctx.log().line(&format!(
            "plan: {} action(s), {:.3}s of {:.3}s re-encoded",
            plan.actions.len(),
            plan.reencoded_seconds(),
            info.duration_s
        ));
        let redacted = TempGuard::new(temp_sibling(&work.join("redacted.mp4")));
        execute_plan(&self.tool, &merged, &plan, &profile, redacted.path(), exec)?;

        ctx.enter(Stage::Strip)?;
        let staged = TempGuard::new(temp_sibling(&ws.output_dir().join(format!("{}.mp4", job.id))));
        strip_metadata(&self.tool, redacted.path(), staged.path(), !profile.drop_audio, exec)?;
        drop(redacted);

        ctx.enter(Stage::Finalize)?;
        // The registry lock also serialises publication into output/.
        let mut registry = ctx.registry().lock().unwrap_or_else(|p| p.into_inner());
        let pseudonym = match &job.rerun {
            Some(r) => {
                registry.refresh()?;
                if registry.lookup(&r.pseudonym).is_none() {
                    return Err(JobError::new(FailureKind::Registry, "pseudonym of the source job is not in the registry"));
                }
                r.pseudonym.clone()
            }
            None => registry.assign(&job.case.patient_id)?.pseudonym,
        };
        let dest = ws.output_path(&pseudonym);
        if job.rerun.is_none() && dest.exists() {
            return Err(JobError::new(
                FailureKind::OutputExists,
                format!("output {} already exists; edit the earlier job instead", dest.display()),
            ));
        }
        let verification = verify_deidentified_as(&self.tool, staged.path(), &pseudonym, &registry, profile.drop_audio)?;
        if !verification.pass {
            return Err(JobError::new(
                FailureKind::Verification,
                format!("verification failed: {}", verification.failures().join(", ")),
            ));
        }
        staged.commit(&dest)?;
        drop(registry);
        ctx.progress(50.0);

        let report = ProcessingReport {
            job_id: job.id.clone(),
            output_path: dest.clone(),
            pseudonym,
            mode: job.case.mode,
            intervals_redacted: intervals,
            reencoded_s: plan.reencoded_seconds(),
            media_duration_s: info.duration_s,
            durations: ctx.durations(),
            verification,
            machine_info: ctx.machine().clone(),
        };
        let report_path = ws.logs_dir().join(format!("{}.report.json", job.id));
        match serde_json::to_vec_pretty(&report) {
            Ok(body) => {
                if let Err(e) = std::fs::write(&report_path, body) {
                    ctx.log().line(&format!("cannot write report {}: {e}", report_path.display()));
                }
            }
            Err(e) => ctx.log().line(&format!("cannot serialise report: {e}")),
        }
        ctx.log().line(&format!("published {}", dest.display()));
        Ok(report)
    }
}
