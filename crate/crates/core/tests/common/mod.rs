#![allow(dead_code)]

use std::path::Path;

use vidpriv_core::media::{probe, read_frames, RgbFrame, Sampling};
use vidpriv_core::MediaTool;

pub fn tool() -> MediaTool {
    MediaTool::discover(None).expect("an ffmpeg-compatible tool is required for media tests")
}

/// Every decoded frame of `path` at its native size.
pub fn all_frames(tool: &MediaTool, path: &Path) -> Vec<(f64, RgbFrame)> {
    let info = probe(tool, path).unwrap();
    read_frames(tool, path, &info, Sampling::All, None, None).unwrap().collect_frames().unwrap()
}

pub mod fake {
    use std::collections::BTreeMap;
    use std::path::{Path, PathBuf};
    use std::time::Duration;

    use vidpriv_core::machine::MachineInfo;
    use vidpriv_core::orchestrator::{JobContext, JobError, Pipeline};
    use vidpriv_core::{CaseRecording, Job, JobStatus, Mode, ProcessingReport, Stage, VerificationReport, RESERVED_SUFFIX};

    /// Walks every stage with short sleeps, leaving a reserved-suffix scratch
    /// file in the job's work directory while it runs.
    pub struct FakePipeline {
        pub step: Duration,
    }

    impl Pipeline for FakePipeline {
        fn run(&self, job: &Job, ctx: &JobContext<'_>) -> Result<ProcessingReport, JobError> {
            let work = ctx.workspace().job_work_dir(job.id.as_str());
            std::fs::create_dir_all(&work).unwrap();
            let scratch = work.join(format!("scratch{RESERVED_SUFFIX}"));
            std::fs::write(&scratch, b"partial").unwrap();
            let stages: &[Stage] = if job.rerun.is_some() {
                &[Stage::Redact, Stage::Strip, Stage::Finalize]
            } else {
                &Stage::ALL
            };
            for &stage in stages {
                ctx.enter(stage)?;
                for p in [25.0, 50.0, 75.0, 100.0] {
                    std::thread::sleep(self.step);
                    if ctx.cancel_token().is_cancelled() {
                        return Err(JobError::cancelled());
                    }
                    ctx.progress(p);
                }
            }
            std::fs::remove_file(&scratch).unwrap();
            let pseudonym = uuid_like(job);
            Ok(ProcessingReport {
                job_id: job.id.clone(),
                output_path: ctx.workspace().output_path(&pseudonym),
                pseudonym,
                mode: job.case.mode,
                intervals_redacted: Vec::new(),
                reencoded_s: 0.0,
                media_duration_s: 10.0,
                durations: BTreeMap::new(),
                verification: VerificationReport {
                    filename_ok: true,
                    metadata_ok: true,
                    offending_tags: Vec::new(),
                    audio_ok: true,
                    pass: true,
                },
                machine_info: MachineInfo::detect(),
            })
        }
    }

    fn uuid_like(job: &Job) -> String {
        let s = job.id.as_str();
        format!("{}-{}-4{}-8{}-{}", &s[0..8], &s[8..12], &s[13..16], &s[17..20], &s[20..32])
    }

    /// A case whose single segment is a placeholder file in `dir`.
    pub fn case(dir: &Path, patient: &str) -> CaseRecording {
        let seg: PathBuf = dir.join("placeholder.mp4");
        if !seg.exists() {
            std::fs::write(&seg, b"not decoded by the fake pipeline").unwrap();
        }
        CaseRecording::new(patient, vec![seg], Mode::Fast)
    }

    /// Consecutive statuses in a job's event stream only ever repeat or make a legal move.
    pub fn assert_legal_history(job: &Job) {
        let statuses: Vec<JobStatus> = job.events.iter().map(|e| e.status).collect();
        assert_eq!(statuses.first(), Some(&JobStatus::Queued), "job {} history {statuses:?}", job.id);
        for w in statuses.windows(2) {
            assert!(w[0] == w[1] || w[0].can_become(w[1]), "job {} illegal {:?} -> {:?}", job.id, w[0], w[1]);
        }
        assert_eq!(statuses.last(), Some(&job.status));
        let before_last = &statuses[..statuses.len() - 1];
        assert!(!before_last.iter().any(|s| s.is_terminal()), "job {} has events after its terminal one", job.id);
        for (i, e) in job.events.iter().enumerate() {
            assert_eq!(e.seq, i as u64);
        }
    }
}
