use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vidpriv_core::machine::MachineInfo;
use vidpriv_core::media::probe;
use vidpriv_core::orchestrator::{MediaPipeline, OrchestratorConfig};
use vidpriv_core::synth::{generate_synthetic_video, random_oob_spans, SyntheticSpec};
use vidpriv_core::{CaseRecording, JobStatus, MediaTool, Mode, Orchestrator, OutputProfile, Workspace};

use crate::record::{video_label, BenchRecord};
use crate::{io_err, BenchError};

pub const DESK_DURATIONS_S: [f64; 3] = [10.0, 60.0, 120.0];
pub const FULL_DURATIONS_S: [f64; 3] = [60.0, 1800.0, 3600.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub durations_s: Vec<f64>,
    pub modes: Vec<Mode>,
    pub reps: u32,
    /// Share of each video that is out-of-body.
    pub sensitive_fraction: f64,
    pub seed: u64,
    /// Holds generated videos and the scratch workspace.
    pub work_dir: PathBuf,
    /// Defaults to [`MachineInfo::label`].
    pub machine_label: Option<String>,
}

impl BenchConfig {
    pub fn desk(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            durations_s: DESK_DURATIONS_S.to_vec(),
            modes: vec![Mode::Fast, Mode::Advanced],
            reps: 3,
            sensitive_fraction: 0.1,
            seed: 1,
            work_dir: work_dir.into(),
            machine_label: None,
        }
    }

    pub fn full(work_dir: impl Into<PathBuf>) -> Self {
        Self { durations_s: FULL_DURATIONS_S.to_vec(), ..Self::desk(work_dir) }
    }

    fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.durations_s.is_empty() || self.durations_s.iter().any(|d| !(d.is_finite() && *d >= 1.0)) {
            return bad("durations must be at least one second");
        }
        if self.modes.is_empty() || self.reps == 0 {
            return bad("need at least one mode and one repetition");
        }
        if !(0.0..0.5).contains(&self.sensitive_fraction) {
            return bad("sensitive fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRep {
    pub machine: String,
    pub mode: Mode,
    pub video: String,
    pub rep: u32,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<FailedRep>,
    pub machine: MachineInfo,
}

/// Time every (video, repetition, mode) case end to end, one at a time.
///
/// `on_record` sees each successful record as soon as it is timed.
pub fn run_benchmark(
    tool: &MediaTool,
    cfg: &BenchConfig,
    on_record: &mut dyn FnMut(&BenchRecord),
) -> Result<BenchRun, BenchError> {
    cfg.validate()?;
    let machine = MachineInfo::detect();
    let label = cfg.machine_label.clone().unwrap_or_else(|| machine.label());
    let videos_dir = cfg.work_dir.join("videos");
    std::fs::create_dir_all(&videos_dir).map_err(io_err(&videos_dir))?;

    let mut videos = Vec::new();
    for (k, &d) in cfg.durations_s.iter().enumerate() {
        let spans_count = (d / 60.0).ceil().max(1.0) as usize;
        let seed = cfg.seed.wrapping_add(k as u64);
        let spec = SyntheticSpec {
            duration_s: d,
            oob_intervals: random_oob_spans(d, cfg.sensitive_fraction, spans_count, seed),
            seed,
            ..Default::default()
        };
        let name = video_label(d);
        let path = videos_dir.join(format!("{name}-seed{seed}.mp4"));
        if !path.is_file() {
            log::info!("generating {name} synthetic video");
            generate_synthetic_video(tool, &spec, &path)?;
        }
        videos.push((name, path));
    }

    let ws = Workspace::open(cfg.work_dir.join("workspace"))?;
    let orch = Orchestrator::start(
        ws.clone(),
        Arc::new(MediaPipeline::new(tool.clone())),
        OrchestratorConfig { workers: 0, retain_intermediate_hours: 0 },
    )
    .map_err(|e| BenchError::Orchestrator(e.to_string()))?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (video, path) in &videos {
        let info = probe(tool, path)?;
        for rep in 0..cfg.reps {
            for &mode in &cfg.modes {
                let mut case = CaseRecording::new(format!("bench-{video}-{mode}-{rep}"), vec![path.clone()], mode);
                // Like-for-like: Advanced re-encodes at the source geometry.
                case.profile = OutputProfile::native(&info);
                let id = orch.enqueue(case).map_err(|e| BenchError::Orchestrator(e.to_string()))?;
                let t0 = Instant::now();
                let job = orch.run_inline(&id).map_err(|e| BenchError::Orchestrator(e.to_string()))?;
                let wall_time_s = t0.elapsed().as_secs_f64();
                match (job.status, &job.report) {
                    (JobStatus::Done, Some(report)) => {
                        let _ = std::fs::remove_file(&report.output_path);
                        let rec = BenchRecord { machine: label.clone(), mode, video: video.clone(), rep, wall_time_s };
                        log::info!("{video} {mode} rep {rep}: {wall_time_s:.2}s");
                        on_record(&rec);
                        records.push(rec);
                    }
                    _ => {
                        let reason = job.error.map_or_else(|| format!("job ended {}", job.status), |e| e.message);
                        log::warn!("{video} {mode} rep {rep} failed: {reason}");
                        failures.push(FailedRep { machine: label.clone(), mode, video: video.clone(), rep, reason });
                    }
                }
                let _ = std::fs::remove_dir_all(ws.job_work_dir(id.as_str()));
            }
        }
    }
    Ok(BenchRun { records, failures, machine })
}
