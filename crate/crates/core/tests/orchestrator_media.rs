mod common;

use std::path::Path;
use std::sync::Arc;

use vidpriv_core::media::{discover_segments, probe};
use vidpriv_core::orchestrator::{FailureKind, IntervalOverride, MediaPipeline, OrchestratorConfig, OverrideAction};
use vidpriv_core::registry::verify_deidentified;
use vidpriv_core::synth::{generate_segmented_case, generate_synthetic_video, SyntheticSpec};
use vidpriv_core::{CaseRecording, JobStatus, Mode, Orchestrator, Workspace, RESERVED_SUFFIX};

fn orchestrator(ws: &Workspace) -> Orchestrator {
    Orchestrator::start(
        ws.clone(),
        Arc::new(MediaPipeline::new(common::tool())),
        OrchestratorConfig { workers: 0, retain_intermediate_hours: 72 },
    )
    .unwrap()
}

fn synth_case(dir: &Path, name: &str, oob: Vec<(f64, f64)>) -> Vec<std::path::PathBuf> {
    let spec = SyntheticSpec {
        duration_s: 10.0,
        oob_intervals: oob,
        seed: 11,
        tags: vec![("title".into(), "Jane Roe, MRN 001234".into())],
        ..Default::default()
    };
    let folder = dir.join(name);
    generate_segmented_case(&common::tool(), &spec, 2, &folder).unwrap();
    discover_segments(&folder).unwrap()
}

fn no_temporaries(root: &Path) {
    for entry in walk(root) {
        assert!(!entry.to_string_lossy().contains(RESERVED_SUFFIX), "leftover {}", entry.display());
    }
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.push(p);
        }
    }
    out
}

#[test]
fn case_runs_end_to_end_then_reruns_with_overrides() {
    let tool = common::tool();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let segments = synth_case(dir.path(), "case", vec![(3.0, 5.0)]);
    let orch = orchestrator(&ws);
    let patient = "MRN-77-ALPHA";

    let id = orch.enqueue(CaseRecording::new(patient, segments.clone(), Mode::Fast)).unwrap();
    let job = orch.run_inline(&id).unwrap();
    assert_eq!(job.status, JobStatus::Done, "{:?}", job.error);
    let report = job.report.clone().unwrap();
    let spans: Vec<(f64, f64)> = report.intervals_redacted.iter().map(|i| (i.start_s, i.end_s)).collect();
    assert_eq!(spans, vec![(2.5, 5.5)]);
    assert!(report.verification.pass);
    assert_eq!(report.output_path, ws.output_path(&report.pseudonym));

    let registry = vidpriv_core::Registry::open(ws.registry_path()).unwrap();
    assert_eq!(registry.len(), 1);
    assert_eq!(registry.lookup(&report.pseudonym), Some(patient));
    assert!(verify_deidentified(&tool, &report.output_path, &registry, false).unwrap().pass);

    let percents: Vec<f64> = job.events.iter().map(|e| e.percent).collect();
    assert!(percents.windows(2).all(|w| w[0] <= w[1]), "{percents:?}");
    assert_eq!(*percents.last().unwrap(), 100.0);
    let log = std::fs::read_to_string(&job.log_path).unwrap();
    assert!(!log.contains(patient));
    let doc = std::fs::read_to_string(ws.jobs_dir().join(format!("{id}.json"))).unwrap();
    assert!(!doc.contains(patient));
    let outputs: Vec<_> = std::fs::read_dir(ws.output_dir()).unwrap().flatten().map(|e| e.file_name()).collect();
    assert_eq!(outputs.len(), 1);
    assert!(orch.intermediate_path(&id).is_some());
    no_temporaries(ws.root());

    // Keeping everything yields an untouched copy of the intermediate.
    let keep = orch
        .apply_overrides(&id, &[IntervalOverride { start_s: 0.0, end_s: 10.0, action: OverrideAction::Keep }])
        .unwrap();
    let kept = orch.run_inline(&keep).unwrap();
    assert_eq!(kept.status, JobStatus::Done, "{:?}", kept.error);
    let kept_report = kept.report.unwrap();
    assert!(kept_report.intervals_redacted.is_empty());
    assert_eq!(kept_report.pseudonym, report.pseudonym);

    // A manual span is blurred in the replaced output.
    let manual = orch
        .apply_overrides(&id, &[IntervalOverride { start_s: 7.0, end_s: 8.0, action: OverrideAction::Redact }])
        .unwrap();
    let rerun = orch.run_inline(&manual).unwrap();
    assert_eq!(rerun.status, JobStatus::Done, "{:?}", rerun.error);
    let set: Vec<(f64, f64)> = rerun.intervals.unwrap().iter().map(|i| (i.start_s, i.end_s)).collect();
    assert_eq!(set, vec![(2.5, 5.5), (7.0, 8.0)]);
    let src = common::all_frames(&tool, &orch.intermediate_path(&id).unwrap());
    let dst = common::all_frames(&tool, &report.output_path);
    assert_eq!(src.len(), dst.len());
    let min_diff = src
        .iter()
        .zip(&dst)
        .filter(|((t, _), _)| *t >= 7.0 && *t < 8.0)
        .map(|((_, a), (_, b))| a.mean_abs_diff(b))
        .fold(f64::INFINITY, f64::min);
    assert!(min_diff >= 30.0, "manual span barely changed: {min_diff}");
    assert_eq!(vidpriv_core::Registry::open(ws.registry_path()).unwrap().len(), 1);

    // Out-of-range overrides are refused.
    assert!(orch
        .apply_overrides(&id, &[IntervalOverride { start_s: 9.0, end_s: 12.0, action: OverrideAction::Redact }])
        .is_err());

    // A second fresh case for the same patient does not overwrite the published file.
    let again = orch.enqueue(CaseRecording::new(patient, segments, Mode::Fast)).unwrap();
    let dup = orch.run_inline(&again).unwrap();
    assert_eq!(dup.status, JobStatus::Failed);
    assert_eq!(dup.error.unwrap().kind, FailureKind::OutputExists);
    assert!(!ws.job_work_dir(again.as_str()).exists());
    no_temporaries(ws.root());
}

#[test]
fn vanished_segment_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let segments = synth_case(dir.path(), "case", vec![]);
    let orch = orchestrator(&ws);
    let id = orch.enqueue(CaseRecording::new("P-404", segments.clone(), Mode::Fast)).unwrap();
    std::fs::remove_file(&segments[0]).unwrap();
    let job = orch.run_inline(&id).unwrap();
    assert_eq!(job.status, JobStatus::Failed);
    assert_eq!(job.error.unwrap().kind, FailureKind::SegmentUnreadable);
    assert_eq!(std::fs::read_dir(ws.output_dir()).unwrap().count(), 0);
    assert!(!ws.job_work_dir(id.as_str()).exists());
    no_temporaries(ws.root());
}

#[test]
fn advanced_mode_applies_the_output_profile() {
    let tool = common::tool();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let src = dir.path().join("single").join("rec.mp4");
    std::fs::create_dir_all(src.parent().unwrap()).unwrap();
    let spec = SyntheticSpec { duration_s: 4.0, oob_intervals: vec![(1.0, 2.0)], seed: 3, ..Default::default() };
    generate_synthetic_video(&tool, &spec, &src).unwrap();
    let orch = orchestrator(&ws);
    let mut case = CaseRecording::new("P-ADV", vec![src], Mode::Advanced);
    case.profile.width = 320;
    case.profile.height = 180;
    let id = orch.enqueue(case).unwrap();
    let job = orch.run_inline(&id).unwrap();
    assert_eq!(job.status, JobStatus::Done, "{:?}", job.error);
    let report = job.report.unwrap();
    let info = probe(&tool, &report.output_path).unwrap();
    assert_eq!((info.width, info.height), (320, 180));
    assert!((report.reencoded_s - info.duration_s).abs() < 0.1);
    assert!((info.duration_s - 4.0).abs() < 0.1);
}
