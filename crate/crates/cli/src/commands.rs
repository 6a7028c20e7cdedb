use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use vidpriv_bench::{
    append_records, compute_stats, emit_report, read_records, run_benchmark, write_records, write_report, BenchConfig,
    BenchRecord, DEFAULT_RESAMPLES, DEFAULT_SEED,
};
use vidpriv_core::media::discover_segments;
use vidpriv_core::orchestrator::{FailureKind, MediaPipeline, OrchestratorConfig, OrchestratorError};
use vidpriv_core::registry::verify_deidentified;
use vidpriv_core::{AppConfig, CaseRecording, JobStatus, MediaError, MediaTool, Orchestrator, Registry, Workspace};
use vidpriv_service::{AppState, ServiceConfig};

use crate::{absolute, load_config, BenchArgs, Cli, CliError, Command, ProcessArgs, ServeArgs, VerifyArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Process(args) => process(&cfg, args),
        Command::Serve(args) => serve(cfg, args),
        Command::Verify(args) => verify(&cfg, args),
        Command::Bench(args) => bench(&cfg, args),
        Command::Config => {
            print!("{}", cfg.render());
            Ok(())
        }
    }
}

fn open(cfg: &AppConfig) -> Result<(Workspace, MediaTool), CliError> {
    let ws = Workspace::open(&cfg.workspace)?;
    let tool = MediaTool::discover(cfg.media_tool_path.as_deref())?;
    Ok((ws, tool))
}

fn orchestrator(ws: &Workspace, tool: &MediaTool, cfg: &AppConfig, workers: usize) -> Result<Orchestrator, CliError> {
    Orchestrator::start(
        ws.clone(),
        Arc::new(MediaPipeline::new(tool.clone())),
        OrchestratorConfig { workers, retain_intermediate_hours: cfg.retain_intermediate_hours },
    )
    .map_err(orchestrator_error)
}

fn orchestrator_error(e: OrchestratorError) -> CliError {
    match e {
        OrchestratorError::Validation(m) => CliError::Validation(m),
        other => CliError::Pipeline(other.to_string()),
    }
}

fn print_line(line: impl std::fmt::Display) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn process(cfg: &AppConfig, args: ProcessArgs) -> Result<(), CliError> {
    if !args.input.is_dir() {
        return Err(CliError::Validation(format!("input folder {} does not exist", absolute(&args.input).display())));
    }
    let segments = discover_segments(&args.input).map_err(|e| match e {
        MediaError::NoSegments => CliError::Validation(format!("no video files in {}", absolute(&args.input).display())),
        other => CliError::Validation(other.to_string()),
    })?;
    let (ws, tool) = open(cfg)?;
    let orch = orchestrator(&ws, &tool, cfg, 0)?;

    let mut case = CaseRecording::new(args.patient, segments, args.mode.unwrap_or(cfg.default_mode));
    case.profile = cfg.profile.clone();
    if let Some(p) = args.profile {
        case.profile = p.apply(case.profile);
    }
    case.detector_cfg = cfg.detector.clone();
    case.classifier = cfg.classifier.clone();
    let id = orch.enqueue(case).map_err(orchestrator_error)?;

    let (_, events) = orch.subscribe(&id).map_err(orchestrator_error)?;
    let progress = std::thread::spawn(move || {
        for e in events {
            if let Some(stage) = e.stage {
                log::info!("{stage} {:.0}%", e.percent);
            }
            if e.status.is_terminal() {
                break;
            }
        }
    });
    let job = orch.run_inline(&id).map_err(orchestrator_error)?;
    let _ = progress.join();

    match (job.status, &job.report, &job.error) {
        (JobStatus::Done, Some(report), _) if report.verification.pass => {
            print_line(absolute(&report.output_path).display());
            print_line(absolute(&ws.jobs_dir().join(format!("{}.json", job.id))).display());
            Ok(())
        }
        (JobStatus::Done, Some(report), _) => Err(CliError::Verification(format!(
            "output failed verification: {}",
            report.verification.failures().join(", ")
        ))),
        (_, _, Some(err)) => Err(match err.kind {
            FailureKind::Validation | FailureKind::OutputExists => CliError::Validation(err.message.clone()),
            FailureKind::Verification => CliError::Verification(err.message.clone()),
            _ => CliError::Pipeline(format!("job {} failed: {err}", job.id)),
        }),
        (status, _, _) => Err(CliError::Pipeline(format!("job {} ended {status}", job.id))),
    }
}

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn serve(mut cfg: AppConfig, args: ServeArgs) -> Result<(), CliError> {
    if let Some(port) = args.port {
        cfg.port = port;
    }
    if let Some(workers) = args.workers {
        if workers == 0 {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        cfg.workers = workers;
    }
    if cfg.ui_dir.is_none() && Path::new("ui").is_dir() {
        cfg.ui_dir = Some(absolute(Path::new("ui")));
    }
    let (ws, tool) = open(&cfg)?;
    let service_cfg = ServiceConfig::from_app(&cfg, ws.input_dir());
    // Bind before starting workers so an occupied port fails fast.
    let listener = vidpriv_service::bind(&service_cfg)?;
    let addr = listener.local_addr().map_err(|e| CliError::Pipeline(e.to_string()))?;
    let orch = Arc::new(orchestrator(&ws, &tool, &cfg, cfg.workers)?);
    let state = AppState::new(Arc::clone(&orch), tool, service_cfg);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Pipeline(format!("cannot start runtime: {e}")))?;
    print_line(format_args!("listening on http://{addr}"));
    let result = runtime.block_on(vidpriv_service::serve(listener, state, interrupted()));
    log::info!("shutting down; running jobs stop after their current stage");
    orch.shutdown();
    runtime.shutdown_timeout(std::time::Duration::from_secs(2));
    result.map_err(CliError::from)
}

fn verify(cfg: &AppConfig, args: VerifyArgs) -> Result<(), CliError> {
    if !args.file.is_file() {
        return Err(CliError::Validation(format!("{} is not a file", absolute(&args.file).display())));
    }
    let (ws, tool) = open(cfg)?;
    let registry = Registry::open(ws.registry_path()).map_err(|e| CliError::Pipeline(e.to_string()))?;
    let report = verify_deidentified(&tool, &args.file, &registry, cfg.profile.drop_audio)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    print_line(serde_json::to_string_pretty(&report).expect("report serialises"));
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed checks: {}", report.failures().join(", "))))
    }
}

fn bench(cfg: &AppConfig, args: BenchArgs) -> Result<(), CliError> {
    let out = absolute(&args.out.unwrap_or_else(|| cfg.workspace.join("bench")));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Pipeline(format!("{}: {e}", out.display())))?;
    let csv_path = out.join("bench.csv");

    let (records, failures) = match &args.from_csv {
        Some(path) => (read_records(path)?, Vec::new()),
        None => {
            let tool = MediaTool::discover(cfg.media_tool_path.as_deref())?;
            let scratch = out.join("scratch");
            let mut bc = if args.full { BenchConfig::full(&scratch) } else { BenchConfig::desk(&scratch) };
            if let Some(reps) = args.reps {
                bc.reps = reps;
            }
            if let Some(d) = &args.durations {
                bc.durations_s = d.clone();
            }
            if let Some(seed) = args.seed {
                bc.seed = seed;
            }
            write_records(&csv_path, &[])?;
            let mut append_error = None;
            let mut on_record = |r: &BenchRecord| {
                if let Err(e) = append_records(&csv_path, std::slice::from_ref(r)) {
                    append_error.get_or_insert(e);
                }
            };
            let run = run_benchmark(&tool, &bc, &mut on_record)?;
            if let Some(e) = append_error {
                return Err(e.into());
            }
            for f in &run.failures {
                log::warn!("{} {} rep {} failed: {}", f.video, f.mode, f.rep, f.reason);
            }
            (run.records, run.failures)
        }
    };
    let stats = compute_stats(&records, DEFAULT_RESAMPLES, DEFAULT_SEED)?;
    let report = emit_report(&records, &stats, &failures)?;
    let (markdown, summary): (PathBuf, PathBuf) = write_report(&report, &out)?;
    if args.from_csv.is_none() {
        print_line(csv_path.display());
    }
    print_line(markdown.display());
    print_line(summary.display());
    Ok(())
}
