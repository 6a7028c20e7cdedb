//! Background jobs that run cases through the pipeline.
//!
//! All job state lives behind one coordinator lock and is mirrored to
//! `jobs/<id>.json` on every change. Workers take queued jobs in enqueue
//! order and call a [`Pipeline`]; the pipeline reports stage entries and
//! progress through its [`JobContext`], which turns them into the job's ordered
//! event stream.

mod job;
mod log;
mod pipeline;
mod store;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

pub use job::{
    CaseRecording, FailureKind, IllegalTransition, IntervalOverride, Job, JobError, JobId, JobStatus, OverrideAction,
    ProcessingReport, ProgressEvent, Rerun, Stage,
};
pub use log::{scrub, JobLog};
pub use pipeline::{MediaPipeline, INTERMEDIATE_FILE};

use crate::cancel::CancelToken;
use crate::interval::{normalize, subtract, SensitiveInterval};
use crate::machine::MachineInfo;
use crate::progress::ProgressSink;
use crate::registry::{Registry, RegistryError};
use crate::workspace::Workspace;
use store::JobStore;

/// Runs one job. Implementations call [`JobContext::enter`] before each stage,
/// in stage order, and stop with its error when it refuses.
pub trait Pipeline: Send + Sync {
    fn run(&self, job: &Job, ctx: &JobContext<'_>) -> Result<ProcessingReport, JobError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrchestratorConfig {
    /// Worker threads; 0 means jobs only run through [`Orchestrator::run_inline`].
    pub workers: usize,
    pub retain_intermediate_hours: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { workers: MachineInfo::detect().default_workers(), retain_intermediate_hours: 72 }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {id} is {status}: {reason}")]
    Conflict { id: JobId, status: JobStatus, reason: String },
    #[error("override ({start_s}, {end_s}) lies outside [0, {duration_s}]")]
    IntervalOutOfRange { start_s: f64, end_s: f64, duration_s: f64 },
    #[error("orchestrator is shutting down")]
    ShuttingDown,
    #[error("timed out waiting for job {0}")]
    Timeout(JobId),
    #[error("job store: {0}")]
    Store(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

struct State {
    jobs: HashMap<JobId, Job>,
    order: Vec<JobId>,
    queue: VecDeque<JobId>,
    cancels: HashMap<JobId, CancelToken>,
    subscribers: HashMap<JobId, Vec<Sender<ProgressEvent>>>,
    next_seq: u64,
    accepting: bool,
    running: usize,
}

struct Shared {
    ws: Workspace,
    store: JobStore,
    registry: Mutex<Registry>,
    pipeline: Arc<dyn Pipeline>,
    cfg: OrchestratorConfig,
    state: Mutex<State>,
    changed: Condvar,
    /// Set by shutdown: running jobs stop at their next stage boundary.
    stopping: AtomicBool,
}

pub struct Orchestrator {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn save(&self, job: &Job) {
        if let Err(e) = self.store.save(job) {
            ::log::error!("cannot persist job {}: {e}", job.id);
        }
    }

    /// Append an event to `job`'s stream and fan it out.
    fn emit(&self, st: &mut State, id: &JobId, message: impl Into<String>) {
        let Some(job) = st.jobs.get_mut(id) else { return };
        let ev = ProgressEvent {
            seq: job.events.len() as u64,
            job_id: id.clone(),
            status: job.status,
            stage: job.stage,
            percent: job.percent,
            message: message.into(),
            at: now(),
        };
        job.events.push(ev.clone());
        job.updated_at = ev.at.clone();
        let terminal = job.status.is_terminal();
        if let Some(subs) = st.subscribers.get_mut(id) {
            subs.retain(|tx| tx.send(ev.clone()).is_ok());
        }
        if terminal {
            st.subscribers.remove(id);
        }
    }

    fn worker_loop(self: &Arc<Self>) {
        loop {
            let id = {
                let mut st = self.lock();
                loop {
                    if self.stopping.load(Ordering::SeqCst) {
                        return;
                    }
                    if let Some(id) = st.queue.pop_front() {
                        break id;
                    }
                    st = self.changed.wait(st).unwrap_or_else(|p| p.into_inner());
                }
            };
            self.run_one(&id);
        }
    }

    fn run_one(self: &Arc<Self>, id: &JobId) {
        let (job, token) = {
            let mut st = self.lock();
            let Some(job) = st.jobs.get_mut(id) else { return };
            if job.transition(JobStatus::Running).is_err() {
                return;
            }
            job.percent = 0.0;
            job.stage = None;
            let job = job.clone();
            let token = st.cancels.entry(id.clone()).or_default().clone();
            st.running += 1;
            self.emit(&mut st, id, "started");
            self.save(&st.jobs[id]);
            self.changed.notify_all();
            (job, token)
        };

        let secrets = vec![job.case.patient_id.clone()];
        let log = JobLog::open(&job.log_path, secrets.clone());
        let machine = MachineInfo::detect();
        log.line(&format!("job {} started ({} mode, {} segment(s))", job.id, job.case.mode, job.case.segment_paths.len()));
        log.line(&format!("machine: {}", machine.summary()));
        let ctx = JobContext {
            shared: self,
            id: id.clone(),
            cancel: token.clone(),
            log,
            machine,
            timing: Mutex::new(Timing { current: None, durations: BTreeMap::new() }),
            last_emitted: Mutex::new(0.0),
            started: Instant::now(),
        };
        let result = std::panic::catch_unwind(AssertUnwindSafe(|| self.pipeline.run(&job, &ctx)))
            .unwrap_or_else(|_| Err(JobError::new(FailureKind::Internal, "pipeline panicked")));
        let durations = ctx.durations();
        for (stage, secs) in &durations {
            ctx.log.line(&format!("stage {stage}: {secs:.3}s"));
        }

        let mut st = self.lock();
        let Some(job) = st.jobs.get_mut(id) else { return };
        let message = match result {
            Ok(report) => {
                job.intervals = Some(report.intervals_redacted.clone());
                job.report = Some(report);
                job.percent = 100.0;
                job.stage = Some(Stage::Finalize);
                let _ = job.transition(JobStatus::Done);
                "done".to_string()
            }
            Err(e) if e.kind == FailureKind::Cancelled && token.is_cancelled() => {
                job.error = Some(JobError::cancelled());
                let _ = job.transition(JobStatus::Cancelled);
                "cancelled".to_string()
            }
            Err(e) => {
                let e = JobError::new(e.kind, scrub(&e.message, &secrets));
                let msg = format!("failed: {}", e.message);
                job.error = Some(e);
                let _ = job.transition(JobStatus::Failed);
                msg
            }
        };
        ctx.log.line(&format!("{message} after {:.3}s", ctx.started.elapsed().as_secs_f64()));
        seal(job);
        if job.status != JobStatus::Done {
            remove_work_dir(&self.ws, id);
        }
        st.running -= 1;
        st.cancels.remove(id);
        self.emit(&mut st, id, message);
        self.save(&st.jobs[id]);
        self.changed.notify_all();
        drop(st);
        self.purge_expired();
    }

    /// Delete merged intermediates of jobs finished longer ago than the retention window.
    fn purge_expired(&self) {
        let limit = chrono::Duration::hours(self.cfg.retain_intermediate_hours.min(i64::MAX as u64 / 3600) as i64);
        let expired: Vec<JobId> = {
            let st = self.lock();
            st.jobs
                .values()
                .filter(|j| j.status == JobStatus::Done && j.intermediate_of == j.id)
                .filter(|j| {
                    j.finished_at
                        .as_deref()
                        .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
                        .is_some_and(|t| Utc::now().signed_duration_since(t) > limit)
                })
                .map(|j| j.id.clone())
                .collect()
        };
        for id in expired {
            remove_work_dir(&self.ws, &id);
        }
    }
}

/// Stamp a job as finished and drop the patient id from its stored case.
fn seal(job: &mut Job) {
    job.finished_at = Some(now());
    let secrets = [std::mem::take(&mut job.case.patient_id)];
    for p in &mut job.case.segment_paths {
        *p = PathBuf::from(scrub(&p.to_string_lossy(), &secrets));
    }
}

fn remove_work_dir(ws: &Workspace, id: &JobId) {
    let dir = ws.job_work_dir(id.as_str());
    if dir.exists() {
        if let Err(e) = std::fs::remove_dir_all(&dir) {
            ::log::warn!("cannot remove {}: {e}", dir.display());
        }
    }
}

struct Timing {
    current: Option<(Stage, Instant)>,
    durations: BTreeMap<Stage, f64>,
}

/// What a running pipeline may see and do.
pub struct JobContext<'a> {
    shared: &'a Shared,
    id: JobId,
    cancel: CancelToken,
    log: JobLog,
    machine: MachineInfo,
    timing: Mutex<Timing>,
    last_emitted: Mutex<f64>,
    started: Instant,
}

impl JobContext<'_> {
    pub fn job_id(&self) -> &JobId {
        &self.id
    }

    pub fn workspace(&self) -> &Workspace {
        &self.shared.ws
    }

    pub fn registry(&self) -> &Mutex<Registry> {
        &self.shared.registry
    }

    pub fn cancel_token(&self) -> &CancelToken {
        &self.cancel
    }

    pub fn log(&self) -> &JobLog {
        &self.log
    }

    pub fn machine(&self) -> &MachineInfo {
        &self.machine
    }

    /// Begin `stage`. Refuses when the job was cancelled, when the
    /// orchestrator is shutting down, or when stages go out of order.
    pub fn enter(&self, stage: Stage) -> Result<(), JobError> {
        if self.cancel.is_cancelled() {
            return Err(JobError::cancelled());
        }
        if self.shared.stopping.load(Ordering::SeqCst) {
            return Err(JobError::interrupted());
        }
        {
            let mut t = self.timing.lock().unwrap();
            if let Some((prev, since)) = t.current.take() {
                if prev >= stage {
                    return Err(JobError::new(FailureKind::Internal, format!("stage {stage} entered after {prev}")));
                }
                t.durations.insert(prev, since.elapsed().as_secs_f64());
            }
            t.current = Some((stage, Instant::now()));
        }
        self.log.line(&format!("stage {stage} started"));
        let lo = stage.percent_range().0;
        let mut st = self.shared.lock();
        if let Some(job) = st.jobs.get_mut(&self.id) {
            job.stage = Some(stage);
            job.percent = job.percent.max(lo);
        }
        *self.last_emitted.lock().unwrap() = lo;
        self.shared.emit(&mut st, &self.id, format!("{stage} started"));
        self.shared.save(&st.jobs[&self.id]);
        self.shared.changed.notify_all();
        Ok(())
    }

    /// Progress within the current stage, in `[0, 100]`. Overall percent
    /// never decreases; events are emitted once per whole percent.
    pub fn progress(&self, stage_percent: f64) {
        let Some((stage, _)) = self.timing.lock().unwrap().current else { return };
        let (lo, hi) = stage.percent_range();
        let overall = lo + (hi - lo) * stage_percent.clamp(0.0, 100.0) / 100.0;
        let mut last = self.last_emitted.lock().unwrap();
        if overall.floor() <= last.floor() {
            return;
        }
        *last = overall;
        drop(last);
        let mut st = self.shared.lock();
        if let Some(job) = st.jobs.get_mut(&self.id) {
            if overall <= job.percent {
                return;
            }
            job.percent = overall;
        }
        self.shared.emit(&mut st, &self.id, format!("{stage} {overall:.0}%"));
        self.shared.save(&st.jobs[&self.id]);
        self.shared.changed.notify_all();
    }

    /// A sink feeding [`Self::progress`].
    pub fn sink(&self) -> impl ProgressSink + '_ {
        move |p: f64| self.progress(p)
    }

    /// Record the redaction set as soon as it is known, for review.
    pub fn set_intervals(&self, intervals: Vec<SensitiveInterval>) {
        let mut st = self.shared.lock();
        if let Some(job) = st.jobs.get_mut(&self.id) {
            job.intervals = Some(intervals);
            self.shared.save(job);
        }
    }

    /// Seconds spent in each stage so far, the current one included.
    pub fn durations(&self) -> BTreeMap<Stage, f64> {
        let t = self.timing.lock().unwrap();
        let mut d = t.durations.clone();
        if let Some((s, since)) = t.current {
            d.insert(s, since.elapsed().as_secs_f64());
        }
        d
    }
}

impl Orchestrator {
    /// Open `ws`, recover from any previous run and start the worker pool.
    ///
    /// Recovery sweeps temporaries, marks jobs that were running as failed
    /// (interrupted) and queues jobs that were queued, in their original order.
    pub fn start(ws: Workspace, pipeline: Arc<dyn Pipeline>, cfg: OrchestratorConfig) -> Result<Self, OrchestratorError> {
        let registry = Registry::open(ws.registry_path())?;
        let swept = ws.sweep_temporaries().map_err(|e| OrchestratorError::Store(e.to_string()))?;
        for p in &swept {
            ::log::info!("removed leftover temporary {}", p.display());
        }
        let store = JobStore::new(ws.jobs_dir());
        let mut st = State::default();
        let shared = Arc::new(Shared {
            ws,
            store,
            registry: Mutex::new(registry),
            pipeline,
            cfg,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
            stopping: AtomicBool::new(false),
        });
        for job in shared.store.load_all() {
            st.next_seq = st.next_seq.max(job.seq + 1);
            st.order.push(job.id.clone());
            let id = job.id.clone();
            let status = job.status;
            st.jobs.insert(id.clone(), job);
            match status {
                JobStatus::Queued => st.queue.push_back(id),
                JobStatus::Running => {
                    let job = st.jobs.get_mut(&id).expect("just inserted");
                    let _ = job.transition(JobStatus::Failed);
                    job.error = Some(JobError::interrupted());
                    seal(job);
                    remove_work_dir(&shared.ws, &id);
                    shared.emit(&mut st, &id, "failed: interrupted before completion");
                    shared.save(&st.jobs[&id]);
                }
                _ => {}
            }
        }
        *shared.lock() = st;
        shared.purge_expired();
        let workers = (0..shared.cfg.workers)
            .map(|i| {
                let s = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("vidpriv-worker-{i}"))
                    .spawn(move || s.worker_loop())
                    .expect("spawn worker thread")
            })
            .collect();
        Ok(Self { shared, workers: Mutex::new(workers) })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.shared.ws
    }

    pub fn registry(&self) -> &Mutex<Registry> {
        &self.shared.registry
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.shared.cfg
    }

    /// Validate and persist `case` as a queued job.
    pub fn enqueue(&self, case: CaseRecording) -> Result<JobId, OrchestratorError> {
        case.validate().map_err(|m| OrchestratorError::Validation(scrub(&m, std::slice::from_ref(&case.patient_id))))?;
        let id = JobId::generate();
        self.insert(id.clone(), case, id, None)
    }

    fn insert(&self, id: JobId, case: CaseRecording, intermediate_of: JobId, rerun: Option<Rerun>) -> Result<JobId, OrchestratorError> {
        let mut st = self.shared.lock();
        if !st.accepting {
            return Err(OrchestratorError::ShuttingDown);
        }
        let ts = now();
        let job = Job {
            log_path: self.shared.ws.job_log_path(id.as_str()),
            id: id.clone(),
            seq: st.next_seq,
            case,
            status: JobStatus::Queued,
            stage: None,
            percent: 0.0,
            created_at: ts.clone(),
            updated_at: ts,
            finished_at: None,
            intermediate_of,
            intervals: rerun.as_ref().map(|r| r.intervals.clone()),
            rerun,
            report: None,
            error: None,
            events: Vec::new(),
        };
        self.shared.store.save(&job).map_err(|e| OrchestratorError::Store(e.to_string()))?;
        st.next_seq += 1;
        st.order.push(id.clone());
        st.jobs.insert(id.clone(), job);
        st.queue.push_back(id.clone());
        self.shared.emit(&mut st, &id, "queued");
        self.shared.save(&st.jobs[&id]);
        self.shared.changed.notify_all();
        Ok(id)
    }

    /// Queue a re-run of a finished job with its redaction set edited:
    /// `keep` spans are removed from it and `redact` spans are added as manual.
    pub fn apply_overrides(&self, source: &JobId, overrides: &[IntervalOverride]) -> Result<JobId, OrchestratorError> {
        let (case, intermediate_of, rerun) = {
            let st = self.shared.lock();
            let job = st.jobs.get(source).ok_or_else(|| OrchestratorError::UnknownJob(source.clone()))?;
            let report = match (&job.status, &job.report) {
                (JobStatus::Done, Some(r)) => r,
                _ => {
                    return Err(OrchestratorError::Conflict {
                        id: source.clone(),
                        status: job.status,
                        reason: "overrides need a finished job".into(),
                    })
                }
            };
            let duration = report.media_duration_s;
            for o in overrides {
                if !(o.start_s >= 0.0 && o.end_s > o.start_s && o.end_s <= duration + 1e-6) {
                    return Err(OrchestratorError::IntervalOutOfRange { start_s: o.start_s, end_s: o.end_s, duration_s: duration });
                }
            }
            let keep: Vec<(f64, f64)> =
                overrides.iter().filter(|o| o.action == OverrideAction::Keep).map(|o| (o.start_s, o.end_s)).collect();
            let mut set = subtract(&report.intervals_redacted, &keep);
            set.extend(
                overrides
                    .iter()
                    .filter(|o| o.action == OverrideAction::Redact)
                    .map(|o| SensitiveInterval::manual(o.start_s, o.end_s.min(duration))),
            );
            let rerun = Rerun {
                source: source.clone(),
                pseudonym: report.pseudonym.clone(),
                intervals: normalize(set),
                media_duration_s: duration,
            };
            let case = CaseRecording { patient_id: String::new(), segment_paths: Vec::new(), ..job.case.clone() };
            (case, job.intermediate_of.clone(), rerun)
        };
        self.insert(JobId::generate(), case, intermediate_of, Some(rerun))
    }

    pub fn get(&self, id: &JobId) -> Option<Job> {
        self.shared.lock().jobs.get(id).cloned()
    }

    /// All jobs in enqueue order.
    pub fn list(&self) -> Vec<Job> {
        let st = self.shared.lock();
        st.order.iter().filter_map(|id| st.jobs.get(id).cloned()).collect()
    }

    pub fn running_count(&self) -> usize {
        self.shared.lock().running
    }

    /// Cancel a queued job at once, or ask a running one to stop.
    pub fn cancel(&self, id: &JobId) -> Result<JobStatus, OrchestratorError> {
        let mut st = self.shared.lock();
        let job = st.jobs.get_mut(id).ok_or_else(|| OrchestratorError::UnknownJob(id.clone()))?;
        match job.status {
            JobStatus::Queued => {
                let _ = job.transition(JobStatus::Cancelled);
                job.error = Some(JobError::cancelled());
                seal(job);
                st.queue.retain(|q| q != id);
                self.shared.emit(&mut st, id, "cancelled");
                self.shared.save(&st.jobs[id]);
                self.shared.changed.notify_all();
                Ok(JobStatus::Cancelled)
            }
            JobStatus::Running => {
                st.cancels.entry(id.clone()).or_default().cancel();
                Ok(JobStatus::Running)
            }
            status => Err(OrchestratorError::Conflict { id: id.clone(), status, reason: "job already finished".into() }),
        }
    }

    /// Events so far plus a receiver for the rest. The receiver disconnects
    /// after the terminal event.
    pub fn subscribe(&self, id: &JobId) -> Result<(Vec<ProgressEvent>, Receiver<ProgressEvent>), OrchestratorError> {
        let mut st = self.shared.lock();
        let job = st.jobs.get(id).ok_or_else(|| OrchestratorError::UnknownJob(id.clone()))?;
        let history = job.events.clone();
        let terminal = job.status.is_terminal();
        let (tx, rx) = channel();
        if !terminal {
            st.subscribers.entry(id.clone()).or_default().push(tx);
        }
        Ok((history, rx))
    }

    /// Block until `id` is terminal.
    pub fn wait(&self, id: &JobId, timeout: Option<Duration>) -> Result<Job, OrchestratorError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.shared.lock();
        loop {
            let job = st.jobs.get(id).ok_or_else(|| OrchestratorError::UnknownJob(id.clone()))?;
            if job.status.is_terminal() {
                return Ok(job.clone());
            }
            st = match deadline {
                None => self.shared.changed.wait(st).unwrap_or_else(|p| p.into_inner()),
                Some(d) => {
                    let left = d.checked_duration_since(Instant::now()).ok_or_else(|| OrchestratorError::Timeout(id.clone()))?;
                    self.shared.changed.wait_timeout(st, left).unwrap_or_else(|p| p.into_inner()).0
                }
            };
        }
    }

    /// Run a queued job on the calling thread.
    pub fn run_inline(&self, id: &JobId) -> Result<Job, OrchestratorError> {
        {
            let mut st = self.shared.lock();
            let job = st.jobs.get(id).ok_or_else(|| OrchestratorError::UnknownJob(id.clone()))?;
            if job.status != JobStatus::Queued {
                return Err(OrchestratorError::Conflict { id: id.clone(), status: job.status, reason: "job is not queued".into() });
            }
            st.queue.retain(|q| q != id);
        }
        self.shared.run_one(id);
        self.get(id).ok_or_else(|| OrchestratorError::UnknownJob(id.clone()))
    }

    /// Stop accepting work, let running jobs finish their current stage (they
    /// then fail as interrupted) and join the workers. Queued jobs stay queued.
    pub fn shutdown(&self) {
        self.shared.lock().accepting = false;
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.shared.changed.notify_all();
        let workers = std::mem::take(&mut *self.workers.lock().unwrap());
        for w in workers {
            let _ = w.join();
        }
    }

    /// Path of the merged intermediate a job's review uses, if still retained.
    pub fn intermediate_path(&self, id: &JobId) -> Option<PathBuf> {
        let job = self.get(id)?;
        let p = self.shared.ws.job_work_dir(job.intermediate_of.as_str()).join(INTERMEDIATE_FILE);
        p.is_file().then_some(p)
    }

    /// Every patient id in the registry or in an unfinished job, for response scrubbing.
    pub fn known_patient_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = {
            let st = self.shared.lock();
            st.jobs.values().map(|j| j.case.patient_id.clone()).filter(|p| !p.is_empty()).collect()
        };
        let mut reg = self.shared.registry.lock().unwrap_or_else(|p| p.into_inner());
        let _ = reg.refresh();
        ids.extend(reg.patient_ids().map(str::to_string));
        ids.sort();
        ids.dedup();
        ids
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Default for State {
    fn default() -> Self {
        Self {
            jobs: HashMap::new(),
            order: Vec::new(),
            queue: VecDeque::new(),
            cancels: HashMap::new(),
            subscribers: HashMap::new(),
            next_seq: 0,
            accepting: true,
            running: 0,
        }
    }
}
