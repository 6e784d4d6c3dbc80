//! Master/slave reconstruction job dispatch.
//!
//! Jobs wait in a FIFO queue until [`assign_worker`] finds a slot. The master
//! takes work while it has spare capacity; once it is saturated, work is
//! forwarded to the least loaded slave. Assignment reserves the slot, so a
//! worker's active count never exceeds its capacity. Every scheduling decision
//! is appended to an [`EventLog`] under the same lock that makes it.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock, Timestamp};
use crate::rawdata::{anonymize, parse_kspace, write_image_bundle};
use crate::recon::{BackendRegistry, ParamValues, ReconError};
use crate::vault::{BlobStatus, Vault};

pub const DEFAULT_CAPACITY: usize = 4;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("dataset `{0}` is not in the vault")]
    UnknownDataset(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error("job `{0}` has no result")]
    NoResult(String),
    #[error("invalid worker pool: {0}")]
    InvalidPool(String),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::UnknownDataset(_) => "unknown_dataset",
            OrchestratorError::UnknownJob(_) => "unknown_job",
            OrchestratorError::Recon(e) => e.code(),
            OrchestratorError::NoResult(_) => "job_not_done",
            OrchestratorError::InvalidPool(_) => "invalid_pool",
        }
    }
}

/// Lifecycle state; the derived order is the only direction jobs move in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Rank in the lifecycle order; `Done` and `Failed` share the last rank.
    pub fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconJob {
    pub job_id: String,
    pub dataset: String,
    pub backend_id: String,
    pub params: ParamValues,
    pub state: JobState,
    pub assigned_worker: Option<usize>,
    pub result: Option<String>,
    pub error_message: Option<String>,
    pub owner: Option<String>,
    pub submitted_at: Timestamp,
    pub finished_at: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerRole {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub worker_id: usize,
    pub role: WorkerRole,
    pub capacity: usize,
    pub active: usize,
}

impl Worker {
    pub fn has_capacity(&self) -> bool {
        self.active < self.capacity
    }
}

/// Worker 0 is the master; slaves follow in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPool {
    workers: Vec<Worker>,
}

impl WorkerPool {
    pub fn new(master_capacity: usize, slave_capacities: &[usize]) -> Result<Self, OrchestratorError> {
        if master_capacity == 0 || slave_capacities.contains(&0) {
            return Err(OrchestratorError::InvalidPool(
                "capacities must be positive".into(),
            ));
        }
        let mut workers = vec![Worker {
            worker_id: 0,
            role: WorkerRole::Master,
            capacity: master_capacity,
            active: 0,
        }];
        workers.extend(slave_capacities.iter().enumerate().map(|(i, &c)| Worker {
            worker_id: i + 1,
            role: WorkerRole::Slave,
            capacity: c,
            active: 0,
        }));
        Ok(Self { workers })
    }

    /// One master and `slaves` slaves, all with the default capacity.
    pub fn uniform(slaves: usize) -> Self {
        Self::new(DEFAULT_CAPACITY, &vec![DEFAULT_CAPACITY; slaves]).expect("positive capacities")
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    pub fn worker(&self, id: usize) -> Option<&Worker> {
        self.workers.get(id)
    }

    pub fn master(&self) -> &Worker {
        &self.workers[0]
    }

    pub fn set_active(&mut self, id: usize, active: usize) {
        self.workers[id].active = active;
    }
}

impl Default for WorkerPool {
    fn default() -> Self {
        Self::uniform(2)
    }
}

/// The master while it has a free slot, else the least loaded slave with a
/// free slot (lowest id on ties), else `None`.
pub fn assign_worker(pool: &WorkerPool) -> Option<usize> {
    let master = pool.master();
    if master.has_capacity() {
        return Some(master.worker_id);
    }
    pool.workers
        .iter()
        .filter(|w| w.role == WorkerRole::Slave && w.has_capacity())
        .min_by_key(|w| (w.active, w.worker_id))
        .map(|w| w.worker_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Submit,
    Assign,
    Start,
    Finish,
}

/// One scheduler decision. `active` is the worker's count after the event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub kind: EventKind,
    pub job_id: String,
    pub worker: Option<usize>,
    pub active: Option<usize>,
    pub capacity: Option<usize>,
    /// Master's active count at the time of an assignment.
    pub master_active: Option<usize>,
    pub state: JobState,
}

/// Append-only event history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { events })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub backend_id: String,
    pub assigned_worker: Option<usize>,
    pub result: Option<String>,
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JobCounts {
    pub submitted: usize,
    pub queued: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
}

struct Inner {
    jobs: BTreeMap<String, ReconJob>,
    queue: VecDeque<String>,
    pool: WorkerPool,
    /// Assigned but not yet started, per worker.
    inbox: Vec<VecDeque<String>>,
    log: EventLog,
}

impl Inner {
    fn record(&mut self, kind: EventKind, job_id: &str, worker: Option<usize>, master_active: Option<usize>) {
        let state = self.jobs[job_id].state;
        let w = worker.and_then(|id| self.pool.worker(id));
        let event = Event {
            seq: self.log.events.len() as u64,
            kind,
            job_id: job_id.to_string(),
            worker,
            active: w.map(|w| w.active),
            capacity: w.map(|w| w.capacity),
            master_active,
            state,
        };
        self.log.events.push(event);
    }

    /// Move queued jobs into worker inboxes while slots are free.
    fn dispatch(&mut self) -> bool {
        let mut any = false;
        while let Some(job_id) = self.queue.front().cloned() {
            let Some(w) = assign_worker(&self.pool) else {
                break;
            };
            self.queue.pop_front();
            let master_active = self.pool.master().active;
            self.pool.workers[w].active += 1;
            self.jobs
                .get_mut(&job_id)
                .expect("queued job exists")
                .assigned_worker = Some(w);
            self.inbox[w].push_back(job_id.clone());
            self.record(EventKind::Assign, &job_id, Some(w), Some(master_active));
            any = true;
        }
        any
    }
}

/// Job store, scheduler and executor front end.
pub struct Orchestrator {
    vault: Arc<Vault>,
    registry: Arc<BackendRegistry>,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
    work: Condvar,
    shutdown: AtomicBool,
}

impl Orchestrator {
    pub fn new(vault: Arc<Vault>, registry: Arc<BackendRegistry>, pool: WorkerPool) -> Self {
        let n = pool.workers.len();
        Self {
            vault,
            registry,
            clock: Arc::new(SystemClock),
            inner: Mutex::new(Inner {
                jobs: BTreeMap::new(),
                queue: VecDeque::new(),
                pool,
                inbox: vec![VecDeque::new(); n],
                log: EventLog::default(),
            }),
            work: Condvar::new(),
            shutdown: AtomicBool::new(false),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn registry(&self) -> &Arc<BackendRegistry> {
        &self.registry
    }

    pub fn vault(&self) -> &Arc<Vault> {
        &self.vault
    }

    /// Validate and enqueue a job. Parameters are stored fully resolved.
    pub fn submit(
        &self,
        dataset: &str,
        backend_id: &str,
        params: &ParamValues,
        owner: Option<&str>,
    ) -> Result<String, OrchestratorError> {
        if self.vault.resolve(dataset) != BlobStatus::Present {
            return Err(OrchestratorError::UnknownDataset(dataset.to_string()));
        }
        let resolved = self.registry.descriptor(backend_id)?.resolve(params)?;
        let job_id = uuid::Uuid::new_v4().to_string();
        let job = ReconJob {
            job_id: job_id.clone(),
            dataset: dataset.to_string(),
            backend_id: backend_id.to_string(),
            params: resolved,
            state: JobState::Queued,
            assigned_worker: None,
            result: None,
            error_message: None,
            owner: owner.map(str::to_string),
            submitted_at: self.clock.now(),
            finished_at: None,
        };
        let mut inner = self.inner.lock();
        inner.jobs.insert(job_id.clone(), job);
        inner.queue.push_back(job_id.clone());
        inner.record(EventKind::Submit, &job_id, None, None);
        if inner.dispatch() {
            self.work.notify_all();
        }
        Ok(job_id)
    }

    pub fn poll(&self, job_id: &str) -> Result<JobStatus, OrchestratorError> {
        let inner = self.inner.lock();
        let j = inner
            .jobs
            .get(job_id)
            .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))?;
        Ok(JobStatus {
            job_id: j.job_id.clone(),
            state: j.state,
            backend_id: j.backend_id.clone(),
            assigned_worker: j.assigned_worker,
            result: j.result.clone(),
            error_message: j.error_message.clone(),
        })
    }

    pub fn job(&self, job_id: &str) -> Result<ReconJob, OrchestratorError> {
        self.inner
            .lock()
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))
    }

    /// Content id of a finished job's image bundle.
    pub fn result(&self, job_id: &str) -> Result<String, OrchestratorError> {
        self.poll(job_id)?
            .result
            .ok_or_else(|| OrchestratorError::NoResult(job_id.to_string()))
    }

    pub fn pool(&self) -> WorkerPool {
        self.inner.lock().pool.clone()
    }

    pub fn queue_len(&self) -> usize {
        self.inner.lock().queue.len()
    }

    pub fn counts(&self) -> JobCounts {
        let inner = self.inner.lock();
        let mut c = JobCounts {
            submitted: inner.jobs.len(),
            ..JobCounts::default()
        };
        for j in inner.jobs.values() {
            match j.state {
                JobState::Queued => c.queued += 1,
                JobState::Running => c.running += 1,
                JobState::Done => c.done += 1,
                JobState::Failed => c.failed += 1,
            }
        }
        c
    }

    pub fn event_log(&self) -> EventLog {
        self.inner.lock().log.clone()
    }

    /// Claim the next job assigned to `worker` and mark it running.
    fn claim(&self, worker: usize) -> Option<ReconJob> {
        let mut inner = self.inner.lock();
        let job_id = inner.inbox.get_mut(worker)?.pop_front()?;
        let job = inner.jobs.get_mut(&job_id).expect("assigned job exists");
        job.state = JobState::Running;
        let snapshot = job.clone();
        inner.record(EventKind::Start, &job_id, Some(worker), None);
        Some(snapshot)
    }

    fn execute(&self, job: &ReconJob) -> Result<String, String> {
        let raw = self.vault.get(&job.dataset).map_err(|e| e.to_string())?;
        let vol = parse_kspace(&raw).map_err(|e| e.to_string())?;
        let series = self
            .registry
            .run(&job.backend_id, &vol, &job.params)
            .map_err(|e| e.to_string())?;
        let bundle = write_image_bundle(&anonymize(&series)).map_err(|e| e.to_string())?;
        self.vault.put(&bundle).map_err(|e| e.to_string())
    }

    fn finish(&self, worker: usize, job_id: &str, outcome: Result<String, String>) {
        let now = self.clock.now();
        let mut inner = self.inner.lock();
        let job = inner.jobs.get_mut(job_id).expect("running job exists");
        match outcome {
            Ok(result) => {
                job.state = JobState::Done;
                job.result = Some(result);
            }
            Err(msg) => {
                job.state = JobState::Failed;
                job.error_message = Some(msg);
            }
        }
        job.finished_at = Some(now);
        inner.pool.workers[worker].active -= 1;
        inner.record(EventKind::Finish, job_id, Some(worker), None);
        inner.dispatch();
        self.work.notify_all();
    }

    /// Run one job from `worker`'s inbox to completion. Returns the job id, or
    /// `None` if nothing was assigned to this worker.
    pub fn run_step(&self, worker: usize) -> Option<String> {
        let job = self.claim(worker)?;
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| self.execute(&job)))
            .unwrap_or_else(|_| Err("backend panicked".to_string()));
        self.finish(worker, &job.job_id, outcome);
        Some(job.job_id)
    }

    /// Run jobs on the calling thread until nothing is queued or assigned.
    pub fn drain(&self) -> usize {
        let mut ran = 0;
        loop {
            let worker = {
                let inner = self.inner.lock();
                inner.inbox.iter().position(|q| !q.is_empty())
            };
            match worker {
                Some(w) => {
                    self.run_step(w);
                    ran += 1;
                }
                None => return ran,
            }
        }
    }

    /// Block until `job_id` is terminal or `timeout` elapses.
    pub fn wait(&self, job_id: &str, timeout: std::time::Duration) -> Result<JobStatus, OrchestratorError> {
        let deadline = std::time::Instant::now() + timeout;
        let mut inner = self.inner.lock();
        loop {
            let state = inner
                .jobs
                .get(job_id)
                .ok_or_else(|| OrchestratorError::UnknownJob(job_id.to_string()))?
                .state;
            if state.is_terminal() || self.work.wait_until(&mut inner, deadline).timed_out() {
                break;
            }
        }
        drop(inner);
        self.poll(job_id)
    }

    /// Spawn one executor thread per worker slot.
    pub fn start(self: &Arc<Self>) -> Cluster {
        self.shutdown.store(false, Ordering::SeqCst);
        let pool = self.pool();
        let mut threads = Vec::new();
        for w in pool.workers() {
            for slot in 0..w.capacity {
                let me = Arc::clone(self);
                let id = w.worker_id;
                threads.push(
                    std::thread::Builder::new()
                        .name(format!("worker-{id}-{slot}"))
                        .spawn(move || me.worker_loop(id))
                        .expect("spawn worker thread"),
                );
            }
        }
        Cluster {
            orchestrator: Arc::clone(self),
            threads,
        }
    }

    fn worker_loop(&self, worker: usize) {
        loop {
            {
                let mut inner = self.inner.lock();
                while inner.inbox[worker].is_empty() && !self.shutdown.load(Ordering::SeqCst) {
                    self.work.wait(&mut inner);
                }
                if self.shutdown.load(Ordering::SeqCst) {
                    return;
                }
            }
            self.run_step(worker);
        }
    }
}

/// Running executor threads; stops and joins them on drop.
pub struct Cluster {
    orchestrator: Arc<Orchestrator>,
    threads: Vec<JoinHandle<()>>,
}

impl Cluster {
    pub fn stop(mut self) {
        self.shutdown_and_join();
    }

    fn shutdown_and_join(&mut self) {
        {
            let _guard = self.orchestrator.inner.lock();
            self.orchestrator.shutdown.store(true, Ordering::SeqCst);
            self.orchestrator.work.notify_all();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        self.shutdown_and_join();
    }
}
