//! Distributed fitness evaluation: a search-side server queues jobs and
//! pull-based workers execute them, with heartbeat-driven fault tolerance.
//!
//! Wire protocol: length-prefixed frames over TCP. Each frame is a
//! big-endian u32 payload length followed by a UTF-8 JSON object whose
//! `type` field is one of `hello`, `request_job`, `job`, `result`,
//! `heartbeat`, `shutdown`. Jobs carry dataset references and seeds, never
//! pixels; workers resolve the data locally, so a job's result is a pure
//! function of the job and the multiset of results equals sequential
//! execution. A job whose worker misses three heartbeat intervals is
//! re-queued; duplicate results are deduplicated, first one wins. Malformed
//! frames close the connection.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_dataset_ref, sample_subset};
use crate::fitness::{evaluate_block_with, FitnessConfig, FitnessResult};
use crate::netspec::{BlockSpec, MemoryBudget};
use crate::swarm::FitnessEvaluator;

const MAX_FRAME_BYTES: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(u32),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

/// Which subset of which dataset a job trains on; resolved worker-side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRef {
    pub dataset: String,
    pub seed: u64,
    pub fraction: f64,
}

/// Fitness-evaluation settings carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    pub patience: u32,
    pub max_epochs: u32,
    pub batch_size: usize,
    pub split_fraction: f64,
    pub budget_params: u64,
    pub budget_bytes: u64,
    pub seed: u64,
}

impl From<FitnessConfig> for JobConfig {
    fn from(c: FitnessConfig) -> Self {
        Self {
            patience: c.patience,
            max_epochs: c.max_epochs_cap,
            batch_size: c.batch_size,
            split_fraction: c.split_fraction,
            budget_params: c.budget.max_parameters,
            budget_bytes: c.budget.max_activation_bytes,
            seed: c.rng_seed,
        }
    }
}

impl From<JobConfig> for FitnessConfig {
    fn from(c: JobConfig) -> Self {
        Self {
            patience: c.patience,
            max_epochs_cap: c.max_epochs,
            batch_size: c.batch_size,
            split_fraction: c.split_fraction,
            budget: MemoryBudget::new(c.budget_params, c.budget_bytes),
            rng_seed: c.seed,
        }
    }
}

/// One unit of distributed work.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessJob {
    pub job_id: u64,
    pub spec: BlockSpec,
    pub subset: SubsetRef,
    pub config: FitnessConfig,
}

/// A finished job as reported over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFrame {
    pub job_id: u64,
    pub fitness: f64,
    pub epochs_trained: u32,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        worker_id: String,
    },
    RequestJob,
    Job {
        job_id: u64,
        layers: u32,
        growth: u32,
        subset: SubsetRef,
        config: JobConfig,
    },
    #[serde(rename = "result")]
    JobResult(ResultFrame),
    Heartbeat,
    Shutdown,
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let payload = serde_json::to_vec(frame).expect("frames always serialise");
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(&payload)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, ProtocolError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    serde_json::from_slice(&payload).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Timing of the liveness protocol; tests compress it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistConfig {
    pub heartbeat_interval: Duration,
    /// Missed intervals after which a worker's job is presumed lost.
    pub missed_intervals: u32,
}

impl Default for DistConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval: Duration::from_secs(10),
            missed_intervals: 3,
        }
    }
}

impl DistConfig {
    fn grace(&self) -> Duration {
        self.heartbeat_interval * self.missed_intervals
    }
}

/// Liveness bookkeeping per connected worker.
#[derive(Debug, Clone)]
pub struct WorkerStatus {
    pub worker_id: String,
    pub jobs_completed: u64,
    pub last_heartbeat: Instant,
}

struct InFlight {
    job: FitnessJob,
    deadline: Instant,
}

#[derive(Default)]
struct QueueState {
    pending: VecDeque<FitnessJob>,
    in_flight: HashMap<u64, InFlight>,
    results: HashMap<u64, ResultFrame>,
    workers: HashMap<String, WorkerStatus>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<QueueState>,
    work_ready: Condvar,
    done_ready: Condvar,
}

/// The evaluation server. Jobs go in through [`EvalServer::evaluate_batch`],
/// which blocks generation-synchronously until every job has a result.
pub struct EvalServer {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    dist: DistConfig,
    accept_handle: Option<JoinHandle<()>>,
}

impl EvalServer {
    /// Binds and starts accepting workers. Bind failures surface here.
    pub fn bind(addr: &str, dist: DistConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            state: Mutex::new(QueueState::default()),
            work_ready: Condvar::new(),
            done_ready: Condvar::new(),
        });
        let accept_shared = Arc::clone(&shared);
        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.state.lock().unwrap().shutdown {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_shared = Arc::clone(&accept_shared);
                std::thread::spawn(move || handle_worker(stream, conn_shared, dist));
            }
        });
        Ok(Self {
            shared,
            local_addr,
            dist,
            accept_handle: Some(accept_handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Queues the jobs and blocks until every one has a result; lost jobs
    /// are re-queued when their worker misses its heartbeat grace period.
    /// Results come back in job order.
    pub fn evaluate_batch(&self, jobs: Vec<FitnessJob>) -> Vec<ResultFrame> {
        let ids: Vec<u64> = jobs.iter().map(|j| j.job_id).collect();
        {
            let mut st = self.shared.state.lock().unwrap();
            for job in jobs {
                st.pending.push_back(job);
            }
            self.shared.work_ready.notify_all();
        }

        let poll = self.dist.heartbeat_interval.min(Duration::from_millis(100));
        let mut st = self.shared.state.lock().unwrap();
        loop {
            if ids.iter().all(|id| st.results.contains_key(id)) {
                break;
            }
            let (guard, _) = self
                .shared
                .done_ready
                .wait_timeout(st, poll)
                .expect("server state poisoned");
            st = guard;

            // reap jobs whose worker went silent
            let now = Instant::now();
            let expired: Vec<u64> = st
                .in_flight
                .iter()
                .filter(|(_, f)| f.deadline <= now)
                .map(|(&id, _)| id)
                .collect();
            if !expired.is_empty() {
                for id in expired {
                    if let Some(lost) = st.in_flight.remove(&id) {
                        if !st.results.contains_key(&id) {
                            st.pending.push_back(lost.job);
                        }
                    }
                }
                self.shared.work_ready.notify_all();
            }
        }
        ids.iter()
            .map(|id| st.results.remove(id).expect("result present"))
            .collect()
    }

    /// Current liveness view of every worker that said hello.
    pub fn worker_statuses(&self) -> Vec<WorkerStatus> {
        let st = self.shared.state.lock().unwrap();
        let mut v: Vec<WorkerStatus> = st.workers.values().cloned().collect();
        v.sort_by(|a, b| a.worker_id.cmp(&b.worker_id));
        v
    }

    /// Tells every worker to exit and stops accepting connections.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        {
            let mut st = self.shared.state.lock().unwrap();
            st.shutdown = true;
            self.shared.work_ready.notify_all();
        }
        // nudge the accept loop out of its blocking accept
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for EvalServer {
    fn drop(&mut self) {
        if self.accept_handle.is_some() {
            self.stop();
        }
    }
}

fn handle_worker(stream: TcpStream, shared: Arc<Shared>, dist: DistConfig) {
    let mut reader = match stream.try_clone() {
        Ok(s) => BufReader::new(s),
        Err(_) => return,
    };
    let mut writer = stream;
    let mut current_job: Option<u64> = None;
    let mut worker_id = String::new();

    let requeue_current = |current: &mut Option<u64>| {
        if let Some(id) = current.take() {
            let mut st = shared.state.lock().unwrap();
            if let Some(lost) = st.in_flight.remove(&id) {
                if !st.results.contains_key(&id) {
                    st.pending.push_back(lost.job);
                    shared.work_ready.notify_all();
                }
            }
        }
    };

    loop {
        match read_frame(&mut reader) {
            Ok(Frame::Hello { worker_id: id }) => {
                let mut st = shared.state.lock().unwrap();
                st.workers
                    .entry(id.clone())
                    .or_insert_with(|| WorkerStatus {
                        worker_id: id.clone(),
                        jobs_completed: 0,
                        last_heartbeat: Instant::now(),
                    });
                worker_id = id;
            }
            Ok(Frame::RequestJob) => {
                let job = {
                    let mut st = shared.state.lock().unwrap();
                    loop {
                        if st.shutdown {
                            drop(st);
                            let _ = write_frame(&mut writer, &Frame::Shutdown);
                            return;
                        }
                        if let Some(job) = st.pending.pop_front() {
                            st.in_flight.insert(
                                job.job_id,
                                InFlight {
                                    job: job.clone(),
                                    deadline: Instant::now() + dist.grace(),
                                },
                            );
                            break job;
                        }
                        st = shared.work_ready.wait(st).expect("server state poisoned");
                    }
                };
                let frame = Frame::Job {
                    job_id: job.job_id,
                    layers: job.spec.num_layers,
                    growth: job.spec.growth_rate,
                    subset: job.subset.clone(),
                    config: job.config.into(),
                };
                if write_frame(&mut writer, &frame).is_err() {
                    current_job = Some(job.job_id);
                    requeue_current(&mut current_job);
                    return;
                }
                current_job = Some(job.job_id);
            }
            Ok(Frame::JobResult(result)) => {
                let mut st = shared.state.lock().unwrap();
                let id = result.job_id;
                st.in_flight.remove(&id);
                // a slow worker may report a job that was already re-queued
                st.pending.retain(|j| j.job_id != id);
                st.results.entry(id).or_insert(result); // first result wins
                if let Some(w) = st.workers.get_mut(&worker_id) {
                    w.jobs_completed += 1;
                    w.last_heartbeat = Instant::now();
                }
                if current_job == Some(id) {
                    current_job = None;
                }
                shared.done_ready.notify_all();
            }
            Ok(Frame::Heartbeat) => {
                let mut st = shared.state.lock().unwrap();
                let now = Instant::now();
                if let Some(id) = current_job {
                    if let Some(f) = st.in_flight.get_mut(&id) {
                        f.deadline = now + dist.grace();
                    }
                }
                if let Some(w) = st.workers.get_mut(&worker_id) {
                    w.last_heartbeat = now;
                }
            }
            // anything unexpected or unreadable ends the connection
            Ok(_) | Err(_) => {
                requeue_current(&mut current_job);
                return;
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("failed to connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Worker-side settings.
#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub worker_id: String,
    pub data_root: PathBuf,
    pub heartbeat_interval: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            worker_id: format!("worker-{}", std::process::id()),
            data_root: PathBuf::from("."),
            heartbeat_interval: Duration::from_secs(10),
        }
    }
}

/// Runs the worker loop: request a job, resolve its dataset locally,
/// evaluate, report, repeat. Returns cleanly when the server says shutdown
/// or closes the connection.
pub fn work(server_address: &str, options: &WorkerOptions) -> Result<(), WorkerError> {
    let stream = TcpStream::connect(server_address).map_err(|source| WorkerError::Connect {
        addr: server_address.to_string(),
        source,
    })?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    write_frame(
        &mut writer,
        &Frame::Hello {
            worker_id: options.worker_id.clone(),
        },
    )?;

    loop {
        write_frame(&mut writer, &Frame::RequestJob)?;
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            // server gone: exit cleanly
            Err(ProtocolError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        };
        match frame {
            Frame::Job {
                job_id,
                layers,
                growth,
                subset,
                config,
            } => {
                let result = execute_job(
                    job_id,
                    BlockSpec::new(layers, growth),
                    &subset,
                    config.into(),
                    options,
                    &mut writer,
                );
                write_frame(&mut writer, &Frame::JobResult(result))?;
            }
            Frame::Shutdown => return Ok(()),
            other => {
                return Err(ProtocolError::Malformed(format!(
                    "unexpected frame from server: {other:?}"
                ))
                .into())
            }
        }
    }
}

/// Evaluates one job, sending heartbeats between epochs. Unknown dataset
/// references report a failed job with zero fitness rather than erroring.
fn execute_job(
    job_id: u64,
    spec: BlockSpec,
    subset_ref: &SubsetRef,
    config: FitnessConfig,
    options: &WorkerOptions,
    writer: &mut TcpStream,
) -> ResultFrame {
    let dataset = match load_dataset_ref(&subset_ref.dataset, &options.data_root) {
        Ok(d) => d,
        Err(_) => {
            return ResultFrame {
                job_id,
                fitness: 0.0,
                epochs_trained: 0,
                failure: Some("dataset_unavailable".to_string()),
            }
        }
    };
    let subset = match sample_subset(&dataset, subset_ref.fraction, subset_ref.seed) {
        Ok(s) => s,
        Err(_) => {
            return ResultFrame {
                job_id,
                fitness: 0.0,
                epochs_trained: 0,
                failure: Some("dataset_unavailable".to_string()),
            }
        }
    };

    let mut last_beat = Instant::now();
    let result: FitnessResult = evaluate_block_with(spec, &subset, &config, |_, _| {
        if last_beat.elapsed() >= options.heartbeat_interval {
            let _ = write_frame(writer, &Frame::Heartbeat);
            last_beat = Instant::now();
        }
    });
    ResultFrame {
        job_id,
        fitness: result.fitness,
        epochs_trained: result.epochs_trained,
        failure: result.failure.map(|f| f.as_str().to_string()),
    }
}

/// Adapts the server into the swarm's generation-synchronous evaluator: each
/// batch of decoded blocks becomes one batch of jobs, and fitness values
/// come back in block order.
pub struct DistributedEvaluator<'a> {
    server: &'a EvalServer,
    subset: SubsetRef,
    config: FitnessConfig,
    next_job_id: u64,
    pub jobs_dispatched: u64,
}

impl<'a> DistributedEvaluator<'a> {
    pub fn new(server: &'a EvalServer, subset: SubsetRef, config: FitnessConfig) -> Self {
        Self {
            server,
            subset,
            config,
            next_job_id: 1,
            jobs_dispatched: 0,
        }
    }
}

impl FitnessEvaluator for DistributedEvaluator<'_> {
    fn evaluate_batch(&mut self, specs: &[BlockSpec]) -> Vec<f64> {
        let jobs: Vec<FitnessJob> = specs
            .iter()
            .map(|&spec| {
                let job_id = self.next_job_id;
                self.next_job_id += 1;
                FitnessJob {
                    job_id,
                    spec,
                    subset: self.subset.clone(),
                    config: self.config,
                }
            })
            .collect();
        self.jobs_dispatched += jobs.len() as u64;
        self.server
            .evaluate_batch(jobs)
            .into_iter()
            .map(|r| r.fitness)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_ref;
    use crate::fitness::evaluate_block;

    fn test_dist() -> DistConfig {
        DistConfig {
            heartbeat_interval: Duration::from_millis(50),
            missed_intervals: 3,
        }
    }

    fn quick_config(seed: u64) -> FitnessConfig {
        FitnessConfig {
            patience: 1,
            max_epochs_cap: 2,
            batch_size: 8,
            rng_seed: seed,
            ..Default::default()
        }
    }

    fn quick_subset() -> SubsetRef {
        SubsetRef {
            dataset: synthetic_ref(2, 8, 8, 0.5, 42),
            seed: 7,
            fraction: 1.0,
        }
    }

    fn spawn_worker(addr: SocketAddr, id: &str) -> JoinHandle<Result<(), WorkerError>> {
        let options = WorkerOptions {
            worker_id: id.to_string(),
            data_root: PathBuf::from("."),
            heartbeat_interval: Duration::from_millis(20),
        };
        std::thread::spawn(move || work(&addr.to_string(), &options))
    }

    #[test]
    fn frame_json_matches_the_wire_contract() {
        let frame = Frame::Job {
            job_id: 9,
            layers: 23,
            growth: 27,
            subset: SubsetRef {
                dataset: "synthetic:classes=2,per_class=4,size=8,difficulty=0,seed=1".into(),
                seed: 3,
                fraction: 0.1,
            },
            config: JobConfig {
                patience: 5,
                max_epochs: 50,
                batch_size: 64,
                split_fraction: 0.8,
                budget_params: 1000,
                budget_bytes: 2000,
                seed: 11,
            },
        };
        let json: serde_json::Value =
            serde_json::from_slice(&serde_json::to_vec(&frame).unwrap()).unwrap();
        assert_eq!(json["type"], "job");
        assert_eq!(json["job_id"], 9);
        assert_eq!(json["layers"], 23);
        assert_eq!(json["growth"], 27);
        assert!(json["subset"]["dataset"].as_str().unwrap().starts_with("synthetic:"));
        assert_eq!(json["config"]["patience"], 5);
        assert_eq!(json["config"]["budget_bytes"], 2000);

        let result = Frame::JobResult(ResultFrame {
            job_id: 9,
            fitness: 0.5,
            epochs_trained: 3,
            failure: None,
        });
        let json: serde_json::Value =
            serde_json::from_slice(&serde_json::to_vec(&result).unwrap()).unwrap();
        assert_eq!(json["type"], "result");
        assert_eq!(json["fitness"], 0.5);

        for f in [Frame::Hello { worker_id: "w".into() }, Frame::RequestJob, Frame::Heartbeat, Frame::Shutdown] {
            let mut buf = Vec::new();
            write_frame(&mut buf, &f).unwrap();
            let back = read_frame(&mut buf.as_slice()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn fitness_values_survive_the_wire_bit_exactly() {
        // 1 - 31/40 is a value whose shortest decimal form trips up
        // best-effort float parsing; the frame codec must round-trip it
        let awkward = 1.0 - 31.0 / 40.0;
        let frame = Frame::JobResult(ResultFrame {
            job_id: 1,
            fitness: awkward,
            epochs_trained: 3,
            failure: None,
        });
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        let Frame::JobResult(back) = read_frame(&mut buf.as_slice()).unwrap() else {
            panic!("expected a result frame");
        };
        assert_eq!(back.fitness.to_bits(), awkward.to_bits());
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&10u32.to_be_bytes());
        buf.extend_from_slice(b"not json!!");
        assert!(matches!(
            read_frame(&mut buf.as_slice()),
            Err(ProtocolError::Malformed(_))
        ));
        let huge = (MAX_FRAME_BYTES + 1).to_be_bytes();
        let mut buf = huge.to_vec();
        buf.extend_from_slice(&[0; 16]);
        assert!(matches!(
            read_frame(&mut buf.as_slice()),
            Err(ProtocolError::FrameTooLarge(_))
        ));
    }

    #[test]
    fn one_worker_matches_sequential_execution() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let worker = spawn_worker(server.local_addr(), "w0");

        let subset_ref = quick_subset();
        let config = quick_config(3);
        let specs = [
            BlockSpec::new(1, 4),
            BlockSpec::new(2, 4),
            BlockSpec::new(1, 6),
            BlockSpec::new(2, 6),
            BlockSpec::new(1, 5),
        ];
        let jobs: Vec<FitnessJob> = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| FitnessJob {
                job_id: i as u64 + 1,
                spec,
                subset: subset_ref.clone(),
                config,
            })
            .collect();
        let results = server.evaluate_batch(jobs);
        assert_eq!(results.len(), 5);

        // sequential oracle
        let dataset = load_dataset_ref(&subset_ref.dataset, std::path::Path::new(".")).unwrap();
        let subset = sample_subset(&dataset, subset_ref.fraction, subset_ref.seed).unwrap();
        for (i, &spec) in specs.iter().enumerate() {
            let expected = evaluate_block(spec, &subset, &config);
            assert_eq!(results[i].job_id, i as u64 + 1);
            assert_eq!(results[i].fitness, expected.fitness, "spec {spec}");
            assert_eq!(results[i].epochs_trained, expected.epochs_trained);
        }

        let statuses = server.worker_statuses();
        assert_eq!(statuses.len(), 1);
        assert_eq!(statuses[0].jobs_completed, 5);

        server.shutdown();
        worker.join().unwrap().unwrap();
    }

    #[test]
    fn unknown_dataset_scores_zero_with_failure_tag() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let worker = spawn_worker(server.local_addr(), "w0");
        let jobs = vec![FitnessJob {
            job_id: 1,
            spec: BlockSpec::new(1, 4),
            subset: SubsetRef {
                dataset: "cifar10:not-here.bin".into(),
                seed: 0,
                fraction: 0.5,
            },
            config: quick_config(0),
        }];
        let results = server.evaluate_batch(jobs);
        assert_eq!(results[0].fitness, 0.0);
        assert_eq!(results[0].failure.as_deref(), Some("dataset_unavailable"));
        server.shutdown();
        worker.join().unwrap().unwrap();
    }

    #[test]
    fn over_budget_jobs_report_their_tag() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let worker = spawn_worker(server.local_addr(), "w0");
        let mut config = quick_config(0);
        config.budget = MemoryBudget::new(1, 1);
        let jobs = vec![FitnessJob {
            job_id: 5,
            spec: BlockSpec::new(2, 8),
            subset: quick_subset(),
            config,
        }];
        let results = server.evaluate_batch(jobs);
        assert_eq!(results[0].fitness, 0.0);
        assert_eq!(results[0].failure.as_deref(), Some("over_budget"));
        server.shutdown();
        worker.join().unwrap().unwrap();
    }

    #[test]
    fn batch_waits_for_a_worker_to_appear() {
        let server = Arc::new(EvalServer::bind("127.0.0.1:0", test_dist()).unwrap());
        let addr = server.local_addr();
        let jobs = vec![FitnessJob {
            job_id: 1,
            spec: BlockSpec::new(1, 4),
            subset: quick_subset(),
            config: quick_config(1),
        }];
        let srv = Arc::clone(&server);
        let waiter = std::thread::spawn(move || srv.evaluate_batch(jobs));
        std::thread::sleep(Duration::from_millis(150));
        assert!(!waiter.is_finished(), "batch must wait with no workers");
        let worker = spawn_worker(addr, "late");
        let results = waiter.join().unwrap();
        assert_eq!(results.len(), 1);
        assert!(results[0].failure.is_none());
        Arc::try_unwrap(server).ok().unwrap().shutdown();
        worker.join().unwrap().unwrap();
    }

    /// A client that takes a job and silently dies; the job must be
    /// re-queued after the grace period and finished by a real worker.
    #[test]
    fn crashed_worker_job_is_requeued() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let addr = server.local_addr();
        let (took_job_tx, took_job_rx) = std::sync::mpsc::channel();

        // grabs the first job, then vanishes without reporting
        let saboteur = std::thread::spawn(move || {
            let stream = TcpStream::connect(addr).unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            write_frame(&mut writer, &Frame::Hello { worker_id: "dead".into() }).unwrap();
            write_frame(&mut writer, &Frame::RequestJob).unwrap();
            let frame = read_frame(&mut reader).unwrap();
            assert!(matches!(frame, Frame::Job { .. }));
            took_job_tx.send(()).unwrap();
        });

        // the real worker only connects once the saboteur holds the job
        let worker = std::thread::spawn(move || {
            took_job_rx.recv().unwrap();
            let options = WorkerOptions {
                worker_id: "alive".into(),
                data_root: PathBuf::from("."),
                heartbeat_interval: Duration::from_millis(20),
            };
            work(&addr.to_string(), &options)
        });

        let jobs = vec![FitnessJob {
            job_id: 1,
            spec: BlockSpec::new(1, 4),
            subset: quick_subset(),
            config: quick_config(2),
        }];
        let results = server.evaluate_batch(jobs);
        assert_eq!(results.len(), 1);
        assert!(results[0].failure.is_none());
        assert!(results[0].fitness >= 0.0);
        saboteur.join().unwrap();
        server.shutdown();
        worker.join().unwrap().unwrap();
    }

    /// Two results for the same job id: the first one wins.
    #[test]
    fn duplicate_results_are_deduplicated() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let addr = server.local_addr();

        let fake = std::thread::spawn(move || {
            let stream = TcpStream::connect(addr).unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut writer = stream;
            write_frame(&mut writer, &Frame::Hello { worker_id: "f".into() }).unwrap();
            write_frame(&mut writer, &Frame::RequestJob).unwrap();
            let Frame::Job { job_id, .. } = read_frame(&mut reader).unwrap() else {
                panic!("expected job");
            };
            for fitness in [0.25, 0.75] {
                write_frame(
                    &mut writer,
                    &Frame::JobResult(ResultFrame {
                        job_id,
                        fitness,
                        epochs_trained: 1,
                        failure: None,
                    }),
                )
                .unwrap();
            }
        });

        let jobs = vec![FitnessJob {
            job_id: 77,
            spec: BlockSpec::new(1, 4),
            subset: quick_subset(),
            config: quick_config(3),
        }];
        let results = server.evaluate_batch(jobs);
        fake.join().unwrap();
        assert_eq!(results[0].fitness, 0.25, "first result must win");
        server.shutdown();
    }

    #[test]
    fn three_workers_share_a_batch() {
        let server = EvalServer::bind("127.0.0.1:0", test_dist()).unwrap();
        let addr = server.local_addr();
        let workers: Vec<_> = (0..3).map(|i| spawn_worker(addr, &format!("w{i}"))).collect();

        let config = quick_config(9);
        let subset_ref = quick_subset();
        let jobs: Vec<FitnessJob> = (0..9)
            .map(|i| FitnessJob {
                job_id: i + 1,
                spec: BlockSpec::new(1 + (i % 2) as u32, 4 + (i % 3) as u32),
                subset: subset_ref.clone(),
                config,
            })
            .collect();
        let expected_jobs = jobs.clone();
        let results = server.evaluate_batch(jobs);
        assert_eq!(results.len(), 9);

        // every job answered deterministically regardless of which worker ran it
        let dataset = load_dataset_ref(&subset_ref.dataset, std::path::Path::new(".")).unwrap();
        let subset = sample_subset(&dataset, subset_ref.fraction, subset_ref.seed).unwrap();
        for (job, result) in expected_jobs.iter().zip(&results) {
            let expected = evaluate_block(job.spec, &subset, &config);
            assert_eq!(result.fitness, expected.fitness);
        }
        server.shutdown();
        for w in workers {
            w.join().unwrap().unwrap();
        }
    }
}
