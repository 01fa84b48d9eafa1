//! Evaluation service: a FIFO queue drained by one worker thread, a shared
//! store, and the HTTP routes around them.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;

use axum::extract::{Path as UrlPath, State as AxumState};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pairbench_core::gate::{
    gate_submission, measure_latency, Extractor, MeasuredProfile, SubmissionMeta, DEFAULT_REPS, DEFAULT_WARMUP,
};
use pairbench_core::io::load_embeddings;
use pairbench_core::metrics::{evaluate, EvalOptions, LeaderboardEntry};
use pairbench_core::{EmbeddingSet, Manifest};
use serde_json::json;

use crate::bench::{leaderboard_entry, BenchmarkConfig};
use crate::error::{HarnessError, Result};
use crate::report_json;
use crate::store::{Event, Payload, State, Store, SubmissionRecord, SubmitRequest};

pub type ExtractorFactory = Box<dyn Fn() -> Box<dyn Extractor> + Send + Sync>;

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub benchmark: BenchmarkConfig,
    pub manifest: Manifest,
    /// Extractor input per manifest record; defaults to the image id bytes.
    pub inputs: Option<Vec<Vec<u8>>>,
    pub eval: EvalOptions,
    pub latency_batch: usize,
    pub latency_warmup: usize,
    pub latency_reps: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, benchmark: BenchmarkConfig, manifest: Manifest) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            benchmark,
            manifest,
            inputs: None,
            eval: EvalOptions::default(),
            latency_batch: 8,
            latency_warmup: DEFAULT_WARMUP,
            latency_reps: DEFAULT_REPS,
        }
    }
}

struct Shared {
    config: ServiceConfig,
    store: Mutex<Store>,
    extractors: RwLock<HashMap<String, ExtractorFactory>>,
    /// Submissions handed to the worker and not yet finished.
    outstanding: Mutex<usize>,
    idle: Condvar,
}

impl Shared {
    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct Service {
    shared: Arc<Shared>,
    queue: Mutex<Option<Sender<u64>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Service {
    /// Opens the store, replays it, and re-queues unfinished submissions.
    pub fn open(config: ServiceConfig) -> Result<Arc<Service>> {
        Self::open_with_extractors(config, HashMap::new())
    }

    pub fn open_with_extractors(
        config: ServiceConfig,
        extractors: HashMap<String, ExtractorFactory>,
    ) -> Result<Arc<Service>> {
        config.benchmark.validate()?;
        if let Some(inputs) = &config.inputs {
            if inputs.len() != config.manifest.len() {
                return Err(HarnessError::Pipeline(format!(
                    "{} extractor inputs for {} manifest records",
                    inputs.len(),
                    config.manifest.len()
                )));
            }
        }
        let store = Store::open(&config.data_dir)?;
        let pending = store.unfinished();
        let shared = Arc::new(Shared {
            config,
            store: Mutex::new(store),
            extractors: RwLock::new(extractors),
            outstanding: Mutex::new(0),
            idle: Condvar::new(),
        });
        let (tx, rx) = channel::<u64>();
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("evaluation".into())
            .spawn(move || {
                for id in rx {
                    process(&worker_shared, id);
                    let mut n = worker_shared.outstanding.lock().unwrap_or_else(|p| p.into_inner());
                    *n -= 1;
                    worker_shared.idle.notify_all();
                }
            })
            .map_err(|e| HarnessError::io("evaluation worker", e))?;
        let service = Service {
            shared,
            queue: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
        };
        for id in pending {
            service.enqueue(id);
        }
        Ok(Arc::new(service))
    }

    pub fn register_extractor(&self, name: impl Into<String>, factory: ExtractorFactory) {
        self.shared
            .extractors
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(name.into(), factory);
    }

    fn enqueue(&self, id: u64) {
        *self.shared.outstanding.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        if let Some(tx) = self.queue.lock().unwrap_or_else(|p| p.into_inner()).as_ref() {
            // The worker only stops after the sender is dropped.
            let _ = tx.send(id);
        }
    }

    /// Validates and records a submission; evaluation happens later.
    pub fn submit(&self, request: SubmitRequest) -> Result<u64> {
        self.validate(&request)?;
        let id = self.shared.store().submit(request)?;
        self.enqueue(id);
        Ok(id)
    }

    fn validate(&self, r: &SubmitRequest) -> Result<()> {
        let reject = |m: String| Err(HarnessError::Rejected(m));
        if r.participant.trim().is_empty() {
            return reject("participant is empty".into());
        }
        if !self.shared.config.benchmark.subtracks.contains_key(&r.subtrack) {
            return reject(format!("unknown subtrack {:?}", r.subtrack));
        }
        if r.declared_dim == 0 {
            return reject("declared_dim must be positive".into());
        }
        match &r.payload {
            Payload::Embeddings { path, ms_per_image } => {
                if !(ms_per_image.is_finite() && *ms_per_image >= 0.0) {
                    return reject(format!("ms_per_image {ms_per_image} is not a valid latency"));
                }
                if !path.is_file() {
                    return reject(format!("embeddings file {} not found", path.display()));
                }
            }
            Payload::Extractor { name } => {
                let known = self
                    .shared
                    .extractors
                    .read()
                    .unwrap_or_else(|p| p.into_inner())
                    .contains_key(name);
                if !known {
                    return reject(format!("unknown extractor {name:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn status(&self, id: u64) -> Option<SubmissionRecord> {
        self.shared.store().record(id).cloned()
    }

    pub fn leaderboard(&self, subtrack: &str) -> Result<Vec<LeaderboardEntry>> {
        if !self.shared.config.benchmark.subtracks.contains_key(subtrack) {
            return Err(HarnessError::UnknownSubtrack(subtrack.into()));
        }
        Ok(self.shared.store().leaderboard(subtrack))
    }

    /// Contents of a stored report.
    pub fn report(&self, id: u64, protocol: &str) -> Result<String> {
        let store = self.shared.store();
        let rel = store
            .record(id)
            .and_then(|r| r.reports.get(protocol).cloned())
            .ok_or_else(|| HarnessError::Pipeline(format!("no {protocol} report for submission {id}")))?;
        store.read_report(&rel)
    }

    /// Blocks until every queued submission has finished.
    pub fn wait_idle(&self) {
        let mut n = self.shared.outstanding.lock().unwrap_or_else(|p| p.into_inner());
        while *n > 0 {
            n = self.shared.idle.wait(n).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Finishes queued work and stops the worker.
    pub fn shutdown(&self) {
        self.queue.lock().unwrap_or_else(|p| p.into_inner()).take();
        if let Some(h) = self.worker.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = h.join();
        }
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/submit", post(submit_handler))
            .route("/status/{id}", get(status_handler))
            .route("/leaderboard/{subtrack}", get(leaderboard_handler))
            .with_state(Arc::clone(self))
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

async fn submit_handler(AxumState(svc): AxumState<Arc<Service>>, body: String) -> Response {
    let request: SubmitRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed submission: {e}")),
    };
    match svc.submit(request) {
        Ok(id) => (StatusCode::ACCEPTED, Json(json!({ "id": id, "state": State::Queued }))).into_response(),
        Err(e @ HarnessError::Rejected(_)) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn status_handler(AxumState(svc): AxumState<Arc<Service>>, UrlPath(id): UrlPath<u64>) -> Response {
    match svc.status(id) {
        Some(r) => Json(r).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("no submission {id}")),
    }
}

async fn leaderboard_handler(AxumState(svc): AxumState<Arc<Service>>, UrlPath(subtrack): UrlPath<String>) -> Response {
    match svc.leaderboard(&subtrack) {
        Ok(rows) => Json(rows).into_response(),
        Err(e) => error_response(StatusCode::NOT_FOUND, e.to_string()),
    }
}

/// Runs one submission to a terminal state. Failures become `failed`
/// records; nothing is retried.
fn process(shared: &Shared, id: u64) {
    let Some(record) = shared.store().record(id).cloned() else {
        return;
    };
    if record.state.is_terminal() {
        return;
    }
    if record.state == State::Queued {
        if let Err(e) = shared.store().append(Event::Started { id }) {
            eprintln!("submission {id}: cannot record start: {e}");
            return;
        }
    }
    let event = match run(shared, &record) {
        Ok(event) => event,
        Err(e) => Event::Failed {
            id,
            error: e.to_string(),
            verdict: None,
            profile: None,
        },
    };
    if let Err(e) = shared.store().append(event) {
        eprintln!("submission {id}: cannot record result: {e}");
    }
}

fn run(shared: &Shared, record: &SubmissionRecord) -> Result<Event> {
    let cfg = &shared.config;
    let req = &record.request;
    let rules = cfg
        .benchmark
        .subtracks
        .get(&req.subtrack)
        .ok_or_else(|| HarnessError::UnknownSubtrack(req.subtrack.clone()))?;
    let meta = SubmissionMeta {
        participant: req.participant.clone(),
        declared_dim: req.declared_dim,
        model_bytes: req.model_bytes,
        digest: req.digest.clone(),
    };

    let (profile, set) = match &req.payload {
        Payload::Embeddings { path, ms_per_image } => {
            let profile = MeasuredProfile::reported(*ms_per_image);
            let verdict = gate_submission(&meta, &profile, rules);
            if !verdict.pass {
                return Ok(Event::Gated {
                    id: record.id,
                    verdict,
                    profile,
                });
            }
            (profile, load_embeddings(path, cfg.manifest.len())?)
        }
        Payload::Extractor { name } => {
            let mut extractor = {
                let map = shared.extractors.read().unwrap_or_else(|p| p.into_inner());
                let factory = map.get(name).ok_or_else(|| HarnessError::UnknownExtractor(name.clone()))?;
                factory()
            };
            let inputs = extractor_inputs(cfg);
            let probe = &inputs[..cfg.latency_batch.clamp(1, inputs.len())];
            let profile = measure_latency(&mut extractor, probe, cfg.latency_warmup, cfg.latency_reps)?;
            let verdict = gate_submission(&meta, &profile, rules);
            if !verdict.pass {
                return Ok(Event::Gated {
                    id: record.id,
                    verdict,
                    profile,
                });
            }
            let dim = extractor.declared_dim();
            let mut data = Vec::with_capacity(inputs.len() * dim);
            for (index, input) in inputs.iter().enumerate() {
                let e = extractor
                    .extract(input)
                    .map_err(|message| pairbench_core::Error::Extractor { index, message })?;
                if e.len() != dim {
                    return Err(pairbench_core::Error::ExtractorDim {
                        declared: dim,
                        emitted: e.len(),
                    }
                    .into());
                }
                data.extend(e);
            }
            (profile, EmbeddingSet::new(inputs.len(), dim, data)?.normalize()?)
        }
    };
    let verdict = gate_submission(&meta, &profile, rules);
    if set.dim() != req.declared_dim as usize {
        return Err(HarnessError::Pipeline(format!(
            "declared dim {} but embeddings have dim {}",
            req.declared_dim,
            set.dim()
        )));
    }

    let mut reports = BTreeMap::new();
    let mut files = BTreeMap::new();
    for protocol in cfg.benchmark.protocols() {
        let report = evaluate(&set, &cfg.manifest, protocol, &cfg.eval)?;
        let rel = shared.store().write_report(record.id, &protocol.name, &report_json(&report)?)?;
        files.insert(protocol.name.clone(), rel);
        reports.insert(protocol.name.clone(), report);
    }
    let entry = leaderboard_entry(&cfg.benchmark, &reports, &meta, &profile)?;
    Ok(Event::Done {
        id: record.id,
        verdict,
        profile,
        reports: files,
        entry,
    })
}

fn extractor_inputs(cfg: &ServiceConfig) -> Vec<Vec<u8>> {
    match &cfg.inputs {
        Some(v) => v.clone(),
        None => cfg
            .manifest
            .records()
            .iter()
            .map(|r| r.image_id.as_bytes().to_vec())
            .collect(),
    }
}
