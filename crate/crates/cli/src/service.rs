//! Annotation task queue and its HTTP API.
//!
//! A queue directory holds `queue.json` (task list, server side only),
//! `images/<task_id>.png`, `truth/<task_id>.png` for planted tasks, and the
//! append-only `log.jsonl`. Clients only ever see task ids, so planted tasks
//! are indistinguishable from the rest. Replaying the log reconstructs the
//! queue; every entry is fsynced before the request is acknowledged.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pointsup_core::annosim::{quality_control, AnnotationEvent, Planted, QcReport, QcStatus, Scene, TaskKind};
use pointsup_core::io::{decode_label_png, decode_rgb_png, encode_label_png, encode_rgb_png};
use pointsup_core::rng::{derive_seed, seeded};
use pointsup_core::seg::ClassCatalog;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ServeConfig;
use crate::dataset_dir::check_id;

pub const QUEUE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub task_id: String,
    pub mode: TaskKind,
    pub batch: usize,
    pub planted: bool,
    /// Dataset scene the task was made from.
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueFile {
    pub format: u32,
    pub catalog: ClassCatalog,
    pub batch_size: usize,
    pub planted_per_batch: usize,
    pub min_correct: usize,
    pub tasks: Vec<TaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogEntry {
    Issued { task_id: String },
    Completed { task_id: String, event: AnnotationEvent },
}

/// Lays out a new queue in `dir`: whole batches of `batch_size` tasks, each
/// with `planted_per_batch` tasks drawn from `planted`, shuffled within the
/// batch. Modes are assigned round-robin.
pub fn init_queue(
    dir: &Path,
    catalog: &ClassCatalog,
    unplanted: &[Scene],
    planted: &[Scene],
    cfg: &ServeConfig,
    seed: u64,
) -> Result<QueueFile> {
    cfg.validate()?;
    if dir.join("queue.json").exists() {
        bail!("{} already holds a queue", dir.display());
    }
    let (b, p) = (cfg.batch_size, cfg.planted_per_batch);
    let by_unplanted = unplanted.len().checked_div(b - p).unwrap_or(usize::MAX);
    let by_planted = planted.len().checked_div(p).unwrap_or(usize::MAX);
    let n_batches = by_unplanted.min(by_planted);
    if n_batches == 0 || n_batches == usize::MAX {
        bail!(
            "{} scenes and {} planted scenes are not enough for one batch of {b} with {p} planted",
            unplanted.len(),
            planted.len()
        );
    }
    let mut r = seeded(derive_seed(seed, "queue", 0));
    let mut pool_u: Vec<&Scene> = unplanted.iter().collect();
    let mut pool_p: Vec<&Scene> = planted.iter().collect();
    pool_u.shuffle(&mut r);
    pool_p.shuffle(&mut r);
    for sub in ["images", "truth"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut tasks = Vec::with_capacity(n_batches * b);
    for batch in 0..n_batches {
        let mut members: Vec<(&Scene, bool)> = pool_p[batch * p..(batch + 1) * p]
            .iter()
            .map(|s| (*s, true))
            .chain(pool_u[batch * (b - p)..(batch + 1) * (b - p)].iter().map(|s| (*s, false)))
            .collect();
        members.shuffle(&mut r);
        for (scene, is_planted) in members {
            let k = tasks.len();
            let task_id = format!("t{k:05}");
            fs::write(dir.join("images").join(format!("{task_id}.png")), encode_rgb_png(&scene.image)?)?;
            if is_planted {
                fs::write(dir.join("truth").join(format!("{task_id}.png")), encode_label_png(&scene.mask)?)?;
            }
            tasks.push(TaskEntry {
                task_id,
                mode: cfg.modes[k % cfg.modes.len()],
                batch,
                planted: is_planted,
                source_id: scene.id.clone(),
            });
        }
    }
    let q = QueueFile {
        format: QUEUE_FORMAT,
        catalog: catalog.clone(),
        batch_size: b,
        planted_per_batch: p,
        min_correct: cfg.min_correct,
        tasks,
    };
    fs::write(dir.join("queue.json"), serde_json::to_string_pretty(&q)? + "\n")?;
    File::create(dir.join("log.jsonl"))?.sync_all()?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
}

/// What a client sees of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: String,
    pub image_url: String,
    pub classes: Vec<ClassInfo>,
    pub mode: TaskKind,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub task_id: String,
    pub batch: usize,
    /// Set by the submission that completes a batch.
    pub qc_status: Option<QcStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProgress {
    pub batch: usize,
    pub size: usize,
    pub completed: usize,
    pub qc_status: Option<QcStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: usize,
    pub issued: usize,
    pub completed: usize,
    pub batches: Vec<BatchProgress>,
}

#[derive(Debug)]
pub enum SubmitError {
    Malformed(String),
    UnknownImage(String),
    Duplicate(String),
    NotIssued(String),
    Internal(anyhow::Error),
}

impl SubmitError {
    pub fn status(&self) -> StatusCode {
        match self {
            SubmitError::Malformed(_) => StatusCode::BAD_REQUEST,
            SubmitError::UnknownImage(_) => StatusCode::NOT_FOUND,
            SubmitError::Duplicate(_) | SubmitError::NotIssued(_) => StatusCode::CONFLICT,
            SubmitError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn message(&self) -> String {
        match self {
            SubmitError::Malformed(m) => format!("malformed event: {m}"),
            SubmitError::UnknownImage(id) => format!("unknown image {id:?}"),
            SubmitError::Duplicate(id) => format!("task {id} was already submitted"),
            SubmitError::NotIssued(id) => format!("task {id} has not been issued"),
            SubmitError::Internal(e) => format!("{e:#}"),
        }
    }
}

struct TaskState {
    entry: TaskEntry,
    width: usize,
    height: usize,
    truth: Option<Planted>,
    issued_at: Option<Instant>,
    event: Option<AnnotationEvent>,
}

pub struct Queue {
    dir: PathBuf,
    catalog: ClassCatalog,
    min_correct: usize,
    lease: Duration,
    tasks: Vec<TaskState>,
    index: HashMap<String, usize>,
    qc: BTreeMap<usize, QcReport>,
    log: File,
}

impl Queue {
    /// Loads `queue.json` and replays `log.jsonl`. A torn final line, left by
    /// a crash mid-append, is cut off; any other bad entry is an error.
    pub fn open(dir: &Path, lease: Duration) -> Result<Queue> {
        let path = dir.join("queue.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let q: QueueFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if q.format != QUEUE_FORMAT {
            bail!("{}: unsupported queue format {}", path.display(), q.format);
        }
        let mut tasks = Vec::with_capacity(q.tasks.len());
        let mut index = HashMap::new();
        for entry in q.tasks {
            check_id(&entry.task_id)?;
            let img = fs::read(dir.join("images").join(format!("{}.png", entry.task_id)))
                .with_context(|| format!("image for task {}", entry.task_id))?;
            let img = decode_rgb_png(&img)?;
            let truth = if entry.planted {
                let bytes = fs::read(dir.join("truth").join(format!("{}.png", entry.task_id)))
                    .with_context(|| format!("ground truth for task {}", entry.task_id))?;
                Some(Planted::from_mask(entry.task_id.clone(), &decode_label_png(&bytes)?, &q.catalog))
            } else {
                None
            };
            if index.insert(entry.task_id.clone(), tasks.len()).is_some() {
                bail!("duplicate task id {}", entry.task_id);
            }
            tasks.push(TaskState { width: img.width(), height: img.height(), entry, truth, issued_at: None, event: None });
        }

        let log_path = dir.join("log.jsonl");
        let raw = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < raw.len() {
            log::warn!("dropping torn final log line ({} bytes)", raw.len() - complete);
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        log.set_len(complete as u64)?;
        let mut queue = Queue {
            dir: dir.to_path_buf(),
            catalog: q.catalog,
            min_correct: q.min_correct,
            lease,
            tasks,
            index,
            qc: BTreeMap::new(),
            log,
        };
        let now = Instant::now();
        let text = std::str::from_utf8(&raw[..complete]).context("log is not UTF-8")?;
        for (i, line) in text.lines().enumerate() {
            let entry: LogEntry = serde_json::from_str(line).with_context(|| format!("log line {}", i + 1))?;
            queue.apply(entry, now).map_err(|e| anyhow::anyhow!("log line {}: {}", i + 1, e.message()))?;
        }
        Ok(queue)
    }

    fn apply(&mut self, entry: LogEntry, now: Instant) -> std::result::Result<Option<QcStatus>, SubmitError> {
        match entry {
            LogEntry::Issued { task_id } => {
                let i = *self.index.get(&task_id).ok_or(SubmitError::UnknownImage(task_id))?;
                self.tasks[i].issued_at = Some(now);
                Ok(None)
            }
            LogEntry::Completed { task_id, event } => {
                let i = self.check(&task_id, &event)?;
                self.tasks[i].event = Some(event);
                Ok(self.close_batch(self.tasks[i].entry.batch))
            }
        }
    }

    fn check(&self, task_id: &str, event: &AnnotationEvent) -> std::result::Result<usize, SubmitError> {
        let i = *self.index.get(task_id).ok_or_else(|| SubmitError::UnknownImage(task_id.to_string()))?;
        let t = &self.tasks[i];
        if t.event.is_some() {
            return Err(SubmitError::Duplicate(task_id.to_string()));
        }
        if t.issued_at.is_none() {
            return Err(SubmitError::NotIssued(task_id.to_string()));
        }
        if event.task != t.entry.mode {
            return Err(SubmitError::Malformed(format!("task {task_id} is a {} task, got {}", t.entry.mode, event.task)));
        }
        event.validate(t.width, t.height, &self.catalog).map_err(|e| SubmitError::Malformed(e.to_string()))?;
        Ok(i)
    }

    /// Grades `batch` once all its tasks are in.
    fn close_batch(&mut self, batch: usize) -> Option<QcStatus> {
        let members: Vec<&TaskState> = self.tasks.iter().filter(|t| t.entry.batch == batch).collect();
        if members.iter().any(|t| t.event.is_none()) {
            return None;
        }
        let events: Vec<AnnotationEvent> = members.iter().filter_map(|t| t.event.clone()).collect();
        let planted: Vec<Planted> = members.iter().filter_map(|t| t.truth.clone()).collect();
        let report = quality_control(&events, &planted, self.min_correct).expect("every planted task has an event");
        let status = report.status;
        log::info!("batch {batch} closed: {}/{} planted correct, {status:?}", report.correct, report.planted);
        self.qc.insert(batch, report);
        Some(status)
    }

    fn append(&mut self, entry: &LogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        Ok(())
    }

    /// Hands out the first task that is neither done nor under a live lease.
    pub fn next_task(&mut self, now: Instant) -> Result<Option<TaskDescriptor>> {
        let lease = self.lease;
        let Some(i) = self
            .tasks
            .iter()
            .position(|t| t.event.is_none() && t.issued_at.is_none_or(|at| now.duration_since(at) >= lease))
        else {
            return Ok(None);
        };
        let task_id = self.tasks[i].entry.task_id.clone();
        self.append(&LogEntry::Issued { task_id: task_id.clone() })?;
        self.tasks[i].issued_at = Some(now);
        let t = &self.tasks[i];
        Ok(Some(TaskDescriptor {
            image_url: format!("/images/{task_id}"),
            task_id,
            classes: self.catalog.object_classes().map(|c| ClassInfo { id: c, name: self.catalog.name(c) }).collect(),
            mode: t.entry.mode,
            width: t.width,
            height: t.height,
        }))
    }

    /// Validates, logs durably, then records the event.
    pub fn submit(&mut self, event: AnnotationEvent) -> std::result::Result<SubmitReply, SubmitError> {
        let task_id = event.image_id.clone();
        let i = self.check(&task_id, &event)?;
        let entry = LogEntry::Completed { task_id: task_id.clone(), event };
        self.append(&entry).map_err(SubmitError::Internal)?;
        let qc_status = self.apply(entry, Instant::now())?;
        Ok(SubmitReply { task_id, batch: self.tasks[i].entry.batch, qc_status })
    }

    pub fn image_png(&self, task_id: &str) -> Option<Result<Vec<u8>>> {
        self.index.get(task_id)?;
        Some(fs::read(self.dir.join("images").join(format!("{task_id}.png"))).map_err(Into::into))
    }

    pub fn progress(&self) -> Progress {
        let mut batches: BTreeMap<usize, BatchProgress> = BTreeMap::new();
        for t in &self.tasks {
            let b = batches.entry(t.entry.batch).or_insert(BatchProgress {
                batch: t.entry.batch,
                size: 0,
                completed: 0,
                qc_status: self.qc.get(&t.entry.batch).map(|r| r.status),
            });
            b.size += 1;
            b.completed += t.event.is_some() as usize;
        }
        Progress {
            tasks: self.tasks.len(),
            issued: self.tasks.iter().filter(|t| t.issued_at.is_some() && t.event.is_none()).count(),
            completed: self.tasks.iter().filter(|t| t.event.is_some()).count(),
            batches: batches.into_values().collect(),
        }
    }

    /// QC reports of closed batches; server side only.
    pub fn qc_reports(&self) -> &BTreeMap<usize, QcReport> {
        &self.qc
    }

    /// Completed events in queue order.
    pub fn events(&self) -> Vec<&AnnotationEvent> {
        self.tasks.iter().filter_map(|t| t.event.as_ref()).collect()
    }
}

pub type SharedQueue = Arc<Mutex<Queue>>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn lock(q: &SharedQueue) -> std::sync::MutexGuard<'_, Queue> {
    // A panic mid-request leaves the in-memory state consistent with the
    // log, since state changes only after a successful append.
    q.lock().unwrap_or_else(|e| e.into_inner())
}

async fn next_task(State(q): State<SharedQueue>) -> Response {
    match lock(&q).next_task(Instant::now()) {
        Ok(Some(t)) => Json(t).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
    }
}

async fn image(State(q): State<SharedQueue>, UrlPath(id): UrlPath<String>) -> Response {
    let id = id.strip_suffix(".png").unwrap_or(&id);
    match lock(&q).image_png(id) {
        Some(Ok(bytes)) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Some(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        None => error(StatusCode::NOT_FOUND, format!("unknown image {id:?}")),
    }
}

async fn submit(State(q): State<SharedQueue>, body: Bytes) -> Response {
    let event: AnnotationEvent = match serde_json::from_slice(&body) {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed event: {e}")),
    };
    match lock(&q).submit(event) {
        Ok(reply) => Json(reply).into_response(),
        Err(e) => error(e.status(), e.message()),
    }
}

async fn progress(State(q): State<SharedQueue>) -> Response {
    Json(lock(&q).progress()).into_response()
}

pub fn router(queue: SharedQueue) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/annotations", post(submit))
        .route("/api/progress", get(progress))
        .route("/images/{id}", get(image))
        .with_state(queue)
}

pub async fn serve(queue: SharedQueue, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("serving annotation tasks on http://{}", listener.local_addr()?);
    axum::serve(listener, router(queue))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
