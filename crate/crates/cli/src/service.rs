//! HTTP demonstration service consumed by the browser editor.
//!
//! The base dataset is read-only; submitted demonstrations are appended to
//! a JSON-lines store, one record per line, through a single locked writer.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::{Quaternion, Vector3};
use parttransfer::dataset::{Dataset, Task};
use parttransfer::inference::{embed_library, EmbeddedLibrary, Retriever};
use parttransfer::interp::pose_at;
use parttransfer::neural::EmbeddingModel;
use parttransfer::{Gripper, Trajectory, TrajectoryParseError, Waypoint};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Samples returned by the playback endpoint when none are requested.
pub const DEFAULT_PLAYBACK_SAMPLES: usize = 101;

/// A model with its library embedded once at startup.
pub struct LoadedModel {
    pub model: EmbeddingModel,
    pub library: EmbeddedLibrary,
    pool: BTreeMap<String, Trajectory>,
}

impl LoadedModel {
    pub fn new(model: EmbeddingModel, pool: Vec<Trajectory>) -> parttransfer::Result<Self> {
        let library = embed_library(&model, &pool)?;
        Ok(LoadedModel {
            model,
            library,
            pool: pool.into_iter().map(|t| (t.id().to_string(), t)).collect(),
        })
    }

    fn retrieve(&self, task: &Task) -> parttransfer::Result<Trajectory> {
        let id =
            Retriever::new(&self.model, &self.library)?.query(&task.part, &task.instruction)?;
        Ok(self.pool[id].clone())
    }
}

#[derive(Serialize, Deserialize)]
struct StoredDemo {
    task_id: String,
    trajectory: Trajectory,
}

struct StoreInner {
    file: Option<File>,
    by_task: BTreeMap<String, Vec<Trajectory>>,
}

/// Append-only store of submitted demonstrations.
pub struct DemoStore {
    path: Option<PathBuf>,
    inner: Mutex<StoreInner>,
}

impl DemoStore {
    /// Opens (or creates) a JSON-lines store, replaying existing records.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut by_task: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StoredDemo = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), n + 1),
                    )
                })?;
                by_task.entry(rec.task_id).or_default().push(rec.trajectory);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(DemoStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(StoreInner {
                file: Some(file),
                by_task,
            }),
        })
    }

    /// A store that keeps submissions in memory only.
    pub fn in_memory() -> Self {
        DemoStore {
            path: None,
            inner: Mutex::new(StoreInner {
                file: None,
                by_task: BTreeMap::new(),
            }),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends one demonstration; returns the task's stored count.
    pub fn append(&self, task_id: &str, traj: Trajectory) -> std::io::Result<usize> {
        let mut inner = self.inner.lock().expect("demo store lock poisoned");
        if let Some(file) = inner.file.as_mut() {
            let rec = StoredDemo {
                task_id: task_id.to_string(),
                trajectory: traj.clone(),
            };
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        let list = inner.by_task.entry(task_id.to_string()).or_default();
        list.push(traj);
        Ok(list.len())
    }

    pub fn list(&self, task_id: &str) -> Vec<Trajectory> {
        let inner = self.inner.lock().expect("demo store lock poisoned");
        inner.by_task.get(task_id).cloned().unwrap_or_default()
    }

    pub fn count(&self, task_id: &str) -> usize {
        let inner = self.inner.lock().expect("demo store lock poisoned");
        inner.by_task.get(task_id).map_or(0, Vec::len)
    }
}

pub struct AppState {
    dataset: Dataset,
    model: Option<LoadedModel>,
    store: DemoStore,
}

impl AppState {
    pub fn new(dataset: Dataset, model: Option<LoadedModel>, store: DemoStore) -> Self {
        AppState {
            dataset,
            model,
            store,
        }
    }

    pub fn store(&self) -> &DemoStore {
        &self.store
    }

    fn task(&self, id: &str) -> Result<&Task, Response> {
        self.dataset
            .task(id)
            .ok_or_else(|| error(StatusCode::NOT_FOUND, "unknown task", json!({ "task": id })))
    }
}

fn error(status: StatusCode, reason: &str, extra: Value) -> Response {
    let mut body = json!({ "error": reason });
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    (status, Json(body)).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(
        StatusCode::INTERNAL_SERVER_ERROR,
        "internal error",
        json!({ "detail": e.to_string() }),
    )
}

fn rejected(e: &TrajectoryParseError) -> Response {
    let index = match e {
        TrajectoryParseError::Invalid(v) => v.index(),
        TrajectoryParseError::Malformed(_) => None,
    };
    error(
        StatusCode::BAD_REQUEST,
        e.reason(),
        json!({ "detail": e.to_string(), "index": index }),
    )
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/tasks/{id}/demos", get(list_demos).post(submit_demo))
        .route("/api/tasks/{id}/infer", get(infer_task))
        .route("/api/playback", post(playback))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "tasks": s.dataset.tasks.len(),
        "model_loaded": s.model.is_some(),
        "library_size": s.model.as_ref().map_or(0, |m| m.library.len()),
    }))
}

async fn list_tasks(State(s): State<Arc<AppState>>) -> Json<Value> {
    let tasks: Vec<Value> = s
        .dataset
        .tasks
        .iter()
        .map(|t| json!({ "id": t.id, "manual_id": t.manual_id, "instruction": t.instruction }))
        .collect();
    Json(Value::Array(tasks))
}

async fn get_task(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let task = match s.task(&id) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let seed = match &s.model {
        Some(m) => match m.retrieve(task) {
            Ok(t) => t,
            Err(e) => return internal(e),
        },
        None => default_seed(),
    };
    Json(json!({
        "task": {
            "id": task.id,
            "manual_id": task.manual_id,
            "instruction": task.instruction,
            "demo_count": task.demos.len() + s.store.count(&id),
        },
        "part": task.part,
        "seed": seed,
    }))
    .into_response()
}

async fn submit_demo(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Response {
    let task = match s.task(&id) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return error(StatusCode::BAD_REQUEST, "body is not UTF-8", json!({})),
    };
    let traj = match Trajectory::from_json(text) {
        Ok(t) => t,
        Err(e) => return rejected(&e),
    };
    if let Err(e) = traj.check_part_frame_bounds() {
        return rejected(&TrajectoryParseError::Invalid(e));
    }
    let state = s.clone();
    let task_id = id.clone();
    let stored = tokio::task::spawn_blocking(move || state.store.append(&task_id, traj)).await;
    match stored {
        Ok(Ok(n)) => (
            StatusCode::CREATED,
            Json(json!({
                "task": id,
                "submitted": n,
                "demo_count": task.demos.len() + n,
            })),
        )
            .into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn list_demos(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    if let Err(r) = s.task(&id) {
        return r;
    }
    Json(s.store.list(&id)).into_response()
}

async fn infer_task(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let task = match s.task(&id) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let Some(m) = &s.model else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "no model loaded",
            json!({}),
        );
    };
    match m.retrieve(task) {
        Ok(t) => Json(t).into_response(),
        Err(e) => internal(e),
    }
}

#[derive(Deserialize)]
struct PlaybackRequest {
    trajectory: Value,
    #[serde(default)]
    samples: Option<usize>,
    #[serde(default)]
    t: Option<Vec<f64>>,
}

/// Reference poses for the editor's playback: `samples` evenly spaced
/// parameters in `[0, 1]`, or the explicit list `t`.
async fn playback(body: Bytes) -> Response {
    let req: PlaybackRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                "malformed playback request",
                json!({ "detail": e.to_string() }),
            )
        }
    };
    let traj = match Trajectory::from_json(&req.trajectory.to_string()) {
        Ok(t) => t,
        Err(e) => return rejected(&e),
    };
    let ts = match (req.t, req.samples) {
        (Some(ts), None) => ts,
        (None, n) => {
            let n = n.unwrap_or(DEFAULT_PLAYBACK_SAMPLES);
            if n < 2 {
                return error(
                    StatusCode::BAD_REQUEST,
                    "samples must be at least 2",
                    json!({}),
                );
            }
            (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
        }
        (Some(_), Some(_)) => {
            return error(
                StatusCode::BAD_REQUEST,
                "give either t or samples",
                json!({}),
            )
        }
    };
    let poses: Result<Vec<Waypoint>, _> = ts.iter().map(|&t| pose_at(&traj, t)).collect();
    match poses {
        Ok(p) => Json(json!({ "t": ts, "poses": p })).into_response(),
        Err(e) => error(
            StatusCode::BAD_REQUEST,
            "playback parameter outside [0, 1]",
            json!({ "detail": e.to_string() }),
        ),
    }
}

/// Editing seed used when no model is loaded: approach from 15 cm above
/// the part origin with the gripper pointing down, then close.
pub fn default_seed() -> Trajectory {
    let down = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    let wp = |g, z| Waypoint::new(g, Vector3::new(0.0, 0.0, z), down).expect("unit rotation");
    Trajectory::new(
        "seed-default",
        vec![
            wp(Gripper::Open, 0.15),
            wp(Gripper::Open, 0.05),
            wp(Gripper::Closed, 0.05),
        ],
    )
    .expect("non-empty")
}
