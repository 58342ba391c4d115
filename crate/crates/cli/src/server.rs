//! HTTP/JSON service backing the explorer.
//!
//! One dataset per process. Sessions are keyed by the `x-session-token`
//! header (`default` when absent); each session's mutations run under its own
//! lock. Optimizer jobs run on the blocking pool and are polled by id.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use splitlens_core::coverage::{coverage_report, diff_reports, CoverageReport, ReportDelta};
use splitlens_core::model::{Dataset, PerSet, SetLabel};
use splitlens_core::optimizer::{optimize_with_hooks, Hooks, Objective, OptimizeError, TracePoint};
use splitlens_core::session::{Session, SessionError};
use splitlens_core::splits::{find_preset, AssignmentFile, SplitAssignment, SplitError, Violation, PRESETS};
use splitlens_core::stats::FilterCriteria;
use splitlens_core::viewmodel::ViewModel;
use tokio::sync::Mutex as AsyncMutex;

use crate::commands::OptimizeSettings;

pub const SESSION_HEADER: &str = "x-session-token";
pub const API_SCHEMA_VERSION: u32 = 1;

pub struct AppState {
    dataset: Arc<Dataset>,
    initial: SplitAssignment,
    sessions: Mutex<HashMap<String, Arc<AsyncMutex<Session>>>>,
    jobs: Mutex<HashMap<u64, Arc<Job>>>,
    next_job: AtomicU64,
}

struct Job {
    session: String,
    budget: usize,
    progress: AtomicUsize,
    outcome: Mutex<Option<Result<JobResult, String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub assignment: AssignmentFile,
    pub score: f64,
    pub initial_score: f64,
    pub evaluations: usize,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub schema_version: u32,
    pub job_id: u64,
    /// `running`, `done` or `failed`.
    pub status: String,
    pub evaluations: usize,
    pub budget: usize,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

impl AppState {
    /// `initial` must be a valid assignment for `dataset`; new sessions start from it.
    pub fn new(dataset: Dataset, initial: SplitAssignment) -> Result<Arc<Self>, Vec<Violation>> {
        initial.validate(&dataset)?;
        Ok(Arc::new(AppState {
            dataset: Arc::new(dataset),
            initial,
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        }))
    }

    fn session(&self, headers: &HeaderMap) -> (String, Arc<AsyncMutex<Session>>) {
        let token = headers
            .get(SESSION_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|s| !s.is_empty())
            .unwrap_or("default")
            .to_owned();
        let mut sessions = self.sessions.lock().expect("session map lock");
        let s = sessions
            .entry(token.clone())
            .or_insert_with(|| {
                let s = Session::new(&self.dataset, self.initial.clone())
                    .expect("initial assignment validated at startup");
                Arc::new(AsyncMutex::new(s))
            })
            .clone();
        (token, s)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/viewmodel", get(get_viewmodel))
        .route("/api/split", put(put_split))
        .route("/api/split/reassign", post(reassign))
        .route("/api/split/undo", post(undo))
        .route("/api/split/redo", post(redo))
        .route("/api/filter", post(set_filter).delete(clear_filter))
        .route("/api/coverage", get(get_coverage))
        .route("/api/optimize", post(start_optimize))
        .route("/api/optimize/{id}", get(job_status))
        .route("/api/presets", get(presets))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    violations: Vec<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>, violations: Vec<Value>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            violations,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": API_SCHEMA_VERSION,
            "error": self.message,
            "violations": self.violations,
        });
        (self.status, Json(body)).into_response()
    }
}

fn violation_values(v: &[Violation]) -> Vec<Value> {
    v.iter()
        .map(|v| serde_json::to_value(v).expect("violation serializes"))
        .collect()
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Split(SplitError::UnknownSurgery(id)) => {
                ApiError::new(StatusCode::NOT_FOUND, format!("unknown surgery `{id}`"))
            }
            SessionError::Split(SplitError::UnknownPreset(name)) => {
                ApiError::new(StatusCode::NOT_FOUND, format!("unknown split preset `{name}`"))
            }
            SessionError::Split(SplitError::NoValidationSet(id)) => {
                let v = [Violation::ValWithoutValidation { surgery_id: id }];
                ApiError::bad_request("split has no validation set", violation_values(&v))
            }
            SessionError::Split(SplitError::Invalid(v)) | SessionError::Invalid(v) => {
                ApiError::bad_request("invalid assignment", violation_values(&v))
            }
            SessionError::Filter(f) => ApiError::bad_request(
                "invalid filter criteria",
                vec![json!({"kind": "invalid_filter", "message": f.to_string()})],
            ),
            e @ (SessionError::NothingToUndo | SessionError::NothingToRedo) => {
                ApiError::new(StatusCode::CONFLICT, e.to_string())
            }
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::bad_request(
            "malformed request body",
            vec![json!({"kind": "malformed_request", "message": e.to_string()})],
        )
    })
}

type ViewResult = Result<Json<ViewModel>, ApiError>;

async fn get_viewmodel(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ViewResult {
    let (_, s) = st.session(&headers);
    let s = s.lock().await;
    Ok(Json(s.view_model(&st.dataset)))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SplitBody {
    Preset {
        preset: String,
    },
    File(AssignmentFile),
}

async fn put_split(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ViewResult {
    let assignment = match parse_body::<SplitBody>(&body)? {
        SplitBody::Preset { preset } => find_preset(&preset)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown split preset `{preset}`")))?
            .assignment(),
        SplitBody::File(f) => SplitAssignment::from_file(&f)
            .map_err(|v| ApiError::bad_request("invalid assignment", violation_values(&v)))?,
    };
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.set_assignment(&st.dataset, assignment)?;
    Ok(Json(s.view_model(&st.dataset)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReassignBody {
    surgery_id: String,
    set: SetLabel,
}

async fn reassign(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ViewResult {
    let req: ReassignBody = parse_body(&body)?;
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.reassign(&st.dataset, &req.surgery_id, req.set)?;
    Ok(Json(s.view_model(&st.dataset)))
}

async fn undo(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ViewResult {
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.undo()?;
    Ok(Json(s.view_model(&st.dataset)))
}

async fn redo(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ViewResult {
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.redo()?;
    Ok(Json(s.view_model(&st.dataset)))
}

async fn set_filter(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ViewResult {
    let criteria: FilterCriteria = parse_body(&body)?;
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.set_filter(&st.dataset, criteria)?;
    Ok(Json(s.view_model(&st.dataset)))
}

async fn clear_filter(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ViewResult {
    let (_, s) = st.session(&headers);
    let mut s = s.lock().await;
    s.clear_filter();
    Ok(Json(s.view_model(&st.dataset)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResponse {
    pub schema_version: u32,
    pub coverage: CoverageReport,
    /// Change relative to the assignment replaced by the last edit.
    pub delta: Option<ReportDelta>,
}

async fn get_coverage(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Json<CoverageResponse>, ApiError> {
    let (_, s) = st.session(&headers);
    let s = s.lock().await;
    let coverage = coverage_report(&st.dataset, s.assignment());
    let delta = s.previous().map(|prev| {
        let before = coverage_report(&st.dataset, prev);
        diff_reports(&before, &coverage).expect("same dataset")
    });
    Ok(Json(CoverageResponse {
        schema_version: API_SCHEMA_VERSION,
        coverage,
        delta,
    }))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeBody {
    sizes: Option<PerSet<usize>>,
    seed: Option<u64>,
    budget: Option<usize>,
    restarts: Option<usize>,
    objective: Option<Objective>,
    /// Start from the session's current assignment (default true).
    from_current: Option<bool>,
}

async fn start_optimize(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: OptimizeBody = if body.is_empty() {
        OptimizeBody::default()
    } else {
        parse_body(&body)?
    };
    let (token, s) = st.session(&headers);
    let current = s.lock().await.assignment().clone();
    let settings = OptimizeSettings {
        sizes: req.sizes,
        seed: req.seed,
        budget: req.budget,
        restarts: req.restarts,
        objective: req.objective,
    };
    let (config, objective) = settings
        .resolve(Some(current.sizes()))
        .map_err(|e| ApiError::bad_request(e.to_string(), Vec::new()))?;
    let invalid = |e: OptimizeError| {
        ApiError::bad_request(
            e.to_string(),
            vec![json!({"kind": "invalid_search", "message": e.to_string()})],
        )
    };
    config.validate(st.dataset.surgeries().len()).map_err(invalid)?;
    objective.validate().map_err(invalid)?;
    let initial = match req.from_current.unwrap_or(true) {
        true if current.sizes() == config.sizes && current.has_validation() == (config.sizes.val > 0) => {
            Some(current)
        }
        true => {
            return Err(ApiError::bad_request(
                "configured sizes differ from the current assignment; pass from_current=false",
                Vec::new(),
            ))
        }
        false => None,
    };

    let job = {
        let mut jobs = st.jobs.lock().expect("job map lock");
        let busy = jobs
            .values()
            .any(|j| j.session == token && j.outcome.lock().expect("job lock").is_none());
        if busy {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "an optimize job is already running in this session",
            ));
        }
        let id = st.next_job.fetch_add(1, Ordering::Relaxed);
        let job = Arc::new(Job {
            session: token,
            budget: config.budget,
            progress: AtomicUsize::new(0),
            outcome: Mutex::new(None),
        });
        jobs.insert(id, job.clone());
        (id, job)
    };
    let (id, job) = job;
    let dataset = st.dataset.clone();
    tokio::task::spawn_blocking(move || {
        let hooks = Hooks {
            progress: Some(&job.progress),
            on_move: None,
        };
        let outcome = optimize_with_hooks(&dataset, &config, &objective, initial.as_ref(), hooks)
            .map(|r| JobResult {
                assignment: r.assignment.to_file(),
                score: r.score,
                initial_score: r.initial_score,
                evaluations: r.evaluations,
                trace: r.trace,
            })
            .map_err(|e| e.to_string());
        *job.outcome.lock().expect("job lock") = Some(outcome);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"schema_version": API_SCHEMA_VERSION, "job_id": id})),
    ))
}

async fn job_status(
    State(st): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Json<JobStatus>, ApiError> {
    let job = st
        .jobs
        .lock()
        .expect("job map lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))?;
    let outcome = job.outcome.lock().expect("job lock").clone();
    let evaluations = job.progress.load(Ordering::Relaxed);
    let (status, result, error) = match outcome {
        None => ("running", None, None),
        Some(Ok(r)) => ("done", Some(r), None),
        Some(Err(e)) => ("failed", None, Some(e)),
    };
    Ok(Json(JobStatus {
        schema_version: API_SCHEMA_VERSION,
        job_id: id,
        status: status.to_owned(),
        evaluations,
        budget: job.budget,
        result,
        error,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetInfo {
    pub name: String,
    pub sizes: PerSet<usize>,
    /// Whether the preset partitions the loaded dataset.
    pub applicable: bool,
    pub assignment: AssignmentFile,
}

async fn presets(State(st): State<Arc<AppState>>) -> Json<Vec<PresetInfo>> {
    Json(
        PRESETS
            .iter()
            .map(|p| {
                let a = p.assignment();
                PresetInfo {
                    name: p.name.to_owned(),
                    sizes: a.sizes(),
                    applicable: a.validate(&st.dataset).is_ok(),
                    assignment: a.to_file(),
                }
            })
            .collect(),
    )
}
