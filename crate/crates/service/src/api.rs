//! HTTP API.
//!
//! Every body is JSON except tag-file uploads. API documents carry
//! `"schema": "photonbench/1"`; exported artifacts and fit reports keep their
//! own schema field so that they stay byte-identical to the CLI output. All
//! responses also carry an `X-Photonbench-Schema` header.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use photonbench::analysis::{fit_beam_waist, fit_g2, BeamFitConfig};
use photonbench::correlator::{normalize, HistogramSpec};
use photonbench::emitter_sample::{generate_sample, SampleSpec};
use photonbench::io::{
    histogram_to_csv, histogram_to_json, read_histogram, read_zscan_csv, scan_sidecar_json, scan_to_csv, scan_to_json,
    to_pretty_json, write_pbtg, BeamReport, G2Report, HistogramDocument, HistogramMeta,
};
use photonbench::profile::{InstrumentProfile, DEMO_FAST_FACTOR};
use photonbench::scan_engine::{
    autofocus, find_spots, plan_raster, run_hbt, run_scan, Activity, FocusResult, HbtConfig, HbtResult, ScanConfig,
    ScanImage, Session,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::error::{ApiError, ApiResult};
use crate::jobs::{Event, Job, JobKind, JobState, JobView};
use crate::workspace::{artifact_content_type, Workspace};
use crate::{correlate_files, prepare_session, Format, SessionOptions, API_SCHEMA};

pub const SCHEMA_HEADER: &str = "x-photonbench-schema";
/// Upload limit for tag files.
pub const MAX_UPLOAD_BYTES: usize = 512 << 20;
/// Signal-to-noise threshold for spots listed with a finished scan.
pub const SPOT_SNR: f64 = 5.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionDescriptor {
    pub schema: String,
    pub id: String,
    pub profile: String,
    pub sample_seed: u64,
    pub seed: u64,
    /// idle, scanning, hbt or focusing
    pub activity: String,
    pub active_job: Option<String>,
    pub created_at: String,
    pub demo_fast: bool,
    pub drift: bool,
    /// Simulated session clock (s).
    pub clock_s: f64,
    pub focus_z: f64,
    pub emitter_count: usize,
    pub jobs: Vec<String>,
}

struct Busy {
    activity: Activity,
    job: Option<String>,
}

struct SessionEntry {
    session: Session,
    created_at: String,
    options: SessionOptions,
    busy: Option<Busy>,
    jobs: Vec<String>,
}

impl SessionEntry {
    fn descriptor(&self) -> SessionDescriptor {
        let activity = match self.busy.as_ref().map(|b| b.activity) {
            None | Some(Activity::Idle) => "idle",
            Some(Activity::Scanning) => "scanning",
            Some(Activity::Hbt) => "hbt",
            Some(Activity::Focusing) => "focusing",
        };
        SessionDescriptor {
            schema: API_SCHEMA.into(),
            id: self.session.id.clone(),
            profile: self.session.profile.name.clone(),
            sample_seed: self.session.sample.spec.rng_seed,
            seed: self.session.seed,
            activity: activity.into(),
            active_job: self.busy.as_ref().and_then(|b| b.job.clone()),
            created_at: self.created_at.clone(),
            demo_fast: self.session.profile.demo_fast,
            drift: self.options.drift,
            clock_s: self.session.clock(),
            focus_z: self.session.focus_z,
            emitter_count: self.session.sample.emitters.len(),
            jobs: self.jobs.clone(),
        }
    }
}

struct Shared {
    sessions: Mutex<HashMap<String, SessionEntry>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    workspace: Workspace,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(workspace: Workspace) -> Self {
        AppState(Arc::new(Shared {
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            workspace,
        }))
    }

    pub fn workspace(&self) -> &Workspace {
        &self.0.workspace
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, SessionEntry>> {
        self.0.sessions.lock().expect("session lock")
    }

    fn job(&self, id: &str) -> ApiResult<Arc<Job>> {
        let jobs = self.0.jobs.lock().expect("job lock");
        jobs.get(id).cloned().ok_or_else(|| ApiError::not_found("job", id))
    }

    /// Mark a session busy and hand out a copy to run the acquisition on.
    fn claim(
        &self,
        id: &str,
        activity: Activity,
        kind: Option<JobKind>,
        check: impl FnOnce(&Session) -> photonbench::Result<()>,
    ) -> ApiResult<(Session, Option<Arc<Job>>)> {
        let mut sessions = self.sessions();
        let entry = sessions.get_mut(id).ok_or_else(|| ApiError::not_found("session", id))?;
        if let Some(busy) = &entry.busy {
            let what = busy.job.as_deref().map(|j| format!("job {j}")).unwrap_or_else(|| "autofocus".into());
            return Err(ApiError::from(photonbench::Error::Busy(format!(
                "session {id} already has an active acquisition ({what})"
            ))));
        }
        check(&entry.session)?;
        let job = kind.map(|k| Arc::new(Job::new(uuid::Uuid::new_v4().simple().to_string(), id.into(), k)));
        entry.busy = Some(Busy {
            activity,
            job: job.as_ref().map(|j| j.id.clone()),
        });
        if let Some(j) = &job {
            entry.jobs.push(j.id.clone());
            self.0.jobs.lock().expect("job lock").insert(j.id.clone(), j.clone());
        }
        Ok((entry.session.clone(), job))
    }

    /// Store the advanced session and clear the busy flag.
    fn release(&self, session: Session) {
        let descriptor = {
            let mut sessions = self.sessions();
            let Some(entry) = sessions.get_mut(&session.id) else {
                return;
            };
            entry.session = session;
            entry.busy = None;
            entry.descriptor()
        };
        if let Ok(text) = to_pretty_json(&descriptor) {
            let _ = self.0.workspace.write(&descriptor.id, "session.json", text.as_bytes());
        }
    }

    /// Run `work` on a blocking thread; the session is always released,
    /// falling back to its pre-run state if `work` panics.
    fn spawn_job<F>(&self, session: Session, job: Arc<Job>, work: F)
    where
        F: FnOnce(&mut Session, &Job) -> photonbench::Result<(JobState, Value)> + Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let before = session.clone();
            let mut session = session;
            let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| work(&mut session, &job)));
            match outcome {
                Ok(Ok((final_state, value))) => {
                    state.release(session);
                    job.finish(final_state, value);
                }
                Ok(Err(e)) => {
                    state.release(session);
                    job.fail(ApiError::from(e).body());
                }
                Err(_) => {
                    state.release(before);
                    job.fail(
                        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "acquisition panicked").body(),
                    );
                }
            }
        });
    }
}

/// JSON body extractor whose failures use the structured error format. An
/// empty body stands for `{}`.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request("body", e.body_text()))?;
        let text: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        serde_json::from_slice(text)
            .map(ApiJson)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "json", format!("request body: {e}")))
    }
}

/// Response with an explicit media type.
fn typed(content_type: &'static str, body: impl Into<Body>) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body.into()).into_response()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Preset(String),
    Inline(Box<InstrumentProfile>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub profile: ProfileChoice,
    pub sample: SampleSpec,
    pub seed: u64,
    pub demo_fast: bool,
    pub drift: bool,
}

impl Default for CreateSession {
    fn default() -> Self {
        let options = SessionOptions::default();
        CreateSession {
            profile: ProfileChoice::Preset("reference".into()),
            sample: SampleSpec::default(),
            seed: 0,
            demo_fast: options.demo_fast,
            drift: options.drift,
        }
    }
}

async fn create_session(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionDescriptor>)> {
    let profile = match req.profile {
        ProfileChoice::Preset(name) => InstrumentProfile::preset(&name).ok_or_else(|| {
            ApiError::bad_request("profile", format!("unknown preset {name:?}: expected reference or lowcost"))
        })?,
        ProfileChoice::Inline(p) => {
            p.validate()?;
            *p
        }
    };
    let spec = req.sample;
    let sample = tokio::task::spawn_blocking(move || generate_sample(&spec))
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "sample generation panicked"))??;
    let options = SessionOptions {
        demo_fast: req.demo_fast,
        drift: req.drift,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = prepare_session(id.clone(), profile, sample, req.seed, &options)?;

    let ws = state.workspace();
    ws.write(&id, "sample.json", session.sample.to_json()?.as_bytes())?;
    ws.write(&id, "profile.toml", session.profile.to_toml()?.as_bytes())?;
    let entry = SessionEntry {
        session,
        created_at: chrono::Utc::now().to_rfc3339(),
        options,
        busy: None,
        jobs: Vec::new(),
    };
    let descriptor = entry.descriptor();
    ws.write(&id, "session.json", to_pretty_json(&descriptor)?.as_bytes())?;
    state.sessions().insert(id, entry);
    Ok((StatusCode::CREATED, Json(descriptor)))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Value> {
    let mut list: Vec<SessionDescriptor> = state.sessions().values().map(SessionEntry::descriptor).collect();
    list.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
    Json(json!({ "schema": API_SCHEMA, "sessions": list }))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionDescriptor>> {
    let sessions = state.sessions();
    let entry = sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(entry.descriptor()))
}

async fn get_sample(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = {
        let sessions = state.sessions();
        let entry = sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
        entry.session.sample.to_json()?
    };
    Ok(typed("application/json", text))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JobAccepted {
    pub schema: String,
    pub job_id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub job_url: String,
    pub events_url: String,
}

impl JobAccepted {
    fn new(job: &Job) -> Self {
        JobAccepted {
            schema: API_SCHEMA.into(),
            job_id: job.id.clone(),
            session_id: job.session_id.clone(),
            kind: job.kind,
            job_url: format!("/jobs/{}", job.id),
            events_url: format!("/jobs/{}/events", job.id),
        }
    }
}

fn persist_scan(ws: &Workspace, id: &str, img: &ScanImage) -> photonbench::Result<Value> {
    ws.write(id, "scan.json", scan_to_json(img)?.as_bytes())?;
    ws.write(id, "scan.csv", scan_to_csv(img).as_bytes())?;
    ws.write(id, "scan.meta.json", scan_sidecar_json(img)?.as_bytes())?;
    Ok(json!({
        "image": img,
        "spots": find_spots(img, SPOT_SNR),
        "artifacts": ["scan.json", "scan.csv", "scan.meta.json"],
    }))
}

async fn start_scan(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(config): ApiJson<ScanConfig>,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    let (session, job) = state.claim(&id, Activity::Scanning, Some(JobKind::Scan), |s| {
        plan_raster(&config, &s.actuator).map(|_| ())
    })?;
    let job = job.expect("scan job");
    let accepted = JobAccepted::new(&job);
    let ws = state.workspace().clone();
    state.spawn_job(session, job, move |session, job| {
        let img = run_scan(session, &config, job.cancel_flag(), |p| {
            job.push_row(p.row, p.rows_total, p.row_counts.clone())
        })?;
        let value = persist_scan(&ws, &session.id, &img)?;
        let final_state = if img.incomplete { JobState::Cancelled } else { JobState::Completed };
        Ok((final_state, value))
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

fn persist_hbt(ws: &Workspace, id: &str, r: &HbtResult) -> photonbench::Result<Value> {
    let meta = HistogramMeta {
        position: Some(r.position),
        requested_duration_s: Some(r.requested_duration_s),
        achieved_duration_s: r.achieved_duration_s,
        incomplete: r.incomplete,
    };
    ws.write(
        id,
        "hbt.json",
        histogram_to_json(&HistogramDocument::new(r.histogram.clone(), Some(meta)))?.as_bytes(),
    )?;
    ws.write(id, "hbt.csv", histogram_to_csv(&r.histogram).as_bytes())?;
    let mut artifacts = vec!["hbt.json", "hbt.csv"];
    let (fit, fit_error) = match fit_g2::<f64>(&r.histogram) {
        Ok(fit) => {
            let report = G2Report::new(fit);
            ws.write(id, "fit.json", to_pretty_json(&report)?.as_bytes())?;
            artifacts.push("fit.json");
            (Some(report), None)
        }
        Err(e) => {
            ws.remove(id, "fit.json")?;
            (None, Some(ApiError::from(e).body()))
        }
    };
    match &r.tags {
        Some([a, b]) => {
            ws.write(id, "tags_a.pbtg", &write_pbtg(a))?;
            ws.write(id, "tags_b.pbtg", &write_pbtg(b))?;
            artifacts.extend(["tags_a.pbtg", "tags_b.pbtg"]);
        }
        None => {
            ws.remove(id, "tags_a.pbtg")?;
            ws.remove(id, "tags_b.pbtg")?;
        }
    }
    Ok(json!({
        "position": r.position,
        "requested_duration_s": r.requested_duration_s,
        "achieved_duration_s": r.achieved_duration_s,
        "incomplete": r.incomplete,
        "histogram": r.histogram,
        "drift_log": r.drift_log,
        "fit": fit,
        "fit_error": fit_error,
        "artifacts": artifacts,
    }))
}

async fn start_hbt(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(config): ApiJson<HbtConfig>,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    let (session, job) = state.claim(&id, Activity::Hbt, Some(JobKind::Hbt), |s| {
        config.validate()?;
        s.actuator.command_for(config.position).map(|_| ())
    })?;
    let job = job.expect("hbt job");
    let accepted = JobAccepted::new(&job);
    let ws = state.workspace().clone();
    state.spawn_job(session, job, move |session, job| {
        let r = run_hbt(session, &config, job.cancel_flag(), |p| {
            let histogram = normalize(&p.histogram).unwrap_or_else(|_| p.histogram.clone());
            let snapshot = json!({
                "elapsed_s": p.elapsed_s,
                "duration_s": p.duration_s,
                "histogram": histogram,
            });
            job.push_snapshot(p.elapsed_s / p.duration_s, snapshot);
        })?;
        let value = persist_hbt(&ws, &session.id, &r)?;
        let final_state = if r.incomplete { JobState::Cancelled } else { JobState::Completed };
        Ok((final_state, value))
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutofocusRequest {
    pub position: [f64; 2],
    /// Focus range (µm) around the nominal plane.
    pub z_range: [f64; 2],
    pub steps: usize,
    pub dwell_ms: f64,
}

impl Default for AutofocusRequest {
    fn default() -> Self {
        AutofocusRequest {
            position: [10.0, 10.0],
            z_range: [-5.0, 5.0],
            steps: 21,
            dwell_ms: 40.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AutofocusResponse {
    pub schema: String,
    #[serde(flatten)]
    pub result: FocusResult,
}

async fn run_autofocus(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AutofocusRequest>,
) -> ApiResult<Json<AutofocusResponse>> {
    let (session, _) = state.claim(&id, Activity::Focusing, None, |s| {
        s.actuator.command_for(req.position).map(|_| ())
    })?;
    let before = session.clone();
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let mut session = session;
        let r = autofocus(&mut session, req.position, (req.z_range[0], req.z_range[1]), req.steps, req.dwell_ms);
        worker.release(session);
        r
    })
    .await;
    match outcome {
        Ok(r) => Ok(Json(AutofocusResponse {
            schema: API_SCHEMA.into(),
            result: r?,
        })),
        Err(_) => {
            state.release(before);
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "autofocus panicked"))
        }
    }
}

async fn export(State(state): State<AppState>, Path((id, artifact)): Path<(String, String)>) -> ApiResult<Response> {
    if !state.sessions().contains_key(&id) {
        return Err(ApiError::not_found("session", &id));
    }
    let content_type = artifact_content_type(&artifact).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown artifact {artifact:?}")).with_field("artifact")
    })?;
    let bytes = state
        .workspace()
        .read(&id, &artifact)?
        .ok_or_else(|| ApiError::not_found("artifact", &artifact))?;
    let disposition = format!("attachment; filename=\"{artifact}\"");
    let mut response = typed(content_type, bytes);
    if let Ok(v) = HeaderValue::from_str(&disposition) {
        response.headers_mut().insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(response)
}

#[derive(Debug, Deserialize, Default)]
#[serde(default)]
struct SinceQuery {
    since: usize,
}

async fn get_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
) -> ApiResult<Json<JobView>> {
    Ok(Json(state.job(&id)?.view(q.since)))
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    let job = state.job(&id)?;
    if !job.state().is_final() {
        job.request_cancel();
    }
    Ok(Json(job.view(0)))
}

#[derive(Debug, Deserialize, Default)]
#[serde(default)]
struct FromQuery {
    from: u64,
}

struct EventCursor {
    job: Arc<Job>,
    rx: watch::Receiver<u64>,
    next: u64,
    pending: VecDeque<Event>,
    finished: bool,
}

/// NDJSON stream of job events starting at `seq >= from`. Ends after the
/// final event.
async fn job_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FromQuery>,
) -> ApiResult<Response> {
    let job = state.job(&id)?;
    let cursor = EventCursor {
        rx: job.subscribe(),
        job,
        next: q.from,
        pending: VecDeque::new(),
        finished: false,
    };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(e) = c.pending.pop_front() {
                c.finished |= e.is_final();
                let mut line = serde_json::to_string(&e).expect("plain data");
                line.push('\n');
                return Some((Ok::<_, Infallible>(line), c));
            }
            if c.finished {
                return None;
            }
            c.rx.borrow_and_update();
            let events = c.job.events_since(c.next);
            if let Some(last) = events.last() {
                c.next = last.seq + 1;
                c.pending.extend(events);
                continue;
            }
            // resumed past the final event
            if c.job.state().is_final() {
                return None;
            }
            if c.rx.changed().await.is_err() {
                return None;
            }
        }
    });
    let mut response = typed("application/x-ndjson", Body::from_stream(stream));
    response
        .headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    Ok(response)
}

async fn correlate_upload(mut multipart: Multipart) -> ApiResult<Response> {
    let mut a = None;
    let mut b = None;
    let mut spec = HistogramSpec::default();
    let mut duration = None;
    let mut format = Format::Json;
    let bad = |field: &str, e: &dyn std::fmt::Display| ApiError::bad_request(field, format!("{field}: {e}"));
    while let Some(field) = multipart.next_field().await.map_err(|e| bad("multipart", &e))? {
        let name = field.name().unwrap_or_default().to_owned();
        let data = field.bytes().await.map_err(|e| bad(&name, &e))?;
        let text = || String::from_utf8_lossy(&data).trim().to_owned();
        match name.as_str() {
            "a" => a = Some(data),
            "b" => b = Some(data),
            "bin_width_ps" => spec.bin_width_ps = text().parse().map_err(|e| bad(&name, &e))?,
            "bins" | "bin_count" => spec.bin_count = text().parse().map_err(|e| bad(&name, &e))?,
            "duration_ps" => duration = Some(text().parse().map_err(|e| bad(&name, &e))?),
            "format" => format = Format::parse(&text())?,
            other => return Err(ApiError::bad_request(other, format!("unexpected form field {other:?}"))),
        }
    }
    let a = a.ok_or_else(|| ApiError::bad_request("a", "missing tag file a"))?;
    let b = b.ok_or_else(|| ApiError::bad_request("b", "missing tag file b"))?;
    let text = tokio::task::spawn_blocking(move || correlate_files(&a, &b, &spec, duration, format))
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "correlation panicked"))??;
    Ok(typed(format.content_type(), text))
}

/// Body: a histogram document (JSON) or histogram CSV.
async fn fit_g2_endpoint(body: String) -> ApiResult<Response> {
    let doc = read_histogram(&body)?;
    let mut h = doc.histogram;
    if h.normalized.is_none() {
        h = normalize(&h)?;
    }
    let report = G2Report::new(fit_g2(&h)?);
    Ok(typed("application/json", to_pretty_json(&report)?))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamFitRequest {
    /// `[z_um, radius_um]` pairs.
    #[serde(default)]
    pub samples: Option<Vec<[f64; 2]>>,
    /// Alternatively a z-scan CSV.
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub wavelength_nm: Option<f64>,
    #[serde(default)]
    pub m_squared: Option<f64>,
}

async fn fit_beam_endpoint(ApiJson(req): ApiJson<BeamFitRequest>) -> ApiResult<Response> {
    let samples: Vec<(f64, f64)> = match (req.samples, req.csv) {
        (Some(s), None) => s.into_iter().map(|[z, r]| (z, r)).collect(),
        (None, Some(csv)) => read_zscan_csv(&csv)?,
        _ => return Err(ApiError::bad_request("samples", "give exactly one of samples or csv")),
    };
    let defaults = BeamFitConfig::default();
    let config = BeamFitConfig {
        wavelength_nm: req.wavelength_nm.unwrap_or(defaults.wavelength_nm),
        m_squared: req.m_squared.unwrap_or(defaults.m_squared),
    };
    let report = BeamReport::new(fit_beam_waist(&samples, &config)?);
    Ok(typed("application/json", to_pretty_json(&report)?))
}

async fn health() -> Json<Value> {
    Json(json!({ "schema": API_SCHEMA, "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn profiles() -> Json<Value> {
    let list: Vec<Value> = ["reference", "lowcost"]
        .iter()
        .map(|name| {
            let p = InstrumentProfile::preset(name).expect("preset");
            json!({ "name": name, "description": p.description, "profile": p })
        })
        .collect();
    Json(json!({ "schema": API_SCHEMA, "demo_fast_factor": DEMO_FAST_FACTOR, "profiles": list }))
}

const INDEX_HTML: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>photonbench</title></head>
<body>
<h1>photonbench</h1>
<p>The API is running. Start the server with <code>--static DIR</code> to serve a built console here.</p>
<ul>
<li><a href="/health">/health</a></li>
<li><a href="/profiles">/profiles</a></li>
<li><a href="/sessions">/sessions</a></li>
</ul>
</body></html>
"#;

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn schema_header(mut response: Response) -> Response {
    response
        .headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from_static(API_SCHEMA));
    response
}

/// The full application. With `static_dir`, files from that directory are
/// served for every path the API does not claim, including `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/profiles", get(profiles))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/sample", get(get_sample))
        .route("/sessions/{id}/scan", post(start_scan))
        .route("/sessions/{id}/hbt", post(start_hbt))
        .route("/sessions/{id}/autofocus", post(run_autofocus))
        .route("/sessions/{id}/export/{artifact}", get(export))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/jobs/{id}/events", get(job_events))
        .route(
            "/correlate",
            post(correlate_upload).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/fit/g2", post(fit_g2_endpoint))
        .route("/fit/beam", post(fit_beam_endpoint));
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)).fallback(fallback),
    };
    app.with_state(state).layer(axum::middleware::map_response(schema_header))
}

/// Serve until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
