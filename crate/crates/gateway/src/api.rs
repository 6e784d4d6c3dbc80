//! Route table, wire types and handlers.

use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reconlab_core::orchestrator::{JobState, JobStatus};
use reconlab_core::rawdata::{read_image_bundle, ImageSeries, View};
use reconlab_core::recon::{BackendDescriptor, ParamValues};
use reconlab_core::stats::{group_and_report, render_tables, write_scores_csv, StatReport, ViewFilter};
use reconlab_core::study::{
    Annotation, AnnotationKind, CaseInput, Geometry, ReaderCase, Score, ScoreEntry, StudyError, StudySpec,
    StudyState, WindowLevel,
};
use reconlab_core::transfer::{ChunkAck, StoredFile, UploadManifest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::{AuthError, AuthUser, Role};
use crate::error::{ApiError, ErrorBody};
use crate::state::AppState;

/// JSON body whose rejections carry a machine-readable code.
pub struct JsonBody<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(JsonBody(v)),
            Err(e) => Err(ApiError::bad_request("malformed_body", e.body_text())),
        }
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    let body_limit = state.config.max_chunk_size as usize + (1 << 20);
    Router::new()
        .route("/auth/register", post(register))
        .route("/auth/login", post(login))
        .route("/uploads", post(begin_upload))
        .route("/uploads/{id}/chunks/{index}", put(put_chunk))
        .route("/uploads/{id}/complete", post(complete_upload))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/result", get(job_result))
        .route("/backends", get(list_backends))
        .route("/studies", post(create_study))
        .route("/studies/{id}/next", get(next_case))
        .route("/studies/{id}/cases/{cid}/scores", post(submit_scores))
        .route(
            "/studies/{id}/cases/{cid}/annotations",
            post(save_annotation).get(restore_annotations),
        )
        .route("/studies/{id}/report", get(study_report))
        .route("/studies/{id}/close", post(close_study))
        .route("/stats/{id}/scores", get(score_export))
        .route("/stats/{id}/charts", get(chart_data))
        .fallback(unknown_route)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("unknown_route", "no such route")
}

// ---- auth ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub username: String,
    pub password: String,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub email: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub username: String,
    pub role: Role,
}

async fn register(
    State(state): State<AppState>,
    JsonBody(req): JsonBody<RegisterRequest>,
) -> Result<(StatusCode, Json<RegisterResponse>), ApiError> {
    let role: Role = req.role.as_deref().unwrap_or("reader").parse()?;
    if role == Role::Admin {
        return Err(AuthError::RoleNotAllowed(role).into());
    }
    let user = blocking(move || {
        state
            .users
            .register(&req.username, &req.password, role, req.email)
            .map_err(ApiError::from)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(RegisterResponse {
            username: user.username,
            role: user.role,
        }),
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub role: Role,
    pub expires_at: u64,
}

async fn login(
    State(state): State<AppState>,
    JsonBody(req): JsonBody<LoginRequest>,
) -> Result<Json<LoginResponse>, ApiError> {
    blocking(move || {
        let user = state.users.authenticate(&req.username, &req.password)?;
        let (token, claims) = state.tokens.issue(&user)?;
        Ok(Json(LoginResponse {
            token,
            role: claims.role,
            expires_at: claims.exp,
        }))
    })
    .await
}

// ---- uploads ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadRequest {
    pub file_size: u64,
    pub file_md5: String,
    #[serde(default)]
    pub chunk_size: Option<u64>,
    #[serde(default)]
    pub chunk_md5: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadResponse {
    pub session_id: String,
    pub chunk_size: u64,
    pub chunk_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkResponse {
    pub index: u64,
    pub ack: ChunkAck,
}

async fn begin_upload(
    State(state): State<AppState>,
    user: AuthUser,
    JsonBody(req): JsonBody<UploadRequest>,
) -> Result<(StatusCode, Json<UploadResponse>), ApiError> {
    user.require(&[Role::Developer])?;
    let chunk_size = req.chunk_size.unwrap_or(state.config.chunk_size);
    if chunk_size > state.config.max_chunk_size {
        return Err(ApiError::bad_request(
            "bad_chunk_size",
            format!(
                "chunk size above the server limit of {}",
                state.config.max_chunk_size
            ),
        ));
    }
    let manifest = UploadManifest {
        file_size: req.file_size,
        chunk_size,
        chunk_count: None,
        file_md5: req.file_md5,
        chunk_md5: req.chunk_md5,
    };
    let session = state.uploads.begin_upload(manifest, &user.username)?;
    Ok((
        StatusCode::CREATED,
        Json(UploadResponse {
            session_id: session.id().to_string(),
            chunk_size,
            chunk_count: session.manifest().chunk_count(),
        }),
    ))
}

fn own_session(state: &AppState, user: &AuthUser, id: &str) -> Result<(), ApiError> {
    let session = state.uploads.session(id)?;
    if session.owner() != user.username && user.role != Role::Admin {
        return Err(reconlab_core::transfer::TransferError::UnknownSession(id.to_string()).into());
    }
    Ok(())
}

async fn put_chunk(
    State(state): State<AppState>,
    user: AuthUser,
    Path((id, index)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<ChunkResponse>, ApiError> {
    user.require(&[Role::Developer])?;
    let index: u64 = index
        .parse()
        .map_err(|_| ApiError::bad_request("bad_index", "chunk index must be a non-negative integer"))?;
    own_session(&state, &user, &id)?;
    let ack = blocking(move || Ok(state.uploads.put_chunk(&id, index, body.to_vec())?)).await?;
    Ok(Json(ChunkResponse { index, ack }))
}

async fn complete_upload(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Json<StoredFile>, ApiError> {
    user.require(&[Role::Developer])?;
    own_session(&state, &user, &id)?;
    blocking(move || {
        let stored = state.uploads.complete_upload(&id)?;
        state.add_dataset_owner(&stored.content_id, &user.username);
        Ok(Json(stored))
    })
    .await
}

// ---- jobs ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRequest {
    pub dataset: String,
    pub backend: String,
    #[serde(default)]
    pub params: ParamValues,
}

async fn submit_job(
    State(state): State<AppState>,
    user: AuthUser,
    JsonBody(req): JsonBody<JobRequest>,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    user.require(&[Role::Developer])?;
    if user.role != Role::Admin && !state.owns_dataset(&req.dataset, &user.username) {
        return Err(ApiError::not_found(
            "unknown_dataset",
            format!("dataset `{}` is not in the vault", req.dataset),
        ));
    }
    let id = state
        .orchestrator
        .submit(&req.dataset, &req.backend, &req.params, Some(&user.username))?;
    Ok((StatusCode::ACCEPTED, Json(state.orchestrator.poll(&id)?)))
}

fn own_job(state: &AppState, user: &AuthUser, id: &str) -> Result<(), ApiError> {
    let job = state.orchestrator.job(id)?;
    if user.role != Role::Admin && job.owner.as_deref() != Some(user.username.as_str()) {
        return Err(ApiError::not_found("unknown_job", format!("unknown job `{id}`")));
    }
    Ok(())
}

async fn job_status(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Json<JobStatus>, ApiError> {
    user.require(&[Role::Developer])?;
    own_job(&state, &user, &id)?;
    Ok(Json(state.orchestrator.poll(&id)?))
}

async fn job_result(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    user.require(&[Role::Developer])?;
    own_job(&state, &user, &id)?;
    let content_id = state.orchestrator.result(&id)?;
    let bytes = blocking(move || Ok(state.vault.get(&content_id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn list_backends(State(state): State<AppState>, _user: AuthUser) -> Json<Vec<BackendDescriptor>> {
    Json(state.orchestrator.registry().list_backends())
}

// ---- studies ----

/// One job id or a list of them (one per acquired view).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JobList {
    One(String),
    Many(Vec<String>),
}

impl JobList {
    pub fn ids(&self) -> Vec<String> {
        match self {
            JobList::One(id) => vec![id.clone()],
            JobList::Many(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateStudyRequest {
    #[serde(default)]
    pub title: String,
    /// method id -> finished job(s) whose images represent that method.
    pub methods: BTreeMap<String, JobList>,
    /// Display-only ground truth, aligned with the method job lists.
    #[serde(default)]
    pub reference: Option<JobList>,
    #[serde(default)]
    pub metrics: Vec<String>,
    pub readers: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub methods: Vec<String>,
    pub cases: Vec<String>,
    pub metrics: Vec<String>,
    pub readers: Vec<String>,
    pub permutation_rng: String,
    pub seed: u64,
}

fn load_series(state: &AppState, user: &AuthUser, job_id: &str) -> Result<(String, ImageSeries), ApiError> {
    own_job(state, user, job_id)?;
    let status = state.orchestrator.poll(job_id)?;
    if status.state != JobState::Done {
        return Err(ApiError::conflict(
            "job_not_done",
            format!("job `{job_id}` is {:?}, not done", status.state),
        ));
    }
    let content_id = status.result.expect("done jobs carry a result");
    let series = read_image_bundle(&state.vault.get(&content_id)?)?;
    Ok((content_id, series))
}

fn image_ref(content_id: &str, slice: usize) -> String {
    format!("{content_id}/{slice}")
}

fn build_cases(
    state: &AppState,
    user: &AuthUser,
    req: &CreateStudyRequest,
) -> Result<Vec<CaseInput>, ApiError> {
    let ragged = |msg: String| ApiError::bad_request("ragged_images", msg);
    let groups = req.methods.values().next().map(|l| l.ids().len()).unwrap_or(0);
    let mut cases = Vec::new();
    for g in 0..groups {
        let mut loaded = BTreeMap::new();
        for (method, jobs) in &req.methods {
            let ids = jobs.ids();
            let job = ids.get(g).ok_or_else(|| {
                ragged(format!(
                    "method `{method}` has {} job(s), expected {groups}",
                    ids.len()
                ))
            })?;
            loaded.insert(method.clone(), load_series(state, user, job)?);
        }
        let reference = match &req.reference {
            Some(list) => {
                let ids = list.ids();
                let job = ids
                    .get(g)
                    .ok_or_else(|| ragged("reference job list is too short".into()))?;
                Some(load_series(state, user, job)?)
            }
            None => None,
        };
        let (_, first) = loaded.values().next().expect("at least one method");
        let (w, h, n, view) = (first.width, first.height, first.slices.len(), first.view);
        let all = loaded.values().chain(reference.iter());
        for (_, s) in all {
            if (s.width, s.height, s.slices.len()) != (w, h, n) {
                return Err(ragged(format!(
                    "image sets differ in shape: {}x{}x{} vs {w}x{h}x{n}",
                    s.width,
                    s.height,
                    s.slices.len()
                )));
            }
        }
        for slice in 0..n {
            cases.push(CaseInput {
                case_id: format!("{view}-{g}-{slice:03}"),
                slice_index: slice,
                view,
                width: w,
                height: h,
                images: loaded
                    .iter()
                    .map(|(m, (cid, _))| (m.clone(), image_ref(cid, slice)))
                    .collect(),
                reference: reference.as_ref().map(|(cid, _)| image_ref(cid, slice)),
            });
        }
    }
    Ok(cases)
}

async fn create_study(
    State(state): State<AppState>,
    user: AuthUser,
    JsonBody(req): JsonBody<CreateStudyRequest>,
) -> Result<(StatusCode, Json<StudySummary>), ApiError> {
    user.require(&[Role::Developer])?;
    for r in &req.readers {
        if state.users.get(r).map(|u| u.role) != Some(Role::Reader) {
            return Err(ApiError::bad_request(
                "unknown_reader",
                format!("`{r}` is not a reader account"),
            ));
        }
    }
    blocking(move || {
        let cases = build_cases(&state, &user, &req)?;
        let spec = StudySpec {
            title: req.title,
            methods: req.methods.keys().cloned().collect(),
            cases,
            metrics: req.metrics,
            readers: req.readers,
            seed: req.seed,
        };
        let id = state.studies.create(spec)?;
        state.set_study_owner(&id, &user.username);
        let study = state.studies.get(&id)?;
        let s = study.lock();
        Ok((
            StatusCode::CREATED,
            Json(StudySummary {
                study_id: s.study_id.clone(),
                methods: s.methods.clone(),
                cases: s.cases.iter().map(|c| c.case_id.clone()).collect(),
                metrics: s.metrics.clone(),
                readers: s.readers.clone(),
                permutation_rng: s.permutation_rng.clone(),
                seed: s.seed,
            }),
        ))
    })
    .await
}

/// Access rule for study routes: the creating developer (or an admin) may
/// act on behalf of any reader; a reader only as themself.
fn acting_reader(
    state: &AppState,
    user: &AuthUser,
    study_id: &str,
    requested: Option<String>,
) -> Result<String, ApiError> {
    match user.role {
        Role::Reader => match requested {
            Some(r) if r != user.username => Err(ApiError::forbidden("readers may only act as themselves")),
            _ => Ok(user.username.clone()),
        },
        Role::Developer | Role::Admin => {
            check_study_owner(state, user, study_id)?;
            requested.ok_or_else(|| {
                ApiError::bad_request("missing_reader", "query parameter `reader` is required")
            })
        }
    }
}

fn check_study_owner(state: &AppState, user: &AuthUser, study_id: &str) -> Result<(), ApiError> {
    let owner = state
        .study_owner(study_id)
        .ok_or_else(|| ApiError::from(StudyError::UnknownStudy(study_id.to_string())))?;
    if user.role == Role::Admin || owner == user.username {
        Ok(())
    } else {
        Err(StudyError::UnknownStudy(study_id.to_string()).into())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReaderQuery {
    #[serde(default)]
    pub reader: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelImage {
    /// `None` for the reference image.
    pub position: Option<usize>,
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Little-endian u16 raster, base64.
    pub pixels: String,
}

impl PanelImage {
    pub fn decode_pixels(&self) -> Option<Vec<u16>> {
        let raw = STANDARD.decode(&self.pixels).ok()?;
        Some(
            raw.chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub case: ReaderCase,
    pub images: Vec<PanelImage>,
    pub reference: Option<PanelImage>,
    pub window: Option<WindowLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub done: usize,
    pub total: usize,
    pub case: Option<CaseView>,
}

fn load_panel(
    state: &AppState,
    image: &str,
    position: Option<usize>,
    label: String,
) -> Result<PanelImage, ApiError> {
    let (content_id, slice) = image
        .rsplit_once('/')
        .and_then(|(c, s)| Some((c, s.parse::<usize>().ok()?)))
        .ok_or_else(|| ApiError::internal(format!("malformed image reference `{image}`")))?;
    let series = read_image_bundle(&state.vault.get(content_id)?)?;
    let raster = series
        .slices
        .get(slice)
        .ok_or_else(|| ApiError::internal(format!("slice {slice} missing from `{content_id}`")))?;
    let bytes: Vec<u8> = raster.iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok(PanelImage {
        position,
        label,
        width: series.width,
        height: series.height,
        intensity_min: series.pixel_meta.intensity_min,
        intensity_max: series.pixel_meta.intensity_max,
        pixels: STANDARD.encode(bytes),
    })
}

async fn next_case(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
    Query(q): Query<ReaderQuery>,
) -> Result<Json<NextResponse>, ApiError> {
    let reader = acting_reader(&state, &user, &id, q.reader)?;
    blocking(move || {
        let study = state.studies.get(&id)?;
        let (view, images, reference, progress) = {
            let s = study.lock();
            let progress = s.progress(&reader);
            match s.next_case(&reader)? {
                None => (None, vec![], None, progress),
                Some(view) => {
                    let case = s.case(&view.case_id)?;
                    let images: Vec<(usize, String, String)> = case
                        .display_labels
                        .iter()
                        .enumerate()
                        .map(|(p, l)| (p, l.clone(), case.image_at(p).expect("bijection").to_string()))
                        .collect();
                    let reference = case.reference.clone();
                    let window = s.window(&reader, &view.case_id);
                    (Some((view, window)), images, reference, progress)
                }
            }
        };
        // images are decrypted outside the study lock
        let case = match view {
            None => None,
            Some((case, window)) => Some(CaseView {
                images: images
                    .into_iter()
                    .map(|(p, label, image)| load_panel(&state, &image, Some(p), label))
                    .collect::<Result<_, _>>()?,
                reference: reference
                    .map(|r| load_panel(&state, &r, None, "Reference".into()))
                    .transpose()?,
                case,
                window,
            }),
        };
        Ok(Json(NextResponse {
            done: progress.0,
            total: progress.1,
            case,
        }))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireScore {
    pub display_position: usize,
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresRequest {
    pub scores: Vec<WireScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresResponse {
    pub stored: usize,
    pub evaluated: bool,
}

async fn submit_scores(
    State(state): State<AppState>,
    user: AuthUser,
    Path((id, cid)): Path<(String, String)>,
    JsonBody(req): JsonBody<ScoresRequest>,
) -> Result<Json<ScoresResponse>, ApiError> {
    user.require(&[Role::Reader])?;
    let entries = req
        .scores
        .into_iter()
        .map(|s| {
            Ok(ScoreEntry {
                display_position: s.display_position,
                metric: s.metric,
                score: Score::new(s.score)?,
            })
        })
        .collect::<Result<Vec<_>, StudyError>>()?;
    let study = state.studies.get(&id)?;
    let mut s = study.lock();
    let stored = s.submit_scores(&user.username, &cid, entries, state.clock.now())?;
    Ok(Json(ScoresResponse {
        stored,
        evaluated: s.is_evaluated(&user.username, &cid),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub display_position: usize,
    pub kind: AnnotationKind,
    pub geometry: Geometry,
}

async fn save_annotation(
    State(state): State<AppState>,
    user: AuthUser,
    Path((id, cid)): Path<(String, String)>,
    JsonBody(req): JsonBody<AnnotationRequest>,
) -> Result<(StatusCode, Json<Annotation>), ApiError> {
    user.require(&[Role::Reader])?;
    let study = state.studies.get(&id)?;
    let a = study.lock().save_annotation(
        &user.username,
        &cid,
        req.display_position,
        req.kind,
        req.geometry,
        state.clock.now(),
    )?;
    Ok((StatusCode::CREATED, Json(a)))
}

async fn restore_annotations(
    State(state): State<AppState>,
    user: AuthUser,
    Path((id, cid)): Path<(String, String)>,
    Query(q): Query<ReaderQuery>,
) -> Result<Json<Vec<Annotation>>, ApiError> {
    let reader = acting_reader(&state, &user, &id, q.reader)?;
    let study = state.studies.get(&id)?;
    let list = study.lock().restore_annotations(&reader, &cid)?;
    Ok(Json(list))
}

async fn close_study(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    user.require(&[Role::Developer])?;
    check_study_owner(&state, &user, &id)?;
    let study = state.studies.get(&id)?;
    study.lock().close();
    Ok(Json(
        serde_json::json!({ "study_id": id, "state": StudyState::Closed }),
    ))
}

/// Unblinded rows, visible to the owner at any time and to assigned readers
/// once the study is closed.
fn unblinded_rows(
    state: &AppState,
    user: &AuthUser,
    id: &str,
) -> Result<Vec<reconlab_core::stats::ScoreRow>, ApiError> {
    let study = state.studies.get(id)?;
    let s = study.lock();
    match user.role {
        Role::Reader => {
            if !s.is_reader(&user.username) {
                return Err(StudyError::UnknownStudy(id.to_string()).into());
            }
            if s.state == StudyState::Open {
                return Err(StudyError::StillOpen.into());
            }
        }
        Role::Developer | Role::Admin => check_study_owner(state, user, id)?,
    }
    Ok(s.unblind())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ViewQuery {
    #[serde(default)]
    pub view: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub report: StatReport,
    /// File name -> contents, as written by report export.
    pub tables: BTreeMap<String, String>,
}

async fn study_report(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> Result<Json<ReportResponse>, ApiError> {
    let view: ViewFilter = q.view.as_deref().unwrap_or("all").parse()?;
    let rows = unblinded_rows(&state, &user, &id)?;
    blocking(move || {
        let report = group_and_report(&rows, view)?;
        let tables = render_tables(&report)
            .into_iter()
            .map(|(name, body)| (name.to_string(), body))
            .collect();
        Ok(Json(ReportResponse { report, tables }))
    })
    .await
}

async fn score_export(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let rows = unblinded_rows(&state, &user, &id)?;
    let mut buf = Vec::new();
    write_scores_csv(&rows, &mut buf)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartView {
    pub report: Option<StatReport>,
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartsResponse {
    /// Keyed by view filter name: axial, sagittal, coronal, all.
    pub views: BTreeMap<String, ChartView>,
}

async fn chart_data(
    State(state): State<AppState>,
    user: AuthUser,
    Path(id): Path<String>,
) -> Result<Json<ChartsResponse>, ApiError> {
    let rows = unblinded_rows(&state, &user, &id)?;
    blocking(move || {
        let views = ViewFilter::ALL
            .into_iter()
            .map(|v| {
                let entry = match group_and_report(&rows, v) {
                    Ok(report) => ChartView {
                        report: Some(report),
                        error: None,
                    },
                    Err(e) => {
                        let api = ApiError::from(e);
                        ChartView {
                            report: None,
                            error: Some(ErrorBody {
                                code: api.code.to_string(),
                                message: api.message,
                            }),
                        }
                    }
                };
                (v.to_string(), entry)
            })
            .collect();
        Ok(Json(ChartsResponse { views }))
    })
    .await
}

/// Views present in a series list, in first-seen order.
pub fn views_of(series: &[ImageSeries]) -> Vec<View> {
    let mut out = Vec::new();
    for s in series {
        if !out.contains(&s.view) {
            out.push(s.view);
        }
    }
    out
}
